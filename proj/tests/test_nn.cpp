#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "itdm/nn.hpp"
#include "oracles.hpp"

using namespace itdm;
using namespace itdm::nn;

namespace {

std::vector<int> labels_for(std::size_t m, std::size_t k) {
    std::vector<int> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = static_cast<int>((3 * i + 1) % k);
    return y;
}

// Checks every parameter's gradient of CE(logits) + ⟨extra, features⟩.
void check_full_gradient(Model model, const Tensor& x, const std::vector<int>& y, const Tensor* extra) {
    const ForwardCache cache = forward(model, x);
    const CrossEntropy ce = softmax_cross_entropy(cache.logits, y);
    const GradientSet grads = backward(model, cache, &ce.dlogits, extra);
    const auto objective = [&] {
        const ForwardCache c = forward(model, x);
        double v = softmax_cross_entropy(c.logits, y).loss;
        if (extra) {
            for (std::size_t i = 0; i < extra->size(); ++i) v += (*extra)[i] * c.features[i];
        }
        return v;
    };
    auto params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        CAPTURE(p);
        const Tensor numeric = oracle::central_difference(objective, *params[p], 1e-5);
        CHECK(oracle::max_rel_error(grads.tensors[p], numeric) < 1e-4);
    }
}

Model one_layer_model() {
    Model m;
    m.spec = ArchSpec{ArchKind::mlp, {2}, 2, 2};
    m.extractor.emplace_back(DenseLayer{2, 2, true, Tensor::identity(2), Tensor({2})});
    m.classifier = DenseLayer{2, 2, false, Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0.5, -0.5})};
    return m;
}

}  // namespace

TEST_CASE("forward: zero network gives uniform predictions") {
    Rng rng(1);
    Model m = default_architecture(ArchKind::mlp, {5}, 4, 10, rng);
    for (Tensor* p : m.parameters()) p->fill(0.0);
    Rng data_rng(2);
    const ForwardCache c = forward(m, oracle::random_matrix(3, 5, data_rng));
    CHECK(max_abs(c.logits) == 0.0);
    const Tensor p = softmax(c.logits);
    for (double v : p.values()) CHECK(v == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("forward: hand-computed single dense layer") {
    const Model m = one_layer_model();
    const ForwardCache c = forward(m, Tensor::matrix({{1.0, -2.0}, {0.5, 3.0}}));
    CHECK(c.features == Tensor::matrix({{1.0, 0.0}, {0.5, 3.0}}));
    CHECK(c.logits == Tensor::matrix({{1.5, 1.5}, {10.0, 12.5}}));
    CHECK_THROWS_AS(forward(m, Tensor::matrix({{1.0, 2.0, 3.0}})), ShapeError);
}

TEST_CASE("forward is deterministic for a fixed seed") {
    Rng a(77), b(77);
    const Model ma = default_architecture(ArchKind::smallcnn, {1, 8, 8}, 5, 3, a);
    const Model mb = default_architecture(ArchKind::smallcnn, {1, 8, 8}, 5, 3, b);
    CHECK(parameter_hash(ma) == parameter_hash(mb));
    Rng data_rng(3);
    const Tensor x = oracle::random_matrix(4, 64, data_rng);
    CHECK(forward(ma, x).logits == forward(mb, x).logits);
}

TEST_CASE("softmax_cross_entropy") {
    const std::vector<int> y{3, 7};
    const CrossEntropy uniform = softmax_cross_entropy(Tensor({2, 10}, 1.25), y);
    CHECK(uniform.loss == doctest::Approx(std::log(10.0)).epsilon(1e-15));

    Tensor peaked({2, 10});
    peaked.at(0, 3) = 800.0;
    peaked.at(1, 7) = 800.0;
    CHECK(softmax_cross_entropy(peaked, y).loss < 1e-300);
    CHECK(softmax_cross_entropy(peaked, y).loss >= 0.0);

    Rng rng(4);
    Tensor logits = oracle::random_matrix(5, 4, rng, 3.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    const CrossEntropy ce = softmax_cross_entropy(logits, labels);
    const Tensor numeric =
        oracle::central_difference([&] { return softmax_cross_entropy(logits, labels).loss; }, logits, 1e-6);
    CHECK(oracle::max_rel_error(ce.dlogits, numeric) < 1e-6);

    const Tensor p = softmax(logits);
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (double v : p.row(r)) s += v;
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4}), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>{0, 1}), ShapeError);
}

TEST_CASE("backward matches finite differences on the full network") {
    SUBCASE("mlp, pure cross-entropy") {
        Rng rng(10);
        const Model m = default_architecture(ArchKind::mlp, {6}, 5, 3, rng);
        check_full_gradient(m, oracle::random_matrix(4, 6, rng), labels_for(4, 3), nullptr);
    }
    SUBCASE("mlp, with a feature-layer signal") {
        Rng rng(11);
        const Model m = default_architecture(ArchKind::mlp, {6}, 5, 3, rng);
        const Tensor extra = oracle::random_matrix(4, 5, rng, 0.3);
        check_full_gradient(m, oracle::random_matrix(4, 6, rng), labels_for(4, 3), &extra);
    }
    SUBCASE("smallcnn, pure cross-entropy") {
        Rng rng(12);
        const Model m = default_architecture(ArchKind::smallcnn, {1, 8, 8}, 6, 3, rng);
        check_full_gradient(m, oracle::random_matrix(4, 64, rng), labels_for(4, 3), nullptr);
    }
    SUBCASE("smallcnn, two input channels, with a feature-layer signal") {
        Rng rng(13);
        const Model m = default_architecture(ArchKind::smallcnn, {2, 4, 8}, 4, 2, rng);
        const Tensor extra = oracle::random_matrix(4, 4, rng, 0.3);
        check_full_gradient(m, oracle::random_matrix(4, 64, rng), labels_for(4, 2), &extra);
    }
}

TEST_CASE("backward: feature-only signal leaves the classifier untouched") {
    Rng rng(20);
    const Model m = default_architecture(ArchKind::mlp, {4}, 3, 2, rng);
    const ForwardCache c = forward(m, oracle::random_matrix(5, 4, rng));
    const Tensor extra = oracle::random_matrix(5, 3, rng);
    const GradientSet g = backward(m, c, nullptr, &extra);
    const std::size_t n = g.tensors.size();
    CHECK(max_abs(g.tensors[n - 2]) == 0.0);
    CHECK(max_abs(g.tensors[n - 1]) == 0.0);
    CHECK(max_abs(g.tensors[0]) > 0.0);
    CHECK_THROWS_AS(backward(m, c, nullptr, nullptr), std::invalid_argument);
}

TEST_CASE("backward is linear in its two signals") {
    Rng rng(21);
    for (ArchKind kind : {ArchKind::mlp, ArchKind::smallcnn}) {
        const Shape in = kind == ArchKind::mlp ? Shape{16} : Shape{1, 4, 4};
        const Model m = default_architecture(kind, in, 4, 3, rng);
        const ForwardCache c = forward(m, oracle::random_matrix(6, 16, rng));
        const CrossEntropy ce = softmax_cross_entropy(c.logits, labels_for(6, 3));
        const Tensor extra = oracle::random_matrix(6, 4, rng);
        const GradientSet both = backward(m, c, &ce.dlogits, &extra);
        GradientSet parts = backward(m, c, &ce.dlogits, nullptr);
        parts += backward(m, c, nullptr, &extra);
        for (std::size_t i = 0; i < both.tensors.size(); ++i) CHECK(max_abs_diff(both.tensors[i], parts.tensors[i]) < 1e-12);
    }
}

TEST_CASE("backward rejects a stale cache") {
    Rng rng(22);
    Model m = default_architecture(ArchKind::mlp, {3}, 2, 2, rng);
    const ForwardCache c = forward(m, oracle::random_matrix(2, 3, rng));
    const CrossEntropy ce = softmax_cross_entropy(c.logits, std::vector<int>{0, 1});
    SgdMomentum opt(m, 0.1, 0.0);
    opt.step(m, backward(m, c, &ce.dlogits, nullptr));
    CHECK_THROWS_AS(backward(m, c, &ce.dlogits, nullptr), CacheError);
}

TEST_CASE("sgd_momentum_step") {
    const auto scalar_model = [](double w) {
        Model m = one_layer_model();
        m.extractor.clear();
        m.spec = ArchSpec{ArchKind::mlp, {1}, 1, 1};
        m.classifier = DenseLayer{1, 1, false, Tensor({1, 1}, w), Tensor({1})};
        return m;
    };
    const auto grads_of = [](double g) {
        GradientSet gs;
        gs.tensors = {Tensor({1, 1}, g), Tensor({1})};
        return gs;
    };

    SUBCASE("no momentum is plain gradient descent") {
        Model m = scalar_model(1.0);
        SgdMomentum opt(m, 0.1, 0.0);
        opt.step(m, grads_of(2.0));
        CHECK(m.classifier.weight[0] == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("zero gradient still moves by -lr*mu*v") {
        Model m = scalar_model(1.0);
        SgdMomentum opt(m, 0.1, 0.5);
        opt.step(m, grads_of(2.0));  // v = 2, w = 0.8
        opt.step(m, grads_of(0.0));  // v = 1, w = 0.7
        CHECK(m.classifier.weight[0] == doctest::Approx(0.7).epsilon(1e-14));
    }
    SUBCASE("two steps on f(w) = w^2/2 follow the scalar recurrence") {
        const double lr = 0.3, mu = 0.5;
        Model m = scalar_model(2.0);
        SgdMomentum opt(m, lr, mu);
        double w = 2.0, v = 0.0;
        for (int k = 0; k < 2; ++k) {
            opt.step(m, grads_of(m.classifier.weight[0]));
            v = mu * v + w;
            w -= lr * v;
        }
        CHECK(m.classifier.weight[0] == w);  // 2 - 0.6 = 1.4; v = 2.4, w = 0.68
        CHECK(w == doctest::Approx(0.68).epsilon(1e-14));
    }
    SUBCASE("non-finite parameters are rejected") {
        Model m = scalar_model(1.0);
        SgdMomentum opt(m, 0.1, 0.0);
        CHECK_THROWS_AS(opt.step(m, grads_of(std::numeric_limits<double>::infinity())), NonFiniteError);
    }
    SUBCASE("shape mismatch") {
        Model m = scalar_model(1.0);
        SgdMomentum opt(m, 0.1, 0.0);
        GradientSet bad;
        bad.tensors = {Tensor({2}), Tensor({1})};
        CHECK_THROWS_AS(opt.step(m, bad), ShapeError);
    }
}

TEST_CASE("a small SGD step does not increase the batch loss") {
    Rng rng(30);
    for (ArchKind kind : {ArchKind::mlp, ArchKind::smallcnn}) {
        const Shape in = kind == ArchKind::mlp ? Shape{16} : Shape{1, 4, 4};
        Model m = default_architecture(kind, in, 4, 3, rng);
        const Tensor x = oracle::random_matrix(8, 16, rng);
        const auto y = labels_for(8, 3);
        const ForwardCache c = forward(m, x);
        const CrossEntropy ce = softmax_cross_entropy(c.logits, y);
        SgdMomentum opt(m, 1e-4, 0.5);
        opt.step(m, backward(m, c, &ce.dlogits, nullptr));
        CHECK(softmax_cross_entropy(forward(m, x).logits, y).loss <= ce.loss);
    }
}

TEST_CASE("default architectures") {
    Rng rng(1);
    const Model mlp = default_architecture(ArchKind::mlp, {2}, 4, 2, rng);
    CHECK(mlp.parameter_count() == 462);

    const Model cnn = default_architecture(ArchKind::smallcnn, {1, 28, 28}, 64, 10, rng);
    REQUIRE(cnn.extractor.size() == 3);
    CHECK(std::get<DenseLayer>(cnn.extractor[2]).in == 784);
    CHECK(std::get<ConvLayer>(cnn.extractor[1]).output_size() == 784);
    CHECK(forward(cnn, Tensor({2, 784})).features.shape() == Shape{2, 64});

    Rng a(5), b(5);
    CHECK(parameter_hash(default_architecture(ArchKind::mlp, {3}, 4, 2, a)) ==
          parameter_hash(default_architecture(ArchKind::mlp, {3}, 4, 2, b)));

    CHECK_THROWS_AS(default_architecture(ArchKind::smallcnn, {784}, 8, 10, rng), std::invalid_argument);
    CHECK_THROWS_AS(default_architecture(ArchKind::smallcnn, {1, 6, 6}, 8, 10, rng), std::invalid_argument);
    CHECK_THROWS_AS(default_architecture(static_cast<ArchKind>(7), {4}, 8, 10, rng), std::invalid_argument);
    CHECK_THROWS_AS(parse_arch("resnet18"), std::invalid_argument);
    CHECK(parse_arch(to_string(ArchKind::smallcnn)) == ArchKind::smallcnn);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    const auto dir = std::filesystem::temp_directory_path() / "itdm_test_ckpt";
    std::filesystem::create_directories(dir);
    Rng rng(99);
    for (ArchKind kind : {ArchKind::mlp, ArchKind::smallcnn}) {
        const Shape in = kind == ArchKind::mlp ? Shape{7} : Shape{1, 8, 4};
        const Model m = default_architecture(kind, in, 5, 3, rng);
        save_checkpoint(m, dir / "m.ckpt");
        const Model back = load_checkpoint(dir / "m.ckpt");
        CHECK(back.spec.input_shape == in);
        CHECK(back.spec.kind == kind);
        const auto a = m.parameters();
        const auto b = back.parameters();
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
        CHECK(parameter_hash(m) == parameter_hash(back));
    }
    std::ofstream(dir / "bad.ckpt") << "NOTACKPT";
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), std::runtime_error);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
}
