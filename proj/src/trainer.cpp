#include "itdm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

namespace itdm::trainer {

std::string_view to_string(MatchMode mode) {
    switch (mode) {
        case MatchMode::none: return "none";
        case MatchMode::joint: return "joint";
        case MatchMode::class_conditional: return "class";
    }
    return "unknown";
}

MatchMode parse_match_mode(std::string_view name) {
    if (name == "none") return MatchMode::none;
    if (name == "joint") return MatchMode::joint;
    if (name == "class") return MatchMode::class_conditional;
    throw std::invalid_argument("unknown match mode: " + std::string(name));
}

std::vector<LrStep> parse_lr_schedule(std::string_view text) {
    std::vector<LrStep> out;
    std::stringstream ss{std::string(text)};
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw std::invalid_argument("lr schedule entry '" + item + "' is not epoch:mult");
        try {
            std::size_t used = 0;
            const long long epoch = std::stoll(item.substr(0, colon), &used);
            if (used != colon || epoch < 0) throw std::invalid_argument("epoch");
            const std::string mult_text = item.substr(colon + 1);
            const double mult = std::stod(mult_text, &used);
            if (used != mult_text.size() || !(mult > 0.0)) throw std::invalid_argument("multiplier");
            out.push_back({static_cast<std::size_t>(epoch), mult});
        } catch (const std::exception&) {
            throw std::invalid_argument("lr schedule entry '" + item + "' is not epoch:mult");
        }
    }
    return out;
}

std::string format_lr_schedule(const std::vector<LrStep>& schedule) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        os << (i ? "," : "") << schedule[i].epoch << ':' << schedule[i].multiplier;
    }
    return os.str();
}

void TrainConfig::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be >= 0");
    if (kernels == 0) throw std::invalid_argument("kernels must be >= 1");
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
    if (feature_dim == 0) throw std::invalid_argument("feature dimension must be >= 1");
    for (const auto& s : lr_schedule) {
        if (!(s.multiplier > 0.0)) throw std::invalid_argument("lr multipliers must be > 0");
    }
    if (dataset.name != "blobs" && dataset.name != "fmnist" && dataset.name != "kmnist") {
        throw std::invalid_argument("unknown dataset: " + dataset.name);
    }
}

namespace {

mmd::MatchResult compute_match(const nn::Model& model, const nn::ForwardCache& c1, const nn::ForwardCache& c2,
                               const data::Batch& s1, const data::Batch& s2, const TrainConfig& cfg,
                               const FrozenBandwidth& frozen) {
    const mmd::MatchOptions options{cfg.kernels, cfg.use_sqrt};
    if (cfg.match_mode == MatchMode::joint) return mmd::match_joint(c1.features, c2.features, options, frozen.joint);
    const mmd::FeatureBatch b1{c1.features, s1.labels};
    const mmd::FeatureBatch b2{c2.features, s2.labels};
    return mmd::match_class_conditional(b1, b2, model.num_classes(), options, frozen.per_class);
}

}  // namespace

ItdmGradient itdm_gradient(const nn::Model& model, const data::Batch& s1, const data::Batch& s2,
                           const TrainConfig& cfg, const FrozenBandwidth& frozen) {
    const nn::ForwardCache c1 = nn::forward(model, s1.inputs);
    const nn::CrossEntropy ce = nn::softmax_cross_entropy(c1.logits, s1.labels);

    ItdmGradient out;
    out.metrics.train_ce = ce.loss;
    if (!cfg.matching_active()) {
        out.grads = nn::backward(model, c1, &ce.dlogits, nullptr);
        return out;
    }

    const nn::ForwardCache c2 = nn::forward(model, s2.inputs);
    out.match = compute_match(model, c1, c2, s1, s2, cfg, frozen);
    out.metrics.match_loss = out.match.loss;
    out.metrics.sigma_med = out.match.sigma_med;
    out.metrics.classes_matched = out.match.classes_matched;

    const Tensor dfeat1 = scale(out.match.grad_h1, cfg.lambda);
    const Tensor dfeat2 = scale(out.match.grad_h2, cfg.lambda);
    out.grads = nn::backward(model, c1, &ce.dlogits, &dfeat1);
    out.grads += nn::backward(model, c2, nullptr, &dfeat2);
    return out;
}

double itdm_objective(const nn::Model& model, const data::Batch& s1, const data::Batch& s2, const TrainConfig& cfg,
                      const FrozenBandwidth& frozen) {
    const nn::ForwardCache c1 = nn::forward(model, s1.inputs);
    const double ce = nn::softmax_cross_entropy(c1.logits, s1.labels).loss;
    if (!cfg.matching_active()) return ce;
    const nn::ForwardCache c2 = nn::forward(model, s2.inputs);
    return ce + cfg.lambda * compute_match(model, c1, c2, s1, s2, cfg, frozen).loss;
}

StepMetrics itdm_step(nn::Model& model, nn::SgdMomentum& optimizer, const data::Batch& s1, const data::Batch& s2,
                      const TrainConfig& cfg) {
    ItdmGradient g = itdm_gradient(model, s1, s2, cfg);
    optimizer.step(model, g.grads);
    return g.metrics;
}

Evaluation evaluate(const nn::Model& model, const data::Dataset& dataset, std::size_t batch_size) {
    const std::size_t n = dataset.size();
    if (n == 0) return {};
    std::size_t correct = 0;
    double ce_total = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
        const data::Batch b = data::make_batch(dataset, idx);
        const nn::ForwardCache c = nn::forward(model, b.inputs);
        ce_total += nn::softmax_cross_entropy(c.logits, b.labels).loss * static_cast<double>(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto row = c.logits.row(r);
            const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
            if (best == b.labels[r]) ++correct;
        }
    }
    return {static_cast<double>(correct) / static_cast<double>(n), ce_total / static_cast<double>(n)};
}

Evaluation TrainResult::last10() const {
    Evaluation avg;
    const std::size_t k = std::min<std::size_t>(10, evaluations.size());
    if (k == 0) return avg;
    for (std::size_t i = evaluations.size() - k; i < evaluations.size(); ++i) {
        avg.accuracy += evaluations[i].accuracy;
        avg.mean_ce += evaluations[i].mean_ce;
    }
    avg.accuracy /= static_cast<double>(k);
    avg.mean_ce /= static_cast<double>(k);
    return avg;
}

namespace {

// Sub-stream ids of the run seed.
constexpr std::uint64_t kInitStream = 20;
constexpr std::uint64_t kSamplerStream = 30;

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Dataset& train_set, const data::Dataset& test_set,
                  const RecordSink& sink) {
    cfg.validate();
    train_set.validate();
    test_set.validate();
    using clock = std::chrono::steady_clock;
    const auto started = clock::now();
    const auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(clock::now() - started).count();
    };

    const Rng root(cfg.seed);
    Rng init = root.derive(kInitStream);
    const std::size_t num_classes = std::max(train_set.num_classes, test_set.num_classes);
    TrainResult result;
    result.model = nn::default_architecture(cfg.arch, train_set.sample_shape, cfg.feature_dim, num_classes, init);
    nn::SgdMomentum optimizer(result.model, cfg.lr, cfg.momentum);
    data::DualBatchSampler sampler(train_set.size(), cfg.batch_size, root.derive(kSamplerStream));

    std::optional<double> initial_ce;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& s : cfg.lr_schedule) {
            if (s.epoch == epoch) optimizer.set_learning_rate(optimizer.learning_rate() * s.multiplier);
        }
        if (epoch > 0) sampler.begin_epoch();

        double epoch_ce = 0.0;
        std::size_t epoch_steps = 0;
        while (auto pair = sampler.next_pair()) {
            const data::Batch s1 = data::make_batch(train_set, pair->first);
            const data::Batch s2 = data::make_batch(train_set, pair->second);
            MetricsRecord rec;
            rec.epoch = epoch + 1;
            rec.step = ++step;
            StepMetrics m;
            std::string failure;
            try {
                m = itdm_step(result.model, optimizer, s1, s2, cfg);
            } catch (const NonFiniteError& e) {
                failure = e.what();
            }
            rec.train_ce = m.train_ce;
            rec.match_loss = m.match_loss;
            rec.sigma_med = m.sigma_med;
            rec.classes_matched = m.classes_matched;
            if (!initial_ce) initial_ce = m.train_ce;
            if (failure.empty() && !(std::isfinite(m.train_ce) && std::isfinite(m.match_loss))) {
                failure = "non-finite loss";
            }
            if (failure.empty() && m.train_ce > kDivergenceFactor * *initial_ce) {
                failure = "train CE exceeded " + std::to_string(kDivergenceFactor) + "x its initial value";
            }
            if (!failure.empty()) {
                rec.wall_ms = elapsed_ms();
                result.records.push_back(rec);
                if (sink) sink(rec);
                throw TrainingDiverged("training diverged at epoch " + std::to_string(rec.epoch) + " step " +
                                           std::to_string(rec.step) + ": " + failure,
                                       std::move(result.records));
            }
            epoch_ce += m.train_ce;
            ++epoch_steps;
            if (epoch_steps == sampler.steps_per_epoch()) {
                const Evaluation eval = evaluate(result.model, test_set);
                result.evaluations.push_back(eval);
                result.epoch_train_ce.push_back(epoch_ce / static_cast<double>(epoch_steps));
                rec.test_ce = eval.mean_ce;
                rec.test_acc = eval.accuracy;
            }
            rec.wall_ms = elapsed_ms();
            result.records.push_back(rec);
            if (sink) sink(rec);
        }
    }
    result.wall_ms = elapsed_ms();
    return result;
}

namespace {

std::string idx_path(const std::string& given, const char* file, const std::string& dataset) {
    if (!given.empty()) return given;
    const char* dir = std::getenv("ITDM_DATA_DIR");
    if (!dir || !*dir) {
        throw std::invalid_argument("dataset " + dataset + ": no IDX path given and ITDM_DATA_DIR is unset");
    }
    return (std::filesystem::path(dir) / file).string();
}

}  // namespace

std::pair<data::Dataset, data::Dataset> load_datasets(const DatasetSpec& spec, std::uint64_t seed) {
    const Rng root(seed);
    if (spec.name == "blobs") {
        Rng train_rng = root.derive(10);
        Rng test_rng = root.derive(11);
        auto train_set = data::synthetic_blobs(spec.blobs_classes, spec.blobs_per_class, spec.blobs_dim,
                                               spec.blobs_separation, train_rng);
        auto test_set = data::synthetic_blobs(spec.blobs_classes, spec.blobs_test_per_class, spec.blobs_dim,
                                              spec.blobs_separation, test_rng);
        return {std::move(train_set), std::move(test_set)};
    }
    if (spec.name != "fmnist" && spec.name != "kmnist") throw std::invalid_argument("unknown dataset: " + spec.name);
    auto train_set = data::load_idx(idx_path(spec.train_images, "train-images-idx3-ubyte", spec.name),
                                    idx_path(spec.train_labels, "train-labels-idx1-ubyte", spec.name));
    auto test_set = data::load_idx(idx_path(spec.test_images, "t10k-images-idx3-ubyte", spec.name),
                                   idx_path(spec.test_labels, "t10k-labels-idx1-ubyte", spec.name));
    train_set.name = spec.name + "-train";
    test_set.name = spec.name + "-test";
    const std::size_t k = std::max(train_set.num_classes, test_set.num_classes);
    train_set.num_classes = test_set.num_classes = k;
    if (spec.subset_n > 0) {
        Rng subset_rng = root.derive(12);
        train_set = data::random_subset(train_set, spec.subset_n, subset_rng);
    }
    return {std::move(train_set), std::move(test_set)};
}

}  // namespace itdm::trainer
