#include <doctest.h>

#include "itdm/rng.hpp"
#include "itdm/tensor.hpp"
#include "oracles.hpp"

using namespace itdm;

TEST_CASE("matmul: identity and hand cases") {
    const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
    CHECK(matmul(Tensor::identity(2), a) == a);
    CHECK(matmul(a, Tensor::identity(2)) == a);
    CHECK(matmul(a, Tensor::matrix({{0}, {1}})) == Tensor::matrix({{2}, {4}}));
}

TEST_CASE("matmul variants agree with the triple-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(9), k = 1 + rng.uniform_index(9), n = 1 + rng.uniform_index(9);
        const Tensor a = oracle::random_matrix(m, k, rng);
        const Tensor b = oracle::random_matrix(k, n, rng);
        const Tensor expected = oracle::naive_matmul(a, b);
        CHECK(max_abs_diff(matmul(a, b), expected) < 1e-12);

        Tensor at({k, m});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < k; ++j) at.at(j, i) = a.at(i, j);
        Tensor bt({n, k});
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < n; ++j) bt.at(j, i) = b.at(i, j);
        CHECK(max_abs_diff(matmul_at_b(at, b), expected) < 1e-12);
        CHECK(max_abs_diff(matmul_a_bt(a, bt), expected) < 1e-12);
    }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor({2}), Tensor({2, 3})), ShapeError);
    CHECK_THROWS_AS(matmul_at_b(Tensor({2, 3}), Tensor({3, 3})), ShapeError);
    CHECK_THROWS_AS(matmul_a_bt(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST_CASE("pairwise_sq_dist") {
    CHECK(pairwise_sq_dist(Tensor::matrix({{1.5, -2}}), Tensor::matrix({{1.5, -2}})) == Tensor::matrix({{0}}));
    CHECK(pairwise_sq_dist(Tensor::matrix({{0}}), Tensor::matrix({{2}})) == Tensor::matrix({{4}}));
    CHECK_THROWS_AS(pairwise_sq_dist(Tensor({2, 3}), Tensor({2, 4})), ShapeError);

    Rng rng(5);
    const Tensor x = oracle::random_matrix(8, 3, rng);
    const Tensor y = oracle::random_matrix(5, 3, rng);
    CHECK(max_abs_diff(pairwise_sq_dist(x, y), oracle::naive_sq_dist(x, y)) < 1e-12);

    const Tensor self = pairwise_sq_dist(x, x);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(self.at(i, i) == 0.0);
        for (std::size_t j = 0; j < 8; ++j) {
            CHECK(self.at(i, j) == self.at(j, i));
            CHECK(self.at(i, j) >= 0.0);
        }
    }
}

TEST_CASE("tensor construction validates shape") {
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}).reshaped({3}), ShapeError);
    Tensor t({2, 2});
    t[3] = std::nan("");
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(t.require_finite("t"), NonFiniteError);
}

TEST_CASE("rng: identical seeds give identical 1e6-long streams") {
    Rng a(42), b(42), c(43);
    bool same = true;
    for (int i = 0; i < 1'000'000; ++i) same = same && a.next_u64() == b.next_u64();
    CHECK(same);
    CHECK(Rng(42).next_u64() != c.next_u64());
}

TEST_CASE("rng: distributions stay in range and look right") {
    Rng rng(3);
    double mean = 0.0, sq = 0.0;
    const int n = 200000;
    bool in_range = true;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        in_range = in_range && u >= 0.0 && u < 1.0;
        const double z = rng.normal();
        mean += z;
        sq += z * z;
    }
    mean /= n;
    CHECK(in_range);
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);

    auto perm = rng.permutation(100);
    std::sort(perm.begin(), perm.end());
    for (std::size_t i = 0; i < 100; ++i) CHECK(perm[i] == i);
    CHECK_THROWS(rng.uniform_index(0));
}
