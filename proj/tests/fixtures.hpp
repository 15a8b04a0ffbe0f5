#pragma once

// Small training setups shared by the unit and acceptance tests.

#include <cmath>
#include <vector>

#include "itdm/trainer.hpp"
#include "oracles.hpp"

namespace itdm::fixture {

struct Toy {
    nn::Model model;
    data::Batch s1;
    data::Batch s2;
};

/// Six samples per batch, 3 inputs, 4 features, 3 classes, every class
/// present in both batches.
inline Toy toy_problem(std::uint64_t seed) {
    Rng rng(seed);
    Toy t;
    t.model = nn::default_architecture(nn::ArchKind::mlp, {3}, 4, 3, rng);
    t.s1.inputs = oracle::random_matrix(6, 3, rng);
    t.s2.inputs = oracle::random_matrix(6, 3, rng, 1.0, 0.5);
    t.s1.labels = {0, 1, 2, 0, 1, 2};
    t.s2.labels = {2, 2, 1, 0, 1, 0};
    return t;
}

/// Worst relative error between the analytic parameter gradient of
/// CE(S1) + λ·Match(H1, H2) and central differences, bandwidths frozen at
/// their values for the unperturbed parameters.
inline double objective_gradient_error(Toy t, const trainer::TrainConfig& cfg, double h = 1e-5) {
    const trainer::ItdmGradient g = trainer::itdm_gradient(t.model, t.s1, t.s2, cfg);
    trainer::FrozenBandwidth frozen;
    if (cfg.match_mode == trainer::MatchMode::joint) {
        frozen.joint = g.match.sigma_med;
    } else {
        frozen.per_class = g.match.class_sigma_med;
    }
    const trainer::ItdmGradient gf = trainer::itdm_gradient(t.model, t.s1, t.s2, cfg, frozen);
    const auto objective = [&] { return trainer::itdm_objective(t.model, t.s1, t.s2, cfg, frozen); };
    double worst = 0.0;
    auto params = t.model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        const Tensor numeric = oracle::central_difference(objective, *params[p], h);
        worst = std::max(worst, oracle::max_rel_error(gf.grads.tensors[p], numeric));
    }
    return worst;
}

inline trainer::TrainConfig blobs_config(std::size_t classes, double separation, std::size_t epochs) {
    trainer::TrainConfig cfg;
    cfg.dataset.name = "blobs";
    cfg.dataset.blobs_classes = classes;
    cfg.dataset.blobs_separation = separation;
    cfg.dataset.blobs_per_class = 100;
    cfg.dataset.blobs_test_per_class = 100;
    cfg.dataset.blobs_dim = 4;
    cfg.epochs = epochs;
    cfg.batch_size = 32;
    cfg.feature_dim = 8;
    cfg.lr = 0.05;
    return cfg;
}

}  // namespace itdm::fixture
