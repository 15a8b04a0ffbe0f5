#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "itdm/kernels.hpp"
#include "itdm/tensor.hpp"

namespace itdm::mmd {

/// Latent features of one mini-batch, row i labelled labels[i].
struct FeatureBatch {
    Tensor features;  // m × d
    std::vector<int> labels;

    std::size_t size() const { return features.rank() == 2 ? features.rows() : 0; }
    /// Throws std::invalid_argument on an empty batch, a row/label count
    /// mismatch, or a label outside [0, num_classes).
    void validate(std::size_t num_classes) const;
};

struct MatchOptions {
    std::size_t kernels = 5;
    /// Loss is sqrt(V + eps) when set, the squared statistic V otherwise.
    bool use_sqrt = true;
    double sqrt_epsilon = 1e-12;
};

struct MatchResult {
    double loss = 0.0;
    Tensor grad_h1;
    Tensor grad_h2;
    /// Bandwidth base used. In class-conditional mode, the mean over matched classes.
    double sigma_med = 0.0;
    /// Class-conditional mode only; 0 in joint mode.
    std::size_t classes_matched = 0;
    /// Class-conditional mode: per-class σ_Med, 0 for skipped classes.
    std::vector<double> class_sigma_med;
    /// Number of kernel-matrix entries evaluated.
    std::size_t kernel_entries = 0;
};

/// Biased (V-statistic) squared MMD with the k_mix kernel, diagonal included.
/// Not clamped: may be a tiny negative number from round-off.
double mmd_sq_biased_unclamped(const Tensor& h1, const Tensor& h2, const kernels::KernelBank& bank);

/// Clamped below at 0.
double mmd_sq_biased(const Tensor& h1, const Tensor& h2, const kernels::KernelBank& bank);

/// Joint matching loss between two feature sets and its gradient w.r.t. both.
/// The bandwidth is estimated with the median heuristic unless `sigma_med`
/// is given; either way it is treated as a constant for differentiation.
MatchResult match_joint(const Tensor& h1, const Tensor& h2, const MatchOptions& options,
                        std::optional<double> sigma_med = std::nullopt);

/// Mean of per-class joint matches over the classes present in both batches.
/// `class_sigma_med`, when non-empty, must have num_classes entries and
/// freezes each matched class's bandwidth.
MatchResult match_class_conditional(const FeatureBatch& b1, const FeatureBatch& b2, std::size_t num_classes,
                                    const MatchOptions& options,
                                    std::span<const double> class_sigma_med = {});

}  // namespace itdm::mmd
