#pragma once

#include <cstddef>
#include <vector>

#include "itdm/tensor.hpp"

namespace itdm::kernels {

/// Smallest bandwidth the median heuristic will return.
inline constexpr double kSigmaFloor = 1e-8;

/// Bandwidths of a uniform Gaussian mixture, in squared-distance units.
struct KernelBank {
    std::vector<double> sigmas;
    double sigma_med = 0.0;

    std::size_t size() const noexcept { return sigmas.size(); }
    /// Throws std::invalid_argument unless non-empty with all σ > 0.
    void validate() const;
};

/// exp(−d/σ) entrywise.
Tensor gaussian_kernel_matrix(const Tensor& sq_dists, double sigma);

/// ∇ₓ k(x, y) = −2·k(x, y)·(x − y)/σ.
Tensor gaussian_kernel_grad(const Tensor& x, const Tensor& y, double sigma);

/// Lower median of the m1·m2 cross-pair squared distances, floored at kSigmaFloor.
double median_sq_dist(const Tensor& h1, const Tensor& h2);

/// σ_i = 2^i·σ_med for i = 0..g−1.
KernelBank build_bank(double sigma_med, std::size_t g);

/// (1/g)·Σ_i exp(−d/σ_i).
Tensor mixture_kernel_matrix(const Tensor& sq_dists, const KernelBank& bank);

/// (1/g)·Σ_i exp(−d/σ_i)/σ_i: the weight that multiplies −2(x − y) in ∇ₓ k_mix.
Tensor mixture_grad_weights(const Tensor& sq_dists, const KernelBank& bank);

struct MixtureTerms {
    Tensor values;        // k_mix
    Tensor grad_weights;  // see mixture_grad_weights
};

/// Both of the above from one exp() per entry and bandwidth.
MixtureTerms mixture_terms(const Tensor& sq_dists, const KernelBank& bank);

}  // namespace itdm::kernels
