#include "itdm/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace itdm::kernels {

namespace {

void require_bandwidth(double sigma, const char* op) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw std::invalid_argument(std::string(op) + ": bandwidth must be positive, got " + std::to_string(sigma));
    }
}

}  // namespace

void KernelBank::validate() const {
    if (sigmas.empty()) throw std::invalid_argument("kernel bank: no bandwidths");
    for (double s : sigmas) require_bandwidth(s, "kernel bank");
}

Tensor gaussian_kernel_matrix(const Tensor& sq_dists, double sigma) {
    require_bandwidth(sigma, "gaussian_kernel_matrix");
    Tensor k = sq_dists;
    const double inv = 1.0 / sigma;
    for (double& v : k.values()) {
        if (v < 0.0) throw std::invalid_argument("gaussian_kernel_matrix: negative squared distance");
        v = std::exp(-v * inv);
    }
    return k;
}

Tensor gaussian_kernel_grad(const Tensor& x, const Tensor& y, double sigma) {
    require_bandwidth(sigma, "gaussian_kernel_grad");
    if (x.shape() != y.shape()) {
        throw ShapeError("gaussian_kernel_grad: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
    }
    double sq = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
        const double diff = x[c] - y[c];
        sq += diff * diff;
    }
    const double coeff = -2.0 * std::exp(-sq / sigma) / sigma;
    Tensor g(x.shape());
    for (std::size_t c = 0; c < x.size(); ++c) g[c] = coeff * (x[c] - y[c]);
    return g;
}

double median_sq_dist(const Tensor& h1, const Tensor& h2) {
    if (h1.rank() != 2 || h2.rank() != 2 || h1.rows() == 0 || h2.rows() == 0) {
        throw std::invalid_argument("median_sq_dist: both sample sets must be non-empty matrices");
    }
    Tensor d = pairwise_sq_dist(h1, h2);
    std::vector<double> pairs(d.values().begin(), d.values().end());
    const auto mid = pairs.begin() + static_cast<std::ptrdiff_t>((pairs.size() - 1) / 2);
    std::nth_element(pairs.begin(), mid, pairs.end());
    return std::max(*mid, kSigmaFloor);
}

KernelBank build_bank(double sigma_med, std::size_t g) {
    require_bandwidth(sigma_med, "build_bank");
    if (g == 0) throw std::invalid_argument("build_bank: need at least one kernel");
    KernelBank bank;
    bank.sigma_med = sigma_med;
    bank.sigmas.reserve(g);
    double s = sigma_med;
    for (std::size_t i = 0; i < g; ++i, s *= 2.0) bank.sigmas.push_back(s);
    return bank;
}

Tensor mixture_kernel_matrix(const Tensor& sq_dists, const KernelBank& bank) {
    bank.validate();
    Tensor acc(sq_dists.shape());
    for (double sigma : bank.sigmas) axpy(acc, 1.0, gaussian_kernel_matrix(sq_dists, sigma));
    const double inv_g = 1.0 / static_cast<double>(bank.size());
    for (double& v : acc.values()) v *= inv_g;
    return acc;
}

Tensor mixture_grad_weights(const Tensor& sq_dists, const KernelBank& bank) {
    bank.validate();
    Tensor acc(sq_dists.shape());
    for (double sigma : bank.sigmas) axpy(acc, 1.0 / sigma, gaussian_kernel_matrix(sq_dists, sigma));
    const double inv_g = 1.0 / static_cast<double>(bank.size());
    for (double& v : acc.values()) v *= inv_g;
    return acc;
}

MixtureTerms mixture_terms(const Tensor& sq_dists, const KernelBank& bank) {
    bank.validate();
    MixtureTerms out{Tensor(sq_dists.shape()), Tensor(sq_dists.shape())};
    const double inv_g = 1.0 / static_cast<double>(bank.size());
    const double* d = sq_dists.data();
    double* kv = out.values.data();
    double* kw = out.grad_weights.data();
    for (double sigma : bank.sigmas) {
        const double inv = 1.0 / sigma;
        for (std::size_t i = 0; i < sq_dists.size(); ++i) {
            if (d[i] < 0.0) throw std::invalid_argument("mixture_terms: negative squared distance");
            const double k = std::exp(-d[i] * inv);
            kv[i] += k;
            kw[i] += k * inv;
        }
    }
    for (std::size_t i = 0; i < sq_dists.size(); ++i) {
        kv[i] *= inv_g;
        kw[i] *= inv_g;
    }
    return out;
}

}  // namespace itdm::kernels
