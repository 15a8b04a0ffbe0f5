#include "itdm/mmd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace itdm::mmd {

using kernels::KernelBank;

void FeatureBatch::validate(std::size_t num_classes) const {
    if (features.rank() != 2 || features.rows() == 0) throw std::invalid_argument("feature batch: empty");
    if (labels.size() != features.rows()) {
        throw std::invalid_argument("feature batch: " + std::to_string(features.rows()) + " rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::invalid_argument("feature batch: label " + std::to_string(y) + " out of range");
        }
    }
}

namespace {

void require_batches(const Tensor& h1, const Tensor& h2, const char* op) {
    if (h1.rank() != 2 || h2.rank() != 2 || h1.rows() == 0 || h2.rows() == 0) {
        throw std::invalid_argument(std::string(op) + ": empty batch");
    }
    if (h1.cols() != h2.cols()) throw ShapeError(std::string(op) + ": feature dimension mismatch");
}

double mean_of(const Tensor& k, double count) { return sum(k) / count; }

struct Statistic {
    double value = 0.0;
    Tensor grad_h1;
    Tensor grad_h2;
    std::size_t kernel_entries = 0;
};

// Row a of the result is c·Σ_j w[a,j]·(x_a − z_j).
Tensor pull(const Tensor& x, const Tensor& z, const Tensor& w, double c, bool transposed) {
    Tensor grad(x.shape());
    const std::size_t d = x.cols();
    for (std::size_t a = 0; a < x.rows(); ++a) {
        const double* xa = x.data() + a * d;
        double* ga = grad.data() + a * d;
        for (std::size_t j = 0; j < z.rows(); ++j) {
            const double waj = transposed ? w.at(j, a) : w.at(a, j);
            const double* zj = z.data() + j * d;
            const double s = c * waj;
            for (std::size_t col = 0; col < d; ++col) ga[col] += s * (xa[col] - zj[col]);
        }
    }
    return grad;
}

// V and ∂V/∂h1, ∂V/∂h2 for a fixed bank. With w = Σ_i k_i/(gσ_i):
//   ∂V/∂x_a = −(4/m1²)Σ_j w_xx(a,j)(x_a − x_j) + (4/(m1·m2))Σ_j w_xy(a,j)(x_a − y_j)
// and symmetrically for y.
Statistic biased_statistic(const Tensor& h1, const Tensor& h2, const KernelBank& bank) {
    const double m1 = static_cast<double>(h1.rows());
    const double m2 = static_cast<double>(h2.rows());
    const auto xx = kernels::mixture_terms(pairwise_sq_dist(h1, h1), bank);
    const auto yy = kernels::mixture_terms(pairwise_sq_dist(h2, h2), bank);
    const auto xy = kernels::mixture_terms(pairwise_sq_dist(h1, h2), bank);

    Statistic s;
    s.value = mean_of(xx.values, m1 * m1) + mean_of(yy.values, m2 * m2) - 2.0 * sum(xy.values) / (m1 * m2);
    s.kernel_entries = xx.values.size() + yy.values.size() + xy.values.size();

    // Within- and cross-batch parts are summed separately so that identical
    // batches cancel to exactly zero.
    s.grad_h1 = add(pull(h1, h1, xx.grad_weights, -4.0 / (m1 * m1), false),
                    pull(h1, h2, xy.grad_weights, 4.0 / (m1 * m2), false));
    s.grad_h2 = add(pull(h2, h2, yy.grad_weights, -4.0 / (m2 * m2), false),
                    pull(h2, h1, xy.grad_weights, 4.0 / (m1 * m2), true));
    return s;
}

}  // namespace

double mmd_sq_biased_unclamped(const Tensor& h1, const Tensor& h2, const KernelBank& bank) {
    require_batches(h1, h2, "mmd_sq_biased");
    const double m1 = static_cast<double>(h1.rows());
    const double m2 = static_cast<double>(h2.rows());
    const Tensor kxx = kernels::mixture_kernel_matrix(pairwise_sq_dist(h1, h1), bank);
    const Tensor kyy = kernels::mixture_kernel_matrix(pairwise_sq_dist(h2, h2), bank);
    const Tensor kxy = kernels::mixture_kernel_matrix(pairwise_sq_dist(h1, h2), bank);
    return mean_of(kxx, m1 * m1) + mean_of(kyy, m2 * m2) - 2.0 * sum(kxy) / (m1 * m2);
}

double mmd_sq_biased(const Tensor& h1, const Tensor& h2, const KernelBank& bank) {
    return std::max(0.0, mmd_sq_biased_unclamped(h1, h2, bank));
}

MatchResult match_joint(const Tensor& h1, const Tensor& h2, const MatchOptions& options,
                        std::optional<double> sigma_med) {
    require_batches(h1, h2, "match_joint");
    const double sigma = sigma_med ? *sigma_med : kernels::median_sq_dist(h1, h2);
    const KernelBank bank = kernels::build_bank(sigma, options.kernels);
    Statistic s = biased_statistic(h1, h2, bank);

    MatchResult r;
    r.sigma_med = sigma;
    r.kernel_entries = s.kernel_entries + (sigma_med ? 0 : h1.rows() * h2.rows());
    // The gradient below is of the unclamped statistic; it is exactly zero
    // whenever the clamp is active on identical batches.
    const double v = std::max(0.0, s.value);
    if (options.use_sqrt) {
        r.loss = std::sqrt(v + options.sqrt_epsilon);
        const double chain = 0.5 / r.loss;
        r.grad_h1 = scale(s.grad_h1, chain);
        r.grad_h2 = scale(s.grad_h2, chain);
    } else {
        r.loss = v;
        r.grad_h1 = std::move(s.grad_h1);
        r.grad_h2 = std::move(s.grad_h2);
    }
    return r;
}

namespace {

std::vector<std::vector<std::size_t>> rows_by_class(const FeatureBatch& b, std::size_t num_classes) {
    std::vector<std::vector<std::size_t>> out(num_classes);
    for (std::size_t i = 0; i < b.labels.size(); ++i) out[static_cast<std::size_t>(b.labels[i])].push_back(i);
    return out;
}

void scatter_rows(Tensor& dst, const Tensor& src, const std::vector<std::size_t>& rows, double weight) {
    const std::size_t d = dst.cols();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double* out = dst.data() + rows[r] * d;
        const double* in = src.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) out[c] += weight * in[c];
    }
}

}  // namespace

MatchResult match_class_conditional(const FeatureBatch& b1, const FeatureBatch& b2, std::size_t num_classes,
                                    const MatchOptions& options, std::span<const double> class_sigma_med) {
    b1.validate(num_classes);
    b2.validate(num_classes);
    if (b1.features.cols() != b2.features.cols()) throw ShapeError("match_class_conditional: feature dimension mismatch");
    if (!class_sigma_med.empty() && class_sigma_med.size() != num_classes) {
        throw std::invalid_argument("match_class_conditional: need one frozen bandwidth per class");
    }

    const auto rows1 = rows_by_class(b1, num_classes);
    const auto rows2 = rows_by_class(b2, num_classes);

    MatchResult r;
    r.grad_h1 = Tensor(b1.features.shape());
    r.grad_h2 = Tensor(b2.features.shape());
    r.class_sigma_med.assign(num_classes, 0.0);

    std::vector<std::size_t> matched;
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (!rows1[k].empty() && !rows2[k].empty()) matched.push_back(k);
    }
    r.classes_matched = matched.size();
    if (matched.empty()) return r;

    const double weight = 1.0 / static_cast<double>(matched.size());
    double loss_sum = 0.0;
    double sigma_sum = 0.0;
    for (std::size_t k : matched) {
        const Tensor h1 = gather_rows(b1.features, rows1[k]);
        const Tensor h2 = gather_rows(b2.features, rows2[k]);
        std::optional<double> frozen;
        if (!class_sigma_med.empty()) frozen = class_sigma_med[k];
        const MatchResult part = match_joint(h1, h2, options, frozen);
        loss_sum += part.loss;
        sigma_sum += part.sigma_med;
        r.class_sigma_med[k] = part.sigma_med;
        r.kernel_entries += part.kernel_entries;
        scatter_rows(r.grad_h1, part.grad_h1, rows1[k], weight);
        scatter_rows(r.grad_h2, part.grad_h2, rows2[k], weight);
    }
    r.loss = loss_sum * weight;
    r.sigma_med = sigma_sum * weight;
    return r;
}

}  // namespace itdm::mmd
