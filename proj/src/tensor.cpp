#include "itdm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace itdm {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw ShapeError("tensor: shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " elements");
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t n = rows.size();
    const std::size_t m = n ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(n * m);
    for (const auto& r : rows) {
        if (r.size() != m) throw ShapeError("tensor: ragged rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({n, m}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.empty()) throw ShapeError("tensor: scalar has no rows");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.empty()) throw ShapeError("tensor: scalar has no columns");
    return shape_[0] == 0 ? shape_size(Shape(shape_.begin() + 1, shape_.end())) : data_.size() / shape_[0];
}

std::span<double> Tensor::row(std::size_t i) {
    const std::size_t c = cols();
    return std::span<double>(data_).subspan(i * c, c);
}

std::span<const double> Tensor::row(std::size_t i) const {
    const std::size_t c = cols();
    return std::span<const double>(data_).subspan(i * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
        throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::require_finite(const std::string& what) const {
    if (!all_finite()) throw NonFiniteError(what + ": non-finite value");
}

namespace {

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

}  // namespace

namespace {

constexpr std::size_t kColBlock = 8;
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kDepthBlock = 256;

// c[m×n] = a[m×k]·b[k×n]. Every c[i,j] is summed over p in ascending order,
// so blocking changes speed only, never the result.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        std::size_t j = 0;
        for (; j + kColBlock <= n; j += kColBlock) {
            double acc[kColBlock] = {};
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = arow[p];
                const double* bp = b + p * n + j;
                for (std::size_t q = 0; q < kColBlock; ++q) acc[q] += aip * bp[q];
            }
            for (std::size_t q = 0; q < kColBlock; ++q) crow[j + q] = acc[q];
        }
        for (; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * b[p * n + j];
            crow[j] = acc;
        }
    }
}

// c[k×n] = a[m×k]ᵀ·b[m×n], each c[i,j] summed over r in ascending order.
void gemm_at_b(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r0 = 0; r0 < m; r0 += kDepthBlock) {
        const std::size_t r1 = std::min(m, r0 + kDepthBlock);
        std::size_t i = 0;
        for (; i + kRowBlock <= k; i += kRowBlock) {
            std::size_t j = 0;
            for (; j + kColBlock <= n; j += kColBlock) {
                double acc[kRowBlock][kColBlock];
                for (std::size_t u = 0; u < kRowBlock; ++u)
                    for (std::size_t q = 0; q < kColBlock; ++q) acc[u][q] = c[(i + u) * n + j + q];
                for (std::size_t r = r0; r < r1; ++r) {
                    const double* ar = a + r * k + i;
                    const double* br = b + r * n + j;
                    for (std::size_t u = 0; u < kRowBlock; ++u)
                        for (std::size_t q = 0; q < kColBlock; ++q) acc[u][q] += ar[u] * br[q];
                }
                for (std::size_t u = 0; u < kRowBlock; ++u)
                    for (std::size_t q = 0; q < kColBlock; ++q) c[(i + u) * n + j + q] = acc[u][q];
            }
            for (; j < n; ++j)
                for (std::size_t u = 0; u < kRowBlock; ++u) {
                    double acc = c[(i + u) * n + j];
                    for (std::size_t r = r0; r < r1; ++r) acc += a[r * k + i + u] * b[r * n + j];
                    c[(i + u) * n + j] = acc;
                }
        }
        for (; i < k; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = c[i * n + j];
                for (std::size_t r = r0; r < r1; ++r) acc += a[r * k + i] * b[r * n + j];
                c[i * n + j] = acc;
            }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
    }
    Tensor c({m, n});
    gemm(a.data(), b.data(), c.data(), m, k, n);
    return c;
}

Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_at_b");
    require_matrix(b, "matmul_at_b");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != m) {
        throw ShapeError("matmul_at_b: " + shape_string(a.shape()) + "ᵀ x " + shape_string(b.shape()));
    }
    Tensor c({k, n});
    gemm_at_b(a.data(), b.data(), c.data(), m, k, n);
    return c;
}

Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul_a_bt");
    require_matrix(b, "matmul_a_bt");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) {
        throw ShapeError("matmul_a_bt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "ᵀ");
    }
    Tensor bt({k, n});
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    Tensor c({m, n});
    gemm(a.data(), bt.data(), c.data(), m, k, n);
    return c;
}

Tensor pairwise_sq_dist(const Tensor& x, const Tensor& y) {
    require_matrix(x, "pairwise_sq_dist");
    require_matrix(y, "pairwise_sq_dist");
    const std::size_t n = x.shape()[0], m = y.shape()[0], d = x.shape()[1];
    if (y.shape()[1] != d) {
        throw ShapeError("pairwise_sq_dist: feature dims " + std::to_string(d) + " vs " +
                         std::to_string(y.shape()[1]));
    }
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* yj = y.data() + j * d;
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double diff = xi[c] - yj[c];
                acc += diff * diff;
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Tensor subtract(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "subtract");
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

Tensor scale(const Tensor& a, double s) {
    Tensor c = a;
    for (double& v : c.values()) v *= s;
    return c;
}

void axpy(Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy");
    double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < a.size(); ++i) pa[i] += s * pb[i];
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    return acc;
}

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
    Shape shape = a.shape();
    if (shape.empty()) throw ShapeError("gather_rows: scalar input");
    const std::size_t c = a.cols();
    shape[0] = indices.size();
    Tensor out(shape);
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
        std::copy_n(a.data() + indices[r] * c, c, out.data() + r * c);
    }
    return out;
}

}  // namespace itdm
