#include "itdm/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace itdm::nn {

std::string_view to_string(ArchKind kind) {
    switch (kind) {
        case ArchKind::mlp: return "mlp";
        case ArchKind::smallcnn: return "smallcnn";
    }
    return "unknown";
}

ArchKind parse_arch(std::string_view name) {
    if (name == "mlp") return ArchKind::mlp;
    if (name == "smallcnn") return ArchKind::smallcnn;
    throw std::invalid_argument("unsupported architecture: " + std::string(name));
}

std::vector<Tensor*> Model::parameters() {
    std::vector<Tensor*> out;
    for (auto& layer : extractor) {
        std::visit([&](auto& l) { out.insert(out.end(), {&l.weight, &l.bias}); }, layer);
    }
    out.insert(out.end(), {&classifier.weight, &classifier.bias});
    return out;
}

std::vector<const Tensor*> Model::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& layer : extractor) {
        std::visit([&](const auto& l) { out.insert(out.end(), {&l.weight, &l.bias}); }, layer);
    }
    out.insert(out.end(), {&classifier.weight, &classifier.bias});
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor* p : parameters()) n += p->size();
    return n;
}

GradientSet GradientSet::zeros_like(const Model& model) {
    GradientSet g;
    for (const Tensor* p : model.parameters()) g.tensors.emplace_back(p->shape());
    return g;
}

GradientSet& GradientSet::operator+=(const GradientSet& other) {
    if (other.tensors.size() != tensors.size()) throw ShapeError("gradient sets differ in length");
    for (std::size_t i = 0; i < tensors.size(); ++i) axpy(tensors[i], 1.0, other.tensors[i]);
    return *this;
}

namespace {

void add_bias_rows(Tensor& out, const Tensor& bias) {
    const std::size_t c = bias.size();
    double* p = out.data();
    for (std::size_t r = 0; r < out.rows(); ++r, p += c) {
        for (std::size_t j = 0; j < c; ++j) p[j] += bias[j];
    }
}

void relu_inplace(Tensor& t) {
    for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
}

// Zeroes gradient entries where the activation was clamped.
void relu_mask(Tensor& grad, const Tensor& activation) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activation[i] > 0.0)) grad[i] = 0.0;
    }
}

Tensor column_sums(const Tensor& t) {
    const std::size_t c = t.cols();
    Tensor out({c});
    const double* p = t.data();
    for (std::size_t r = 0; r < t.rows(); ++r, p += c) {
        for (std::size_t j = 0; j < c; ++j) out[j] += p[j];
    }
    return out;
}

Tensor im2col(const Tensor& x, std::size_t m, const ConvLayer& l) {
    const std::size_t h = l.height, w = l.width, c = l.in_channels;
    const std::size_t k = 9 * c;
    Tensor cols({m * h * w, k});
    const double* src = x.data();
    double* dst = cols.data();
    for (std::size_t n = 0; n < m; ++n) {
        const double* img = src + n * h * w * c;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                double* row = dst + ((n * h + y) * w + xx) * k;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        std::copy_n(img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c, c,
                                    row + (ky * 3 + kx) * c);
                    }
                }
            }
        }
    }
    return cols;
}

Tensor col2im(const Tensor& cols, std::size_t m, const ConvLayer& l) {
    const std::size_t h = l.height, w = l.width, c = l.in_channels;
    const std::size_t k = 9 * c;
    Tensor x({m, h * w * c});
    const double* src = cols.data();
    double* dst = x.data();
    for (std::size_t n = 0; n < m; ++n) {
        double* img = dst + n * h * w * c;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                const double* row = src + ((n * h + y) * w + xx) * k;
                for (std::size_t ky = 0; ky < 3; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t kx = 0; kx < 3; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                        double* out = img + (static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * c;
                        const double* in = row + (ky * 3 + kx) * c;
                        for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[ch];
                    }
                }
            }
        }
    }
    return x;
}

Tensor max_pool(const Tensor& act, std::size_t m, const ConvLayer& l, std::vector<std::size_t>& argmax) {
    const std::size_t h = l.height, w = l.width, c = l.out_channels;
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor out({m, ho * wo * c});
    argmax.assign(out.size(), 0);
    const double* a = act.data();
    double* o = out.data();
    for (std::size_t n = 0; n < m; ++n) {
        for (std::size_t py = 0; py < ho; ++py) {
            for (std::size_t px = 0; px < wo; ++px) {
                const std::size_t out_base = ((n * ho + py) * wo + px) * c;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    std::size_t best = ((n * h + 2 * py) * w + 2 * px) * c + ch;
                    for (std::size_t dy = 0; dy < 2; ++dy) {
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx = ((n * h + 2 * py + dy) * w + 2 * px + dx) * c + ch;
                            if (a[idx] > a[best]) best = idx;
                        }
                    }
                    o[out_base + ch] = a[best];
                    argmax[out_base + ch] = best;
                }
            }
        }
    }
    return out;
}

Tensor dense_forward(const DenseLayer& l, const Tensor& x) {
    Tensor out = matmul(x, l.weight);
    add_bias_rows(out, l.bias);
    if (l.relu) relu_inplace(out);
    return out;
}

}  // namespace

ForwardCache forward(const Model& model, const Tensor& x) {
    if (x.rank() < 2 || x.rows() == 0) throw ShapeError("forward: expected a non-empty batch");
    const std::size_t m = x.rows();
    if (x.cols() != model.input_size()) {
        throw ShapeError("forward: sample size " + std::to_string(x.cols()) + " but model expects " +
                         std::to_string(model.input_size()));
    }
    ForwardCache cache;
    cache.model_version = model.version;
    cache.batch_size = m;
    cache.layers.reserve(model.extractor.size());

    Tensor current = x.reshaped({m, x.cols()});
    for (const Layer& layer : model.extractor) {
        LayerCache lc;
        if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            if (current.cols() != dense->in) throw ShapeError("forward: dense layer input mismatch");
            lc.activation = dense_forward(*dense, current);
            lc.input = std::move(current);
            current = lc.activation;
        } else {
            const auto& conv = std::get<ConvLayer>(layer);
            if (current.cols() != conv.height * conv.width * conv.in_channels) {
                throw ShapeError("forward: conv layer input mismatch");
            }
            lc.input = im2col(current, m, conv);
            lc.activation = matmul(lc.input, conv.weight);
            add_bias_rows(lc.activation, conv.bias);
            if (conv.relu) relu_inplace(lc.activation);
            if (conv.pool) {
                current = max_pool(lc.activation, m, conv, lc.pool_argmax);
            } else {
                current = lc.activation.reshaped({m, conv.output_size()});
            }
        }
        cache.layers.push_back(std::move(lc));
    }
    cache.features = std::move(current);
    cache.logits = matmul(cache.features, model.classifier.weight);
    add_bias_rows(cache.logits, model.classifier.bias);
    return cache;
}

Tensor softmax(const Tensor& logits) {
    Tensor p = logits;
    const std::size_t k = p.cols();
    for (std::size_t r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            z += v;
        }
        for (std::size_t j = 0; j < k; ++j) row[j] /= z;
    }
    return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2 || logits.rows() != labels.size()) {
        throw ShapeError("softmax_cross_entropy: logits/labels mismatch");
    }
    const std::size_t m = logits.rows(), k = logits.cols();
    CrossEntropy ce;
    ce.dlogits = Tensor({m, k});
    const double inv_m = 1.0 / static_cast<double>(m);
    double total = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
        }
        const auto row = logits.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        const double log_z = std::log(z);
        total += log_z - (row[static_cast<std::size_t>(y)] - mx);
        auto grad = ce.dlogits.row(r);
        for (std::size_t j = 0; j < k; ++j) grad[j] = std::exp(row[j] - mx - log_z) * inv_m;
        grad[static_cast<std::size_t>(y)] -= inv_m;
    }
    ce.loss = total * inv_m;
    return ce;
}

GradientSet backward(const Model& model, const ForwardCache& cache, const Tensor* dlogits,
                     const Tensor* dfeatures_extra) {
    if (!dlogits && !dfeatures_extra) throw std::invalid_argument("backward: no gradient signal");
    if (cache.model_version != model.version) throw CacheError("backward: cache predates the last parameter update");
    if (cache.layers.size() != model.extractor.size()) throw CacheError("backward: cache built for another model");
    const std::size_t m = cache.batch_size;
    const std::size_t d = model.feature_dim();

    GradientSet grads = GradientSet::zeros_like(model);
    const std::size_t nlayers = model.extractor.size();
    Tensor dfeat({m, d});
    if (dlogits) {
        if (dlogits->shape() != cache.logits.shape()) throw CacheError("backward: dlogits shape mismatch");
        grads.tensors[2 * nlayers] = matmul_at_b(cache.features, *dlogits);
        grads.tensors[2 * nlayers + 1] = column_sums(*dlogits);
        dfeat = matmul_a_bt(*dlogits, model.classifier.weight);
    }
    if (dfeatures_extra) {
        if (dfeatures_extra->shape() != cache.features.shape()) {
            throw CacheError("backward: feature gradient shape mismatch");
        }
        axpy(dfeat, 1.0, *dfeatures_extra);
    }

    Tensor upstream = std::move(dfeat);
    for (std::size_t i = nlayers; i-- > 0;) {
        const LayerCache& lc = cache.layers[i];
        const bool need_input_grad = i > 0;
        if (const auto* dense = std::get_if<DenseLayer>(&model.extractor[i])) {
            if (dense->relu) relu_mask(upstream, lc.activation);
            grads.tensors[2 * i] = matmul_at_b(lc.input, upstream);
            grads.tensors[2 * i + 1] = column_sums(upstream);
            if (need_input_grad) upstream = matmul_a_bt(upstream, dense->weight);
        } else {
            const auto& conv = std::get<ConvLayer>(model.extractor[i]);
            Tensor dact(lc.activation.shape());
            if (conv.pool) {
                for (std::size_t j = 0; j < lc.pool_argmax.size(); ++j) dact[lc.pool_argmax[j]] += upstream[j];
            } else {
                dact = upstream.reshaped(lc.activation.shape());
            }
            if (conv.relu) relu_mask(dact, lc.activation);
            grads.tensors[2 * i] = matmul_at_b(lc.input, dact);
            grads.tensors[2 * i + 1] = column_sums(dact);
            if (need_input_grad) upstream = col2im(matmul_a_bt(dact, conv.weight), m, conv);
        }
    }
    return grads;
}

SgdMomentum::SgdMomentum(const Model& model, double learning_rate, double momentum)
    : learning_rate_(learning_rate), momentum_(momentum) {
    for (const Tensor* p : model.parameters()) velocity_.emplace_back(p->shape());
}

void SgdMomentum::step(Model& model, const GradientSet& grads) {
    auto params = model.parameters();
    if (params.size() != velocity_.size() || grads.tensors.size() != velocity_.size()) {
        throw ShapeError("sgd step: parameter, velocity and gradient counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads.tensors[i].shape() != params[i]->shape()) throw ShapeError("sgd step: gradient shape mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& v = velocity_[i];
        const Tensor& g = grads.tensors[i];
        Tensor& p = *params[i];
        for (std::size_t j = 0; j < v.size(); ++j) {
            v[j] = momentum_ * v[j] + g[j];
            p[j] -= learning_rate_ * v[j];
        }
        p.require_finite("sgd step");
    }
    ++model.version;
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.normal() * s;
    return t;
}

DenseLayer make_dense(std::size_t in, std::size_t out, bool relu, Rng& rng) {
    return DenseLayer{in, out, relu, he_normal({in, out}, in, rng), Tensor({out})};
}

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::size_t h, std::size_t w, Rng& rng) {
    return ConvLayer{cin, cout, h, w, true, true, he_normal({9 * cin, cout}, 9 * cin, rng), Tensor({cout})};
}

}  // namespace

Model default_architecture(ArchKind kind, const Shape& input_shape, std::size_t feature_dim,
                           std::size_t num_classes, Rng& rng) {
    if (feature_dim == 0 || num_classes < 2 || input_shape.empty() || shape_size(input_shape) == 0) {
        throw std::invalid_argument("default_architecture: invalid dimensions");
    }
    Model model;
    model.spec = ArchSpec{kind, input_shape, feature_dim, num_classes};
    switch (kind) {
        case ArchKind::mlp: {
            const std::size_t in = shape_size(input_shape);
            model.extractor.emplace_back(make_dense(in, 64, true, rng));
            model.extractor.emplace_back(make_dense(64, feature_dim, true, rng));
            break;
        }
        case ArchKind::smallcnn: {
            if (input_shape.size() != 3 || input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0) {
                throw std::invalid_argument("smallcnn: input must be {channels, height, width} with sides divisible by 4, got " +
                                            shape_string(input_shape));
            }
            const std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
            model.extractor.emplace_back(make_conv(c, 8, h, w, rng));
            model.extractor.emplace_back(make_conv(8, 16, h / 2, w / 2, rng));
            const std::size_t flat = 16 * (h / 4) * (w / 4);
            model.extractor.emplace_back(make_dense(flat, feature_dim, true, rng));
            break;
        }
        default:
            throw std::invalid_argument("default_architecture: unsupported kind");
    }
    model.classifier = make_dense(feature_dim, num_classes, false, rng);
    return model;
}

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'T', 'D', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

// Layout (little-endian): magic, u64 version, u64 kind, u64 rank, dims,
// u64 feature_dim, u64 num_classes, u64 count, then per parameter
// u64 rank, dims and raw IEEE-754 bit patterns.
void save_checkpoint(const Model& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u64(os, kCheckpointVersion);
    put_u64(os, static_cast<std::uint64_t>(model.spec.kind));
    put_u64(os, model.spec.input_shape.size());
    for (std::size_t e : model.spec.input_shape) put_u64(os, e);
    put_u64(os, model.spec.feature_dim);
    put_u64(os, model.spec.num_classes);
    const auto params = model.parameters();
    put_u64(os, params.size());
    for (const Tensor* p : params) {
        put_u64(os, p->rank());
        for (std::size_t e : p->shape()) put_u64(os, e);
        for (double v : p->values()) put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + path.string());
    }
    if (get_u64(is) != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version");
    const std::uint64_t kind = get_u64(is);
    if (kind > static_cast<std::uint64_t>(ArchKind::smallcnn)) throw std::runtime_error("checkpoint: unknown architecture");
    Shape input(get_u64(is));
    for (auto& e : input) e = get_u64(is);
    const std::size_t feature_dim = get_u64(is);
    const std::size_t num_classes = get_u64(is);

    Rng scratch(0);
    Model model = default_architecture(static_cast<ArchKind>(kind), input, feature_dim, num_classes, scratch);
    auto params = model.parameters();
    if (get_u64(is) != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (Tensor* p : params) {
        Shape shape(get_u64(is));
        for (auto& e : shape) e = get_u64(is);
        if (shape != p->shape()) throw std::runtime_error("checkpoint: parameter shape mismatch");
        for (double& v : p->values()) v = std::bit_cast<double>(get_u64(is));
    }
    return model;
}

std::uint64_t parameter_hash(const Model& model) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const Tensor* p : model.parameters()) {
        for (double v : p->values()) {
            const auto bits = std::bit_cast<std::uint64_t>(v);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xffU;
                h *= 0x100000001b3ULL;
            }
        }
    }
    return h;
}

}  // namespace itdm::nn
