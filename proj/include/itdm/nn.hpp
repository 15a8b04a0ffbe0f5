#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "itdm/rng.hpp"
#include "itdm/tensor.hpp"

namespace itdm::nn {

enum class ArchKind { mlp, smallcnn };

std::string_view to_string(ArchKind kind);
ArchKind parse_arch(std::string_view name);

/// y = x·W + b, W stored in × out.
struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    bool relu = true;
    Tensor weight;
    Tensor bias;
};

/// 3×3 convolution, stride 1, zero padding 1, over channels-last (NHWC)
/// activations, optionally followed by ReLU and 2×2 max pooling.
/// Weight is (9·in_channels) × out_channels with row index (ky·3 + kx)·C + c.
struct ConvLayer {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    bool relu = true;
    bool pool = true;
    Tensor weight;
    Tensor bias;

    std::size_t out_height() const { return pool ? height / 2 : height; }
    std::size_t out_width() const { return pool ? width / 2 : width; }
    std::size_t output_size() const { return out_height() * out_width() * out_channels; }
};

using Layer = std::variant<DenseLayer, ConvLayer>;

struct ArchSpec {
    ArchKind kind = ArchKind::mlp;
    Shape input_shape;  // per-sample: {features} or {channels, height, width}
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
};

/// Feature extractor followed by a linear classifier.
struct Model {
    ArchSpec spec;
    std::vector<Layer> extractor;
    DenseLayer classifier;
    /// Bumped by every parameter update; forward caches record it.
    std::uint64_t version = 0;

    std::size_t input_size() const { return shape_size(spec.input_shape); }
    std::size_t feature_dim() const { return spec.feature_dim; }
    std::size_t num_classes() const { return spec.num_classes; }

    /// Weight, bias per extractor layer, then classifier weight, bias.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::size_t parameter_count() const;
};

struct LayerCache {
    Tensor input;       // dense: layer input; conv: im2col matrix
    Tensor activation;  // post-activation output (conv: before pooling)
    std::vector<std::size_t> pool_argmax;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Tensor features;  // m × d, post-activation output of the last extractor layer
    Tensor logits;    // m × K
    std::uint64_t model_version = 0;
    std::size_t batch_size = 0;
};

/// One tensor per model parameter, in Model::parameters() order.
struct GradientSet {
    std::vector<Tensor> tensors;

    static GradientSet zeros_like(const Model& model);
    GradientSet& operator+=(const GradientSet& other);
};

class CacheError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

ForwardCache forward(const Model& model, const Tensor& x);

struct CrossEntropy {
    double loss = 0.0;
    Tensor dlogits;
};

/// Row-wise max-subtracted softmax.
Tensor softmax(const Tensor& logits);

/// Mean negative log-likelihood of the true labels and its gradient (softmax − onehot)/m.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Reverse-mode gradients of CE(logits) plus ⟨dfeatures_extra, features⟩.
/// Either signal may be null, not both.
GradientSet backward(const Model& model, const ForwardCache& cache, const Tensor* dlogits,
                     const Tensor* dfeatures_extra);

class SgdMomentum {
public:
    SgdMomentum(const Model& model, double learning_rate, double momentum);

    double learning_rate() const noexcept { return learning_rate_; }
    void set_learning_rate(double lr) noexcept { learning_rate_ = lr; }
    double momentum() const noexcept { return momentum_; }
    const std::vector<Tensor>& velocity() const noexcept { return velocity_; }

    /// v ← μ·v + g; θ ← θ − α·v. Throws NonFiniteError if a parameter stops being finite.
    void step(Model& model, const GradientSet& grads);

private:
    double learning_rate_;
    double momentum_;
    std::vector<Tensor> velocity_;
};

/// mlp: dense(in→64)+ReLU, dense(64→d)+ReLU.
/// smallcnn: conv(C→8)+ReLU+pool, conv(8→16)+ReLU+pool, dense(→d)+ReLU.
/// Both end in a dense(d→K) classifier. He-normal weights, zero biases.
Model default_architecture(ArchKind kind, const Shape& input_shape, std::size_t feature_dim,
                           std::size_t num_classes, Rng& rng);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the bit patterns of every parameter.
std::uint64_t parameter_hash(const Model& model);

}  // namespace itdm::nn
