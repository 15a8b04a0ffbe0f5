#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "itdm/data.hpp"
#include "itdm/mmd.hpp"
#include "itdm/nn.hpp"

namespace itdm::trainer {

enum class MatchMode { none, joint, class_conditional };

std::string_view to_string(MatchMode mode);
MatchMode parse_match_mode(std::string_view name);

/// Multiply the learning rate by `multiplier` when epoch `epoch` (0-based) begins.
struct LrStep {
    std::size_t epoch = 0;
    double multiplier = 1.0;
    friend bool operator==(const LrStep&, const LrStep&) = default;
};

std::vector<LrStep> parse_lr_schedule(std::string_view text);
std::string format_lr_schedule(const std::vector<LrStep>& schedule);

struct DatasetSpec {
    std::string name = "blobs";  // fmnist, kmnist or blobs
    std::string train_images;
    std::string train_labels;
    std::string test_images;
    std::string test_labels;
    std::size_t subset_n = 0;  // 0 keeps the full training set
    std::size_t blobs_classes = 3;
    std::size_t blobs_per_class = 200;
    std::size_t blobs_test_per_class = 100;
    std::size_t blobs_dim = 8;
    double blobs_separation = 4.0;
    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

struct TrainConfig {
    MatchMode match_mode = MatchMode::class_conditional;
    double lambda = 0.6;
    bool use_sqrt = true;
    std::size_t kernels = 5;
    std::size_t batch_size = 150;
    std::size_t epochs = 10;
    double lr = 0.01;
    double momentum = 0.5;
    std::vector<LrStep> lr_schedule;
    std::uint64_t seed = 0;
    nn::ArchKind arch = nn::ArchKind::mlp;
    std::size_t feature_dim = 64;
    DatasetSpec dataset;

    /// Throws std::invalid_argument on λ < 0, g = 0, empty batch and the like.
    void validate() const;
    bool matching_active() const { return match_mode != MatchMode::none && lambda != 0.0; }
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct MetricsRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_ce = 0.0;
    double match_loss = 0.0;
    double sigma_med = 0.0;
    std::optional<double> test_ce;
    std::optional<double> test_acc;
    std::size_t classes_matched = 0;
    double wall_ms = 0.0;
};

struct StepMetrics {
    double train_ce = 0.0;
    double match_loss = 0.0;
    double sigma_med = 0.0;
    std::size_t classes_matched = 0;
};

/// Bandwidths to hold fixed instead of re-estimating them (gradient checks).
struct FrozenBandwidth {
    std::optional<double> joint;
    std::vector<double> per_class;
};

struct ItdmGradient {
    nn::GradientSet grads;
    StepMetrics metrics;
    mmd::MatchResult match;
};

/// Gradient of L_mb(S1) + λ·Match(H1, H2) w.r.t. every parameter.
ItdmGradient itdm_gradient(const nn::Model& model, const data::Batch& s1, const data::Batch& s2,
                           const TrainConfig& cfg, const FrozenBandwidth& frozen = {});

/// Scalar value of the same objective.
double itdm_objective(const nn::Model& model, const data::Batch& s1, const data::Batch& s2, const TrainConfig& cfg,
                      const FrozenBandwidth& frozen = {});

/// One combined update: both backward passes summed, then one momentum step.
StepMetrics itdm_step(nn::Model& model, nn::SgdMomentum& optimizer, const data::Batch& s1, const data::Batch& s2,
                      const TrainConfig& cfg);

struct Evaluation {
    double accuracy = 0.0;
    double mean_ce = 0.0;
};

Evaluation evaluate(const nn::Model& model, const data::Dataset& dataset, std::size_t batch_size = 500);

struct TrainResult {
    std::vector<MetricsRecord> records;
    std::vector<Evaluation> evaluations;  // one per epoch
    std::vector<double> epoch_train_ce;   // mean step CE per epoch
    nn::Model model;
    double wall_ms = 0.0;

    /// Means over the last min(10, epochs) evaluations.
    Evaluation last10() const;
    double final_train_ce() const { return epoch_train_ce.empty() ? 0.0 : epoch_train_ce.back(); }
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(const std::string& what, std::vector<MetricsRecord> records)
        : std::runtime_error(what), records_(std::move(records)) {}
    const std::vector<MetricsRecord>& records() const noexcept { return records_; }

private:
    std::vector<MetricsRecord> records_;
};

/// Step CE above this multiple of the first step's CE aborts the run.
inline constexpr double kDivergenceFactor = 10.0;

using RecordSink = std::function<void(const MetricsRecord&)>;

TrainResult train(const TrainConfig& cfg, const data::Dataset& train_set, const data::Dataset& test_set,
                  const RecordSink& sink = {});

/// Train/test datasets named by the spec. IDX paths default to
/// $ITDM_DATA_DIR/{train,t10k}-{images-idx3,labels-idx1}-ubyte.
std::pair<data::Dataset, data::Dataset> load_datasets(const DatasetSpec& spec, std::uint64_t seed);

}  // namespace itdm::trainer
