#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "itdm/rng.hpp"
#include "itdm/tensor.hpp"

namespace itdm::data {

struct Dataset {
    Tensor inputs;        // n × prod(sample_shape)
    Shape sample_shape;   // {features} or {channels, height, width}
    std::vector<int> labels;
    std::size_t num_classes = 0;
    std::string name;

    std::size_t size() const { return labels.size(); }
    /// Throws std::invalid_argument if counts or labels are inconsistent.
    void validate() const;
};

enum class IdxErrorKind { io, bad_magic, truncated, count_mismatch };

class IdxError : public std::runtime_error {
public:
    IdxError(IdxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    IdxErrorKind kind() const noexcept { return kind_; }

private:
    IdxErrorKind kind_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Big-endian IDX image/label pair; pixels scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Inverse of load_idx: pixels written as round(255·x).
void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Class k ~ N(μ_k, I) with μ_k = (s/√2)·e_k, so class means sit at mutual distance s.
Dataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double separation,
                        Rng& rng);

/// Random subset of n samples (all of them if n ≥ size).
Dataset random_subset(const Dataset& dataset, std::size_t n, Rng& rng);

struct Batch {
    Tensor inputs;
    std::vector<int> labels;
    std::vector<std::size_t> indices;
};

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

struct IndexPair {
    std::vector<std::size_t> first;   // S1
    std::vector<std::size_t> second;  // S2
};

/// Yields (S1, S2) index pairs. S1 walks an epoch permutation; S2 is drawn
/// from an independent stream that reshuffles itself whenever exhausted.
class DualBatchSampler {
public:
    DualBatchSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng);

    /// Reshuffles stream 1 and rewinds it.
    void begin_epoch();
    /// Next pair, or nullopt once stream 1 has covered the epoch.
    std::optional<IndexPair> next_pair();

    std::size_t batch_size() const noexcept { return batch_size_; }
    std::size_t steps_per_epoch() const noexcept { return (size_ + batch_size_ - 1) / batch_size_; }

private:
    std::size_t size_;
    std::size_t batch_size_;
    Rng first_rng_;
    Rng second_rng_;
    std::vector<std::size_t> first_order_;
    std::vector<std::size_t> second_order_;
    std::size_t first_cursor_ = 0;
    std::size_t second_cursor_ = 0;
};

}  // namespace itdm::data
