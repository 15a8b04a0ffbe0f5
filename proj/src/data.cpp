#include "itdm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace itdm::data {

void Dataset::validate() const {
    if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
        throw std::invalid_argument("dataset " + name + ": input rows do not match label count");
    }
    if (inputs.cols() != shape_size(sample_shape)) throw std::invalid_argument("dataset " + name + ": sample shape mismatch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
            throw std::invalid_argument("dataset " + name + ": label " + std::to_string(y) + " out of range");
        }
    }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IdxError(IdxErrorKind::io, "idx: cannot open " + path.string());
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), {});
}

std::uint32_t be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
    if (bytes.size() < offset + 4) throw IdxError(IdxErrorKind::truncated, "idx: truncated header in " + path.string());
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& os, std::uint32_t v) {
    const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                       static_cast<char>(v)};
    os.write(b, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);

    if (be32(images, 0, images_path) != kIdxImagesMagic) {
        throw IdxError(IdxErrorKind::bad_magic, "idx: bad image magic in " + images_path.string());
    }
    if (be32(labels, 0, labels_path) != kIdxLabelsMagic) {
        throw IdxError(IdxErrorKind::bad_magic, "idx: bad label magic in " + labels_path.string());
    }
    const std::size_t n = be32(images, 4, images_path);
    const std::size_t rows = be32(images, 8, images_path);
    const std::size_t cols = be32(images, 12, images_path);
    const std::size_t n_labels = be32(labels, 4, labels_path);
    if (n != n_labels) {
        throw IdxError(IdxErrorKind::count_mismatch,
                       "idx: " + std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
    }
    const std::size_t pixels = rows * cols;
    if (images.size() < 16 + n * pixels) throw IdxError(IdxErrorKind::truncated, "idx: truncated " + images_path.string());
    if (labels.size() < 8 + n) throw IdxError(IdxErrorKind::truncated, "idx: truncated " + labels_path.string());

    Dataset ds;
    ds.name = images_path.stem().string();
    ds.sample_shape = {1, rows, cols};
    ds.inputs = Tensor({n, pixels});
    for (std::size_t i = 0; i < n * pixels; ++i) ds.inputs[i] = static_cast<double>(images[16 + i]) / 255.0;
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = labels[8 + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = n ? static_cast<std::size_t>(max_label) + 1 : 0;
    return ds;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
    const Shape& s = dataset.sample_shape;
    std::size_t rows = 0, cols = 0;
    if (s.size() == 3 && s[0] == 1) {
        rows = s[1];
        cols = s[2];
    } else if (s.size() == 2) {
        rows = s[0];
        cols = s[1];
    } else {
        throw std::invalid_argument("write_idx: only single-channel 2-D samples are representable");
    }
    std::ofstream img(images_path, std::ios::binary);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!img || !lab) throw IdxError(IdxErrorKind::io, "idx: cannot open output files");
    const auto n = static_cast<std::uint32_t>(dataset.size());
    put_be32(img, kIdxImagesMagic);
    put_be32(img, n);
    put_be32(img, static_cast<std::uint32_t>(rows));
    put_be32(img, static_cast<std::uint32_t>(cols));
    std::vector<char> bytes(dataset.inputs.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(dataset.inputs[i], 0.0, 1.0);
        bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    put_be32(lab, kIdxLabelsMagic);
    put_be32(lab, n);
    for (int y : dataset.labels) lab.put(static_cast<char>(static_cast<unsigned char>(y)));
    if (!img || !lab) throw IdxError(IdxErrorKind::io, "idx: write failed");
}

Dataset synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim, double separation,
                        Rng& rng) {
    if (num_classes < 2 || per_class == 0 || dim < num_classes || separation < 0.0) {
        throw std::invalid_argument("synthetic_blobs: need K >= 2, n_k >= 1, dim >= K, separation >= 0");
    }
    const double offset = separation / std::sqrt(2.0);
    Dataset ds;
    ds.name = "blobs";
    ds.num_classes = num_classes;
    ds.sample_shape = {dim};
    ds.inputs = Tensor({num_classes * per_class, dim});
    ds.labels.reserve(num_classes * per_class);
    std::size_t r = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < per_class; ++i, ++r) {
            auto row = ds.inputs.row(r);
            for (std::size_t c = 0; c < dim; ++c) row[c] = rng.normal() + (c == k ? offset : 0.0);
            ds.labels.push_back(static_cast<int>(k));
        }
    }
    return ds;
}

Dataset random_subset(const Dataset& dataset, std::size_t n, Rng& rng) {
    if (n >= dataset.size()) return dataset;
    auto order = rng.permutation(dataset.size());
    order.resize(n);
    Dataset out;
    out.name = dataset.name;
    out.num_classes = dataset.num_classes;
    out.sample_shape = dataset.sample_shape;
    out.inputs = gather_rows(dataset.inputs, order);
    out.labels.reserve(n);
    for (std::size_t i : order) out.labels.push_back(dataset.labels[i]);
    return out;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
    Batch b;
    b.inputs = gather_rows(dataset.inputs, indices);
    b.indices.assign(indices.begin(), indices.end());
    b.labels.reserve(indices.size());
    for (std::size_t i : indices) b.labels.push_back(dataset.labels[i]);
    return b;
}

DualBatchSampler::DualBatchSampler(std::size_t dataset_size, std::size_t batch_size, Rng rng)
    : size_(dataset_size), batch_size_(batch_size), first_rng_(rng.derive(1)), second_rng_(rng.derive(2)) {
    if (dataset_size == 0 || batch_size == 0) throw std::invalid_argument("sampler: empty dataset or batch");
    second_order_ = second_rng_.permutation(size_);
    begin_epoch();
}

void DualBatchSampler::begin_epoch() {
    first_order_ = first_rng_.permutation(size_);
    first_cursor_ = 0;
}

std::optional<IndexPair> DualBatchSampler::next_pair() {
    if (first_cursor_ >= size_) return std::nullopt;
    const std::size_t take = std::min(batch_size_, size_ - first_cursor_);
    IndexPair pair;
    pair.first.assign(first_order_.begin() + static_cast<std::ptrdiff_t>(first_cursor_),
                      first_order_.begin() + static_cast<std::ptrdiff_t>(first_cursor_ + take));
    first_cursor_ += take;
    pair.second.reserve(take);
    while (pair.second.size() < take) {
        if (second_cursor_ == size_) {
            second_rng_.shuffle(second_order_);
            second_cursor_ = 0;
        }
        pair.second.push_back(second_order_[second_cursor_++]);
    }
    return pair;
}

}  // namespace itdm::data
