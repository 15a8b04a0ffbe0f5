#include "itdm/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace itdm::report {

using nlohmann::json;
using trainer::MetricsRecord;
using trainer::TrainConfig;

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_row(const MetricsRecord& r, bool wall_clock) {
    std::string row;
    row += std::to_string(r.epoch) + ',' + std::to_string(r.step) + ',';
    row += format_double(r.train_ce) + ',' + format_double(r.match_loss) + ',' + format_double(r.sigma_med) + ',';
    row += (r.test_ce ? format_double(*r.test_ce) : std::string()) + ',';
    row += (r.test_acc ? format_double(*r.test_acc) : std::string()) + ',';
    row += std::to_string(r.classes_matched) + ',';
    row += wall_clock ? format_double(r.wall_ms) : std::string("0");
    return row;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& records, bool wall_clock) {
    os << kMetricsHeader << '\n';
    for (const auto& r : records) os << metrics_row(r, wall_clock) << '\n';
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("metrics: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader) {
        throw std::runtime_error("metrics: unexpected header in " + path.string());
    }
    std::vector<MetricsRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 9) throw std::runtime_error("metrics: expected 9 fields in '" + line + "'");
        MetricsRecord r;
        r.epoch = std::stoul(f[0]);
        r.step = std::stoul(f[1]);
        r.train_ce = std::stod(f[2]);
        r.match_loss = std::stod(f[3]);
        r.sigma_med = std::stod(f[4]);
        if (!f[5].empty()) r.test_ce = std::stod(f[5]);
        if (!f[6].empty()) r.test_acc = std::stod(f[6]);
        r.classes_matched = std::stoul(f[7]);
        r.wall_ms = std::stod(f[8]);
        out.push_back(r);
    }
    return out;
}

json config_to_json(const TrainConfig& cfg) {
    const auto& d = cfg.dataset;
    return json{
        {"match_mode", trainer::to_string(cfg.match_mode)},
        {"lambda", cfg.lambda},
        {"use_sqrt", cfg.use_sqrt},
        {"kernels", cfg.kernels},
        {"batch_size", cfg.batch_size},
        {"epochs", cfg.epochs},
        {"lr", cfg.lr},
        {"momentum", cfg.momentum},
        {"lr_schedule", trainer::format_lr_schedule(cfg.lr_schedule)},
        {"seed", cfg.seed},
        {"arch", nn::to_string(cfg.arch)},
        {"feature_dim", cfg.feature_dim},
        {"dataset", d.name},
        {"train_images", d.train_images},
        {"train_labels", d.train_labels},
        {"test_images", d.test_images},
        {"test_labels", d.test_labels},
        {"subset_n", d.subset_n},
        {"blobs_classes", d.blobs_classes},
        {"blobs_per_class", d.blobs_per_class},
        {"blobs_test_per_class", d.blobs_test_per_class},
        {"blobs_dim", d.blobs_dim},
        {"blobs_separation", d.blobs_separation},
    };
}

TrainConfig config_from_json(const json& j, TrainConfig cfg) {
    const json& flat = (j.is_object() && j.contains("config")) ? j.at("config") : j;
    if (!flat.is_object()) throw std::invalid_argument("config: expected a JSON object");
    auto& d = cfg.dataset;
    for (const auto& [key, value] : flat.items()) {
        if (key == "match_mode") cfg.match_mode = trainer::parse_match_mode(value.get<std::string>());
        else if (key == "lambda") cfg.lambda = value.get<double>();
        else if (key == "use_sqrt") cfg.use_sqrt = value.get<bool>();
        else if (key == "kernels") cfg.kernels = value.get<std::size_t>();
        else if (key == "batch_size") cfg.batch_size = value.get<std::size_t>();
        else if (key == "epochs") cfg.epochs = value.get<std::size_t>();
        else if (key == "lr") cfg.lr = value.get<double>();
        else if (key == "momentum") cfg.momentum = value.get<double>();
        else if (key == "lr_schedule") cfg.lr_schedule = trainer::parse_lr_schedule(value.get<std::string>());
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else if (key == "arch") cfg.arch = nn::parse_arch(value.get<std::string>());
        else if (key == "feature_dim") cfg.feature_dim = value.get<std::size_t>();
        else if (key == "dataset") d.name = value.get<std::string>();
        else if (key == "train_images") d.train_images = value.get<std::string>();
        else if (key == "train_labels") d.train_labels = value.get<std::string>();
        else if (key == "test_images") d.test_images = value.get<std::string>();
        else if (key == "test_labels") d.test_labels = value.get<std::string>();
        else if (key == "subset_n") d.subset_n = value.get<std::size_t>();
        else if (key == "blobs_classes") d.blobs_classes = value.get<std::size_t>();
        else if (key == "blobs_per_class") d.blobs_per_class = value.get<std::size_t>();
        else if (key == "blobs_test_per_class") d.blobs_test_per_class = value.get<std::size_t>();
        else if (key == "blobs_dim") d.blobs_dim = value.get<std::size_t>();
        else if (key == "blobs_separation") d.blobs_separation = value.get<double>();
        else throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    return cfg;
}

json summary_json(const TrainConfig& cfg, const trainer::TrainResult& result) {
    json epochs = json::array();
    for (std::size_t e = 0; e < result.evaluations.size(); ++e) {
        epochs.push_back({{"epoch", e + 1},
                          {"train_ce", result.epoch_train_ce[e]},
                          {"test_ce", result.evaluations[e].mean_ce},
                          {"test_acc", result.evaluations[e].accuracy}});
    }
    const auto last10 = result.last10();
    const auto& final_eval = result.evaluations.back();
    return json{
        {"config", config_to_json(cfg)},
        {"status", "ok"},
        {"steps", result.records.size()},
        {"final", {{"train_ce", result.final_train_ce()}, {"test_ce", final_eval.mean_ce}, {"test_acc", final_eval.accuracy}}},
        {"last10", {{"test_ce", last10.mean_ce}, {"test_acc", last10.accuracy}}},
        {"epochs", std::move(epochs)},
        {"wall_ms", result.wall_ms},
    };
}

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    return json::parse(is);
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

}  // namespace itdm::report
