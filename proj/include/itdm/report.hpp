#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "itdm/trainer.hpp"

namespace itdm::report {

inline constexpr const char* kMetricsHeader =
    "epoch,step,train_ce,match_loss,sigma_med,test_ce,test_acc,classes_matched,wall_ms";

/// Shortest round-trip decimal form ("%.17g").
std::string format_double(double v);

/// One CSV row, no newline. Test fields are left empty when absent; wall_ms
/// is written as 0 unless `wall_clock` is set so that seeded runs stay byte-identical.
std::string metrics_row(const trainer::MetricsRecord& r, bool wall_clock);

void write_metrics_csv(std::ostream& os, const std::vector<trainer::MetricsRecord>& records, bool wall_clock);
std::vector<trainer::MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

/// Flat object keyed by TrainConfig field names.
nlohmann::json config_to_json(const trainer::TrainConfig& cfg);
/// Accepts the flat object or any object carrying it under "config".
/// Unknown keys are rejected.
trainer::TrainConfig config_from_json(const nlohmann::json& j, trainer::TrainConfig base = {});

nlohmann::json summary_json(const trainer::TrainConfig& cfg, const trainer::TrainResult& result);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace itdm::report
