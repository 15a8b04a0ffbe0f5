#include "itdm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "itdm/report.hpp"

namespace itdm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct HelpRequested {
    std::string text;
};

std::vector<double> parse_lambdas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw UsageError("--lambdas: '" + item + "' is not a number");
        if (!(v >= 0.0) || !std::isfinite(v)) throw UsageError("--lambdas: every lambda must be >= 0");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("--lambdas: empty list");
    return out;
}

// Pulls `--config <file>` out first so that explicit flags override it.
trainer::TrainConfig base_config(const std::vector<std::string>& args) {
    trainer::TrainConfig cfg;
    for (std::size_t i = 0; i < args.size(); ++i) {
        std::string path;
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
        if (path.empty()) continue;
        try {
            cfg = report::config_from_json(report::read_json(path));
        } catch (const std::exception& e) {
            throw UsageError("--config " + path + ": " + e.what());
        }
    }
    return cfg;
}

RunSpec parse(const std::string& name, const std::vector<std::string>& args, bool grid) {
    RunSpec spec;
    spec.config = base_config(args);
    auto& cfg = spec.config;
    auto& ds = cfg.dataset;

    CLI::App app{grid ? "Run the lambda grid against the lambda = 0 baseline" : "Train one configuration", name};
    std::string config_path;
    app.add_option("--config", config_path, "Flat JSON config (TrainConfig field names)");
    app.add_option("--dataset", ds.name, "fmnist, kmnist or blobs")->check(CLI::IsMember({"fmnist", "kmnist", "blobs"}));
    app.add_option("--train-images", ds.train_images);
    app.add_option("--train-labels", ds.train_labels);
    app.add_option("--test-images", ds.test_images);
    app.add_option("--test-labels", ds.test_labels);
    app.add_option("--subset-n", ds.subset_n, "Seeded random training subset size (0 = all)");
    app.add_option("--blobs-classes", ds.blobs_classes);
    app.add_option("--blobs-per-class", ds.blobs_per_class);
    app.add_option("--blobs-test-per-class", ds.blobs_test_per_class);
    app.add_option("--blobs-dim", ds.blobs_dim);
    app.add_option("--blobs-separation", ds.blobs_separation);

    std::string arch{nn::to_string(cfg.arch)};
    std::string match{trainer::to_string(cfg.match_mode)};
    std::string use_sqrt = cfg.use_sqrt ? "true" : "false";
    std::string lr_decay = trainer::format_lr_schedule(cfg.lr_schedule);
    std::string lambdas;
    app.add_option("--arch", arch)->check(CLI::IsMember({"mlp", "smallcnn"}));
    app.add_option("--match", match)->check(CLI::IsMember({"none", "joint", "class"}));
    app.add_option("--lambda", cfg.lambda)->check(CLI::NonNegativeNumber);
    app.add_option("--use-sqrt", use_sqrt)->check(CLI::IsMember({"true", "false"}));
    app.add_option("--kernels", cfg.kernels)->check(CLI::PositiveNumber);
    app.add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber);
    app.add_option("--epochs", cfg.epochs)->check(CLI::PositiveNumber);
    app.add_option("--lr", cfg.lr)->check(CLI::PositiveNumber);
    app.add_option("--momentum", cfg.momentum)->check(CLI::Range(0.0, 0.999999));
    app.add_option("--lr-decay", lr_decay, "epoch:multiplier,...");
    app.add_option("--feature-dim", cfg.feature_dim)->check(CLI::PositiveNumber);
    app.add_option("--seed", cfg.seed);
    app.add_option("--out", spec.out_dir, "Output directory");
    app.add_flag("--wall-clock", spec.wall_clock, "Write measured wall_ms into metrics.csv");
    app.add_flag("--save-checkpoint", spec.save_checkpoint, "Write model.ckpt next to the metrics");
    if (grid) {
        app.add_option("--lambdas", lambdas, "Comma-separated lambda grid; 0 is always added");
        app.add_option("--seeds", spec.seeds, "Replicates per lambda with seeds seed..seed+N-1")
            ->check(CLI::PositiveNumber);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested{app.help()};
    } catch (const CLI::ParseError& e) {
        throw UsageError(e.what());
    }

    try {
        cfg.arch = nn::parse_arch(arch);
        cfg.match_mode = trainer::parse_match_mode(match);
        cfg.use_sqrt = use_sqrt == "true";
        cfg.lr_schedule = trainer::parse_lr_schedule(lr_decay);
        if (!lambdas.empty()) spec.lambdas = parse_lambdas(lambdas);
        cfg.validate();
    } catch (const UsageError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (grid && cfg.match_mode == trainer::MatchMode::none) {
        throw UsageError("grid: --match must be joint or class");
    }
    return spec;
}

struct RunOutcome {
    int code = kOk;
    json summary;
};

RunOutcome execute(const trainer::TrainConfig& cfg, const fs::path& dir, const RunSpec& spec,
                   const std::pair<data::Dataset, data::Dataset>& datasets, std::ostream& err) {
    fs::create_directories(dir);
    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    csv << report::kMetricsHeader << '\n';
    const auto sink = [&](const trainer::MetricsRecord& r) { csv << report::metrics_row(r, spec.wall_clock) << '\n'; };

    RunOutcome outcome;
    try {
        const auto result = trainer::train(cfg, datasets.first, datasets.second, sink);
        outcome.summary = report::summary_json(cfg, result);
        if (spec.save_checkpoint) nn::save_checkpoint(result.model, dir / "model.ckpt");
    } catch (const trainer::TrainingDiverged& e) {
        err << "itdm: " << e.what() << '\n';
        outcome.code = kDiverged;
        outcome.summary = {{"config", report::config_to_json(cfg)}, {"status", "diverged"}, {"error", e.what()}};
    }
    csv.flush();
    report::write_json(dir / "summary.json", outcome.summary);
    return outcome;
}

template <typename Body>
int guarded(std::ostream& out, std::ostream& err, Body body) {
    try {
        return body();
    } catch (const HelpRequested& h) {
        out << h.text;
        return kOk;
    } catch (const UsageError& e) {
        err << e.what() << '\n';
        return kUsage;
    } catch (const data::IdxError& e) {
        err << "itdm: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "itdm: " << e.what() << '\n';
        return kDataError;
    }
}

std::string lambda_label(double lambda) {
    std::ostringstream os;
    os << lambda;
    return os.str();
}

}  // namespace

int run_single(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded(out, err, [&]() -> int {
        const RunSpec spec = parse("itdm run", args, false);
        const auto datasets = trainer::load_datasets(spec.config.dataset, spec.config.seed);
        const RunOutcome r = execute(spec.config, spec.out_dir, spec, datasets, err);
        if (r.code == kOk) {
            out << "test_acc " << r.summary["final"]["test_acc"].get<double>() << " test_ce "
                << r.summary["final"]["test_ce"].get<double>() << " -> " << spec.out_dir << '\n';
        }
        return r.code;
    });
}

int run_grid(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return guarded(out, err, [&]() -> int {
        const RunSpec spec = parse("itdm grid", args, true);
        std::vector<double> lambdas = spec.lambdas;
        lambdas.push_back(0.0);
        std::sort(lambdas.begin(), lambdas.end());
        lambdas.erase(std::unique(lambdas.begin(), lambdas.end()), lambdas.end());

        struct Row {
            double lambda;
            double test_acc = 0.0;
            double test_ce = 0.0;
            double train_ce = 0.0;
        };
        std::vector<Row> rows;
        json runs = json::array();
        int code = kOk;
        for (double lambda : lambdas) {
            Row row{lambda};
            for (std::size_t r = 0; r < spec.seeds; ++r) {
                trainer::TrainConfig cfg = spec.config;
                cfg.lambda = lambda;
                cfg.seed = spec.config.seed + r;
                const auto datasets = trainer::load_datasets(cfg.dataset, cfg.seed);
                const fs::path dir = fs::path(spec.out_dir) / ("lambda_" + lambda_label(lambda)) /
                                     ("seed_" + std::to_string(cfg.seed));
                const RunOutcome o = execute(cfg, dir, spec, datasets, err);
                if (o.code != kOk) {
                    code = o.code;
                    continue;
                }
                row.test_acc += o.summary["last10"]["test_acc"].get<double>();
                row.test_ce += o.summary["last10"]["test_ce"].get<double>();
                row.train_ce += o.summary["final"]["train_ce"].get<double>();
                runs.push_back({{"lambda", lambda}, {"seed", cfg.seed}, {"dir", dir.string()}});
            }
            const double n = static_cast<double>(spec.seeds);
            row.test_acc /= n;
            row.test_ce /= n;
            row.train_ce /= n;
            rows.push_back(row);
        }
        if (code != kOk) return code;

        const Row& base = rows.front();
        fs::create_directories(spec.out_dir);
        std::ofstream csv(fs::path(spec.out_dir) / "comparison.csv");
        csv << "lambda,test_acc,delta_acc,test_ce,delta_ce,train_ce\n";
        json table = json::array();
        for (const Row& r : rows) {
            csv << report::format_double(r.lambda) << ',' << report::format_double(r.test_acc) << ','
                << report::format_double(r.test_acc - base.test_acc) << ',' << report::format_double(r.test_ce) << ','
                << report::format_double(r.test_ce - base.test_ce) << ',' << report::format_double(r.train_ce) << '\n';
            table.push_back({{"lambda", r.lambda},
                             {"test_acc", r.test_acc},
                             {"delta_acc", r.test_acc - base.test_acc},
                             {"test_ce", r.test_ce},
                             {"delta_ce", r.test_ce - base.test_ce},
                             {"train_ce", r.train_ce}});
        }

        // Best/worst among λ > 0; ties resolve to the smaller λ.
        const auto matched = rows.size() > 1 ? std::span(rows).subspan(1) : std::span(rows);
        const auto by_acc = std::minmax_element(matched.begin(), matched.end(),
                                                [](const Row& a, const Row& b) { return a.test_acc < b.test_acc; });
        const auto by_ce = std::minmax_element(matched.begin(), matched.end(),
                                               [](const Row& a, const Row& b) { return a.test_ce < b.test_ce; });
        const json extremes = {
            {"best_acc_lambda", by_acc.second->lambda},
            {"worst_acc_lambda", by_acc.first->lambda},
            {"best_ce_lambda", by_ce.first->lambda},
            {"worst_ce_lambda", by_ce.second->lambda},
        };
        report::write_json(fs::path(spec.out_dir) / "grid_summary.json",
                           {{"config", report::config_to_json(spec.config)},
                            {"seeds", spec.seeds},
                            {"rows", table},
                            {"extremes", extremes},
                            {"runs", runs}});

        out << std::left << std::setw(14) << "" << std::setw(8) << "lambda" << std::setw(10) << "acc%"
            << std::setw(10) << "dAcc" << std::setw(10) << "CE" << "dCE\n";
        const auto line = [&](const std::string& label, const Row& r) {
            out << std::left << std::setw(14) << label << std::setw(8) << r.lambda << std::fixed << std::setprecision(2)
                << std::setw(10) << 100.0 * r.test_acc << std::setw(10) << 100.0 * (r.test_acc - base.test_acc)
                << std::setprecision(4) << std::setw(10) << r.test_ce << (r.test_ce - base.test_ce) << '\n'
                << std::defaultfloat;
        };
        line("w/o ITDM", base);
        line("w/ ITDM (B)", *by_acc.second);
        line("w/ ITDM (W)", *by_acc.first);
        out << "all lambdas:\n";
        for (const Row& r : rows) line("", r);
        return kOk;
    });
}

int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err) {
    const std::string usage = "usage: itdm {run|grid} [flags]   (itdm run --help for flags)\n";
    if (argc < 2) {
        err << usage;
        return kUsage;
    }
    const std::string command = argv[1];
    const std::vector<std::string> args(argv + 2, argv + argc);
    if (command == "run") return run_single(args, out, err);
    if (command == "grid") return run_grid(args, out, err);
    if (command == "--help" || command == "-h") {
        out << usage;
        return kOk;
    }
    err << "unknown command '" << command << "'\n" << usage;
    return kUsage;
}

}  // namespace itdm::cli
