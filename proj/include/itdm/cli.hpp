#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "itdm/trainer.hpp"

namespace itdm::cli {

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kDataError = 3,
    kDiverged = 4,
};

struct RunSpec {
    trainer::TrainConfig config;
    std::string out_dir = "itdm-out";
    std::vector<double> lambdas{0.2, 0.4, 0.6, 0.8, 1.0};
    std::size_t seeds = 1;
    bool wall_clock = false;
    bool save_checkpoint = false;
};

/// `args` excludes the program and subcommand names.
int run_single(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_grid(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// `itdm run ...` / `itdm grid ...`.
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace itdm::cli
