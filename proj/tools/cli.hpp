#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cissl/config.hpp"
#include "cissl/eval.hpp"

namespace cissl::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitNumeric = 3,
};

// Entry point shared by the binary and the tests. args excludes the program
// name. Human-readable output goes to out, diagnostics to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// One training run into dir: config.txt, manifest.json, metrics.csv,
// summary.json and checkpoint/. Returns the final test-split report; throws
// on failure.
EvalReport train_into(const ExperimentConfig& cfg, const std::filesystem::path& dir);

struct SweepCell {
  std::string name;  // key=value pairs and the seed joined by "__"
  ExperimentConfig config;
};

// Cartesian product of grid entries ("key=v1,v2,...") and seeds, in
// row-major order with the seed varying fastest.
std::vector<SweepCell> expand_sweep(const ExperimentConfig& base,
                                    const std::vector<std::string>& grid,
                                    const std::vector<std::uint64_t>& seeds);

}  // namespace cissl::cli
