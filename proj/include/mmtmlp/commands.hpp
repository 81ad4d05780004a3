#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "mmtmlp/config.hpp"

namespace mmtmlp::commands {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;

/// Maps the active exception (call inside a catch block) to an exit code and writes its
/// message to `err`.
int exit_code_for_current_exception(std::ostream& err);

int cmd_synth(const config::RunConfig& cfg, std::ostream& log);
/// Writes checkpoint.json, history.csv, reference_lengths.txt and config.json to output.dir.
int cmd_train(const config::RunConfig& cfg, std::ostream& log);
/// Writes results.csv (incrementally), results.json and pareto.csv to output.dir.
/// Exits 0 when at least one grid point trained successfully.
int cmd_sweep(const config::RunConfig& cfg, std::ostream& log);
/// Times the bench model for every grid point (or the configured rates) and prints CSV.
int cmd_bench(const config::RunConfig& cfg, std::ostream& log);

struct NormalizeArgs {
  std::string input;
  std::string output;
  std::string reference_lengths = "unit";  // "unit" or a lengths file
  bool strict = false;
  handpose::CanonicalAxes axes;
};
int cmd_normalize(const NormalizeArgs& args, std::ostream& log, std::ostream& err);

/// Per-edge mean bone lengths over the given hand-pose files, or over the training split
/// of the configured dataset when `inputs` is empty.
int cmd_reference_lengths(const std::vector<std::string>& inputs, const std::string& output,
                          const config::RunConfig& cfg, std::ostream& log);

}  // namespace mmtmlp::commands
