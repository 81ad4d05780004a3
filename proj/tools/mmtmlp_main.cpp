#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmtmlp/commands.hpp"
#include "mmtmlp/config.hpp"

namespace {

using mmtmlp::commands::kExitConfig;

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string output;
  std::string dataset;
  bool force = false;

  mmtmlp::config::RunConfig load() const {
    std::vector<std::string> all = overrides;
    if (!seed.empty()) all.push_back("seed=" + seed);
    if (!output.empty()) all.push_back("output.dir=\"" + output + "\"");
    if (!dataset.empty()) all.push_back("dataset.path=\"" + dataset + "\"");
    if (force) all.emplace_back("output.force=true");
    return mmtmlp::config::load_run_config(config_path, all);
  }
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "JSON run config");
  cmd->add_option("--set", f.overrides, "override a config key, e.g. --set train.epochs=5")->take_all();
  cmd->add_option("--seed", f.seed, "shorthand for --set seed=N");
  cmd->add_option("-o,--output", f.output, "shorthand for --set output.dir=DIR");
  cmd->add_option("-d,--dataset", f.dataset, "shorthand for --set dataset.path=DIR");
  cmd->add_flag("--force", f.force, "shorthand for --set output.force=true");
  cmd->footer(mmtmlp::config::key_help_text());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stream temporal MLP action recognition: data prep, training, rate sweeps and CPU benchmarks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mmtmlp 0.1.0");

  ConfigFlags synth_flags;
  ConfigFlags train_flags;
  ConfigFlags sweep_flags;
  ConfigFlags bench_flags;
  ConfigFlags lengths_flags;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset at dataset.path");
  add_config_flags(synth, synth_flags);
  auto* train = app.add_subcommand("train", "train one model at one rate configuration");
  add_config_flags(train, train_flags);
  auto* sweep = app.add_subcommand("sweep", "train and time every grid point; write results and the Pareto front");
  add_config_flags(sweep, sweep_flags);
  auto* bench = app.add_subcommand("bench", "time one-window inference without training");
  add_config_flags(bench, bench_flags);

  mmtmlp::commands::NormalizeArgs norm;
  auto* normalize = app.add_subcommand("normalize", "normalize a hand-pose file frame by frame");
  normalize->add_option("input_file", norm.input, "hand-pose text file");
  normalize->add_option("output_file", norm.output, "normalized hand-pose file to write");
  normalize->add_option("--lengths", norm.reference_lengths, "\"unit\" or a reference-lengths file")
      ->capture_default_str();
  normalize->add_flag("--strict", norm.strict, "fail on a degenerate hand instead of zeroing it");
  normalize->add_option("--primary", norm.axes.primary, "keypoint rotated onto +z")->capture_default_str();
  normalize->add_option("--secondary", norm.axes.secondary, "keypoint fixing +x")->capture_default_str();

  std::vector<std::string> length_inputs;
  std::string length_output;
  auto* lengths = normalize->add_subcommand(
      "reference-lengths", "mean bone lengths of hand-pose files, or of the configured training split");
  lengths->add_option("inputs", length_inputs, "raw hand-pose files (default: the configured dataset)");
  lengths->add_option("--out", length_output, "lengths file to write")->required();
  add_config_flags(lengths, lengths_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (synth->parsed()) return mmtmlp::commands::cmd_synth(synth_flags.load(), std::cout);
    if (train->parsed()) return mmtmlp::commands::cmd_train(train_flags.load(), std::cout);
    if (sweep->parsed()) return mmtmlp::commands::cmd_sweep(sweep_flags.load(), std::cout);
    if (bench->parsed()) return mmtmlp::commands::cmd_bench(bench_flags.load(), std::cout);
    if (lengths->parsed()) {
      return mmtmlp::commands::cmd_reference_lengths(length_inputs, length_output, lengths_flags.load(), std::cout);
    }
    if (normalize->parsed()) return mmtmlp::commands::cmd_normalize(norm, std::cout, std::cerr);
  } catch (...) {
    return mmtmlp::commands::exit_code_for_current_exception(std::cerr);
  }
  return kExitConfig;
}
