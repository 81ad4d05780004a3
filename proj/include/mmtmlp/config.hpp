#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmtmlp/bench.hpp"
#include "mmtmlp/dataset.hpp"
#include "mmtmlp/model.hpp"
#include "mmtmlp/sampling.hpp"
#include "mmtmlp/training.hpp"

namespace mmtmlp::config {

/// One product block of the sweep grid: every (f_rgb, f_hp) pair for one model kind.
struct GridBlock {
  model::ModelKind kind = model::ModelKind::mm_tmlp;
  std::vector<double> f_rgb;
  std::vector<double> f_hp;
};

struct DatasetSection {
  std::string path;  // dataset directory; empty means "generate from synth in memory"
  dataset::SynthSpec synth;
};

struct NormalizeSection {
  std::string reference_lengths = "train_mean";  // "train_mean", "unit", or a file
  bool strict = false;
  handpose::CanonicalAxes axes;
};

struct OutputSection {
  std::string dir = "run";
  bool force = false;
};

struct RunConfig {
  std::uint64_t seed = 1;
  DatasetSection dataset;
  model::ModelConfig model;
  std::optional<std::size_t> n_actions;  // set only when the config names it
  sampling::RateConfig rates;
  std::vector<GridBlock> grid;
  dataset::SplitOptions split;
  training::TrainOptions train;
  bench::MeasureOptions measure;
  double bench_window_seconds = 1.0;
  model::ModelConfig bench_model = default_bench_model();
  NormalizeSection normalize;
  OutputSection output;

  static model::ModelConfig default_bench_model();
};

enum class Command { synth, train, sweep, bench, normalize };

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// Reads a JSON config file (missing file: ConfigError) and applies `key=value`
/// overrides. Values parse as JSON when possible, otherwise as strings.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);
void apply_override(nlohmann::json& j, std::string_view assignment);

/// Everything a command checks before touching the filesystem.
void validate(const RunConfig& cfg, Command cmd);

/// Grid blocks expanded in order: kind, then f_rgb, then f_hp.
std::vector<bench::SweepPoint> expand_grid(const std::vector<GridBlock>& grid);

struct KeyDoc {
  std::string key;
  std::string description;
};
/// One entry per accepted key (dotted path; `bench.model.*` mirrors `model.*`).
const std::vector<KeyDoc>& key_docs();
std::string key_help_text();

}  // namespace mmtmlp::config
