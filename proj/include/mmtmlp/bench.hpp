#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmtmlp/dataset.hpp"
#include "mmtmlp/model.hpp"
#include "mmtmlp/training.hpp"

namespace mmtmlp::bench {

/// Unweighted mean of per-class F1 = 2TP / (2TP + FP + FN) over classes present in
/// labels or predictions.
double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes);

struct CpuStats {
  double median_cpu_seconds = 0.0;
  double p10 = 0.0;
  double p90 = 0.0;
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::size_t thread_count = 1;
  std::vector<double> samples;
};

struct MeasureOptions {
  std::size_t reps = 15;
  std::size_t warmup = 3;
  std::size_t threads = 1;
};

/// Linear-interpolated quantile of unsorted samples, q in [0, 1].
double quantile(std::vector<double> samples, double q);

/// CPU seconds of the calling thread.
double thread_cpu_seconds();

/// Times one-window inference: every sampled frame goes through its extractor, then the
/// temporal model and head. Single-frame models run once per sampled frame.
CpuStats measure_cpu(model::Model& m, const model::StreamInputs& window, const MeasureOptions& opts);

/// Builds a model for `rates` (normally a one-second window) with seeded parameters and
/// fixed synthetic inputs, then measures it.
CpuStats measure_cpu(const model::ModelConfig& cfg, const sampling::RateConfig& rates, const MeasureOptions& opts,
                     std::uint64_t seed = 0);

/// Synthetic inputs shaped for `cfg` at the given sequence lengths.
model::StreamInputs synthetic_inputs(const model::ModelConfig& cfg, std::uint64_t seed);

struct SweepPoint {
  model::ModelKind kind = model::ModelKind::mm_tmlp;
  double f_rgb = 30.0;
  double f_hp = 30.0;
  friend bool operator==(const SweepPoint&, const SweepPoint&) = default;
};

struct SweepRow {
  model::ModelKind kind = model::ModelKind::mm_tmlp;
  double f_rgb = 0.0;
  double f_hp = 0.0;
  double macro_f1_action = 0.0;
  double macro_f1_verb = 0.0;
  CpuStats cpu;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::string status = "ok";  // "ok" or "failed"
  std::string message;

  bool ok() const { return status == "ok"; }
};

struct SweepOptions {
  model::ModelConfig model;        // trained architecture (sequence lengths are filled per point)
  model::ModelConfig bench_model;  // architecture timed for the CPU column
  sampling::RateConfig rates;      // native rate and training window; frequencies come from the grid
  double bench_window_seconds = 1.0;
  training::TrainOptions train;
  dataset::SplitOptions split;
  MeasureOptions measure;
  std::string reference_lengths = "train_mean";  // "train_mean", "unit", or a file path
  handpose::CanonicalAxes axes;
  std::string results_csv;     // rewritten after every row; existing rows are reused (resume)
  std::string checkpoint_dir;  // empty: checkpoints are not written
};

/// Effective rate configuration of a grid point for the given window length.
sampling::RateConfig point_rates(const SweepPoint& p, const sampling::RateConfig& base, double window_seconds);

/// Reference lengths resolved from the option string and the training takes.
handpose::SkeletonTopology resolve_topology(const std::string& reference_lengths, const dataset::Dataset& data,
                                            std::span<const std::size_t> train_takes);

/// Trains, evaluates and times every grid point in order. Training failures produce a
/// failed row and the sweep continues.
std::vector<SweepRow> run_sweep(std::span<const SweepPoint> grid, const dataset::Dataset& data,
                                const SweepOptions& opts, std::uint64_t seed,
                                const std::function<void(const SweepRow&)>& on_row = {});

/// Rows not dominated in (action F1 up, CPU down), sorted by CPU ascending.
std::vector<SweepRow> pareto_front(std::span<const SweepRow> rows);

enum class ExportFormat { csv, json };

void export_results(const std::string& path, std::span<const SweepRow> rows, ExportFormat format);
std::vector<SweepRow> import_results(const std::string& path, ExportFormat format);

std::string results_csv(std::span<const SweepRow> rows);

}  // namespace mmtmlp::bench
