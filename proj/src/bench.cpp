#include "mmtmlp/bench.hpp"

#include <time.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmtmlp/error.hpp"

namespace mmtmlp::bench {

namespace fs = std::filesystem;

double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t n_classes) {
  if (labels.empty()) throw MetricError("macro F1 of an empty set");
  if (predictions.size() != labels.size()) {
    throw MetricError("macro F1: " + std::to_string(predictions.size()) + " predictions for " +
                      std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> tp(n_classes, 0);
  std::vector<std::size_t> fp(n_classes, 0);
  std::vector<std::size_t> fn(n_classes, 0);
  auto check = [n_classes](int c) {
    if (c < 0 || static_cast<std::size_t>(c) >= n_classes) {
      throw MetricError("class id " + std::to_string(c) + " outside [0, " + std::to_string(n_classes) + ")");
    }
    return static_cast<std::size_t>(c);
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t p = check(predictions[i]);
    const std::size_t y = check(labels[i]);
    if (p == y) {
      ++tp[y];
    } else {
      ++fp[p];
      ++fn[y];
    }
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++present;
  }
  return sum / static_cast<double>(present);
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw MeasurementError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw MeasurementError("quantile level must lie in [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + frac * (samples[hi] - samples[lo]);
}

double thread_cpu_seconds() {
  timespec ts{};
  if (clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts) != 0) throw MeasurementError("thread CPU clock unavailable");
  return static_cast<double>(ts.tv_sec) + 1e-9 * static_cast<double>(ts.tv_nsec);
}

namespace {

// Inputs for one forward call per sampled frame of a single-frame model.
std::vector<model::StreamInputs> per_frame_inputs(const model::Model& m, const model::StreamInputs& w) {
  std::vector<model::StreamInputs> out;
  const bool rgb = model::uses_rgb(m.kind());
  const std::size_t steps = rgb ? w.rgb.rows() : w.hp.rows();
  for (std::size_t t = 0; t < steps; ++t) {
    model::StreamInputs in;
    if (rgb) in.rgb = nn::slice_rows(w.rgb, t, t + 1);
    if (model::uses_hp(m.kind()) && w.hp.rows() > 0) {
      const std::size_t h = std::min(w.hp.rows() - 1, t * w.hp.rows() / steps);
      in.hp = nn::slice_rows(w.hp, h, h + 1);
    }
    out.push_back(std::move(in));
  }
  return out;
}

}  // namespace

CpuStats measure_cpu(model::Model& m, const model::StreamInputs& window, const MeasureOptions& opts) {
  if (opts.threads != 1) {
    throw MeasurementError("CPU measurement requires a single thread, got " + std::to_string(opts.threads));
  }
  if (opts.reps < 5) throw MeasurementError("CPU measurement needs at least 5 repetitions");
  std::vector<model::StreamInputs> calls;
  if (model::is_sequence_model(m.kind())) {
    calls.push_back(window);
  } else {
    calls = per_frame_inputs(m, window);
  }
  if (calls.empty()) throw MeasurementError("nothing to measure: the window has no frames");

  double sink = 0.0;
  auto run = [&] {
    for (const auto& in : calls) sink += m.forward(in)(0, 0);
  };
  for (std::size_t i = 0; i < opts.warmup; ++i) run();
  CpuStats stats;
  stats.reps = opts.reps;
  stats.warmup = opts.warmup;
  stats.thread_count = 1;
  stats.samples.reserve(opts.reps);
  for (std::size_t i = 0; i < opts.reps; ++i) {
    const double t0 = thread_cpu_seconds();
    run();
    stats.samples.push_back(thread_cpu_seconds() - t0);
  }
  if (!std::isfinite(sink)) throw MeasurementError("model produced non-finite output during measurement");
  stats.median_cpu_seconds = quantile(stats.samples, 0.5);
  stats.p10 = quantile(stats.samples, 0.1);
  stats.p90 = quantile(stats.samples, 0.9);
  return stats;
}

model::StreamInputs synthetic_inputs(const model::ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  model::StreamInputs in;
  const bool single = !model::is_sequence_model(cfg.kind);
  std::size_t t_rgb = cfg.rgb_stream() ? cfg.t_rgb : 0;
  std::size_t t_hp = cfg.hp_stream() ? cfg.t_hp : 0;
  if (cfg.kind == model::ModelKind::fusionnet) t_hp = t_rgb;
  if (single && t_rgb == 0 && t_hp == 0) t_hp = 1;
  in.rgb = nn::Matrix(t_rgb, cfg.rgb_input_width());
  for (double& v : in.rgb.data()) v = normal(rng);
  in.hp = nn::Matrix(t_hp, handpose::kFrameFeatures);
  for (double& v : in.hp.data()) v = 0.1 * normal(rng);
  return in;
}

CpuStats measure_cpu(const model::ModelConfig& cfg, const sampling::RateConfig& rates, const MeasureOptions& opts,
                     std::uint64_t seed) {
  const model::ModelConfig c = cfg.with_rates(rates);
  auto m = model::make_model(c, seed);
  return measure_cpu(*m, synthetic_inputs(c, seed + 1), opts);
}

sampling::RateConfig point_rates(const SweepPoint& p, const sampling::RateConfig& base, double window_seconds) {
  using model::ModelKind;
  if (p.kind == ModelKind::rgb_seq && p.f_hp != 0.0) throw ConfigError("rgb_seq grid points must use f_hp = 0");
  if (p.kind == ModelKind::hp_mlp && p.f_rgb != 0.0) throw ConfigError("hp_mlp grid points must use f_rgb = 0");
  if (p.kind == ModelKind::fusionnet && p.f_rgb != p.f_hp) {
    throw ConfigError("fusionnet runs both extractors per frame; grid points need f_rgb = f_hp");
  }
  sampling::RateConfig r = base;
  r.f_rgb = p.f_rgb;
  r.f_hp = p.f_hp;
  r.window_seconds = window_seconds;
  r.validate();
  return r;
}

handpose::SkeletonTopology resolve_topology(const std::string& reference_lengths, const dataset::Dataset& data,
                                            std::span<const std::size_t> train_takes) {
  if (reference_lengths == "unit") return handpose::SkeletonTopology::hand_unit();
  if (reference_lengths == "train_mean") {
    std::vector<handpose::HandFrame> frames;
    for (std::size_t t : train_takes) {
      const auto& hp = data.takes.at(t).hp_frames;
      frames.insert(frames.end(), hp.begin(), hp.end());
    }
    return handpose::SkeletonTopology::hand(
        handpose::mean_edge_lengths(frames, handpose::SkeletonTopology::hand_unit()));
  }
  return handpose::read_reference_lengths(reference_lengths);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr const char* kCsvHeader =
    "model_kind,f_rgb,f_hp,macro_f1_action,macro_f1_verb,cpu_median_s,cpu_p10_s,cpu_p90_s,seed,status";

bool same_point(const SweepRow& r, const SweepPoint& p, std::uint64_t seed) {
  return r.kind == p.kind && r.f_rgb == p.f_rgb && r.f_hp == p.f_hp && r.seed == seed;
}

void write_atomic(const std::string& path, const std::string& text) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp";
  std::error_code ec;
  if (target.has_parent_path()) fs::create_directories(target.parent_path(), ec);
  if (ec) throw IoError("cannot create '" + target.parent_path().string() + "': " + ec.message());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot replace '" + path + "': " + ec.message());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path, line, "expected a number, got '" + s + "'");
  }
}

nlohmann::json row_to_json(const SweepRow& r) {
  return {{"model_kind", model::to_string(r.kind)},
          {"f_rgb", r.f_rgb},
          {"f_hp", r.f_hp},
          {"macro_f1_action", r.macro_f1_action},
          {"macro_f1_verb", r.macro_f1_verb},
          {"cpu",
           {{"median_s", r.cpu.median_cpu_seconds},
            {"p10_s", r.cpu.p10},
            {"p90_s", r.cpu.p90},
            {"reps", r.cpu.reps},
            {"warmup", r.cpu.warmup},
            {"thread_count", r.cpu.thread_count}}},
          {"checkpoint", r.checkpoint},
          {"seed", r.seed},
          {"status", r.status},
          {"message", r.message}};
}

SweepRow row_from_json(const nlohmann::json& j) {
  SweepRow r;
  r.kind = model::parse_model_kind(j.at("model_kind").get<std::string>());
  r.f_rgb = j.at("f_rgb").get<double>();
  r.f_hp = j.at("f_hp").get<double>();
  r.macro_f1_action = j.at("macro_f1_action").get<double>();
  r.macro_f1_verb = j.at("macro_f1_verb").get<double>();
  const auto& c = j.at("cpu");
  r.cpu.median_cpu_seconds = c.at("median_s").get<double>();
  r.cpu.p10 = c.at("p10_s").get<double>();
  r.cpu.p90 = c.at("p90_s").get<double>();
  r.cpu.reps = c.value("reps", std::size_t{0});
  r.cpu.warmup = c.value("warmup", std::size_t{0});
  r.cpu.thread_count = c.value("thread_count", std::size_t{1});
  r.checkpoint = j.value("checkpoint", std::string{});
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.value("status", std::string{"ok"});
  r.message = j.value("message", std::string{});
  return r;
}

}  // namespace

std::string results_csv(std::span<const SweepRow> rows) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += std::string(model::to_string(r.kind)) + ',' + fmt(r.f_rgb) + ',' + fmt(r.f_hp) + ',' +
           fmt(r.macro_f1_action) + ',' + fmt(r.macro_f1_verb) + ',' + fmt(r.cpu.median_cpu_seconds) + ',' +
           fmt(r.cpu.p10) + ',' + fmt(r.cpu.p90) + ',' + std::to_string(r.seed) + ',' + r.status + '\n';
  }
  return out;
}

void export_results(const std::string& path, std::span<const SweepRow> rows, ExportFormat format) {
  if (format == ExportFormat::csv) {
    write_atomic(path, results_csv(rows));
    return;
  }
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back(row_to_json(r));
  write_atomic(path, arr.dump(2) + "\n");
}

std::vector<SweepRow> import_results(const std::string& path, ExportFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open results '" + path + "'");
  std::vector<SweepRow> rows;
  if (format == ExportFormat::json) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
      for (const auto& e : j) rows.push_back(row_from_json(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, 0, e.what());
    }
    return rows;
  }
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kCsvHeader) throw ParseError(path, 1, "unexpected results header");
      continue;
    }
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 10) throw ParseError(path, lineno, "expected 10 columns");
    SweepRow r;
    try {
      r.kind = model::parse_model_kind(cells[0]);
    } catch (const ConfigError& e) {
      throw ParseError(path, lineno, e.what());
    }
    r.f_rgb = parse_double(cells[1], path, lineno);
    r.f_hp = parse_double(cells[2], path, lineno);
    r.macro_f1_action = parse_double(cells[3], path, lineno);
    r.macro_f1_verb = parse_double(cells[4], path, lineno);
    r.cpu.median_cpu_seconds = parse_double(cells[5], path, lineno);
    r.cpu.p10 = parse_double(cells[6], path, lineno);
    r.cpu.p90 = parse_double(cells[7], path, lineno);
    try {
      r.seed = std::stoull(cells[8]);
    } catch (const std::exception&) {
      throw ParseError(path, lineno, "bad seed '" + cells[8] + "'");
    }
    if (cells[9] != "ok" && cells[9] != "failed") throw ParseError(path, lineno, "bad status '" + cells[9] + "'");
    r.status = cells[9];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<SweepRow> run_sweep(std::span<const SweepPoint> grid, const dataset::Dataset& data,
                                const SweepOptions& opts, std::uint64_t seed,
                                const std::function<void(const SweepRow&)>& on_row) {
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  for (const auto& p : grid) point_rates(p, opts.rates, opts.rates.window_seconds);

  std::vector<SweepRow> previous;
  if (!opts.results_csv.empty() && fs::exists(opts.results_csv)) {
    previous = import_results(opts.results_csv, ExportFormat::csv);
  }

  dataset::SplitOptions split_opts = opts.split;
  split_opts.seed = seed;
  const dataset::WindowSplit split = dataset::split_and_window(data.takes, opts.rates, split_opts);
  const auto topo = resolve_topology(opts.reference_lengths, data, split.train_takes);
  const dataset::PreparedDataset prepared = dataset::prepare_dataset(data, topo, false, opts.axes);

  std::vector<SweepRow> rows;
  for (const auto& p : grid) {
    const auto hit = std::find_if(previous.begin(), previous.end(),
                                  [&](const SweepRow& r) { return same_point(r, p, seed) && r.ok(); });
    if (hit != previous.end()) {
      rows.push_back(*hit);
      if (on_row) on_row(rows.back());
      continue;
    }
    SweepRow row;
    row.kind = p.kind;
    row.f_rgb = p.f_rgb;
    row.f_hp = p.f_hp;
    row.seed = seed;

    const auto rates = point_rates(p, opts.rates, opts.rates.window_seconds);
    model::ModelConfig cfg = opts.model;
    cfg.kind = p.kind;
    cfg.n_actions = prepared.n_actions;
    training::TrainOptions topts = opts.train;
    topts.seed = seed;
    try {
      auto result = training::train(cfg, prepared, split, rates, topts);
      const auto ev = training::evaluate(*result.model, prepared, split.val.empty() ? split.train : split.val, rates);
      row.macro_f1_action = ev.f1_action;
      row.macro_f1_verb = ev.f1_verb;
      if (!opts.checkpoint_dir.empty()) {
        fs::create_directories(opts.checkpoint_dir);
        const std::string name = std::string(model::to_string(p.kind)) + "_rgb" + fmt(p.f_rgb) + "_hp" +
                                 fmt(p.f_hp) + "_seed" + std::to_string(seed) + ".json";
        row.checkpoint = (fs::path(opts.checkpoint_dir) / name).string();
        model::save_checkpoint(row.checkpoint, *result.model,
                               {{"f_rgb", p.f_rgb}, {"f_hp", p.f_hp}, {"seed", seed}, {"best_epoch", result.best_epoch}});
      }
    } catch (const DivergenceError& e) {
      row.status = "failed";
      row.message = e.what();
    }

    model::ModelConfig bench_cfg = opts.bench_model;
    bench_cfg.kind = p.kind;
    row.cpu = measure_cpu(bench_cfg, point_rates(p, opts.rates, opts.bench_window_seconds), opts.measure, seed);

    rows.push_back(std::move(row));
    if (!opts.results_csv.empty()) export_results(opts.results_csv, rows, ExportFormat::csv);
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::vector<SweepRow> pareto_front(std::span<const SweepRow> rows) {
  std::vector<SweepRow> front;
  for (const auto& a : rows) {
    if (!a.ok()) continue;
    bool dominated = false;
    for (const auto& b : rows) {
      if (&a == &b || !b.ok()) continue;
      const bool no_worse = b.macro_f1_action >= a.macro_f1_action &&
                            b.cpu.median_cpu_seconds <= a.cpu.median_cpu_seconds;
      const bool better = b.macro_f1_action > a.macro_f1_action ||
                          b.cpu.median_cpu_seconds < a.cpu.median_cpu_seconds;
      if (no_worse && better) {
        dominated = true;
        break;
      }
    }
    if (!dominated) front.push_back(a);
  }
  std::stable_sort(front.begin(), front.end(), [](const SweepRow& x, const SweepRow& y) {
    if (x.cpu.median_cpu_seconds != y.cpu.median_cpu_seconds) {
      return x.cpu.median_cpu_seconds < y.cpu.median_cpu_seconds;
    }
    return x.macro_f1_action > y.macro_f1_action;
  });
  return front;
}

}  // namespace mmtmlp::bench
