#include "mmtmlp/commands.hpp"

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>

#include "mmtmlp/error.hpp"

namespace mmtmlp::commands {

namespace fs = std::filesystem;

namespace {

dataset::Dataset load_data(const config::RunConfig& cfg) {
  if (cfg.dataset.path.empty()) return dataset::synth_dataset(cfg.dataset.synth);
  return dataset::load_dataset(cfg.dataset.path);
}

dataset::SplitOptions split_options(const config::RunConfig& cfg) {
  dataset::SplitOptions s = cfg.split;
  s.seed = cfg.seed;
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

}  // namespace

int exit_code_for_current_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_synth(const config::RunConfig& cfg, std::ostream& log) {
  config::validate(cfg, config::Command::synth);
  if (fs::exists(cfg.dataset.path) && !cfg.output.force) {
    throw ConfigError("output '" + cfg.dataset.path + "' already exists (use --force to overwrite)");
  }
  const auto data = dataset::synth_dataset(cfg.dataset.synth);
  dataset::write_dataset(cfg.dataset.path, data, cfg.output.force);
  log << "wrote " << data.takes.size() << " takes (" << data.n_actions() << " actions, " << data.n_verbs()
      << " verbs) to " << cfg.dataset.path << '\n';
  return kExitOk;
}

int cmd_train(const config::RunConfig& cfg, std::ostream& log) {
  config::validate(cfg, config::Command::train);
  const auto data = load_data(cfg);
  const auto split = dataset::split_and_window(data.takes, cfg.rates, split_options(cfg));
  const auto topo = bench::resolve_topology(cfg.normalize.reference_lengths, data, split.train_takes);
  const auto prepared = dataset::prepare_dataset(data, topo, cfg.normalize.strict, cfg.normalize.axes);
  if (prepared.degenerate_hands > 0) log << "zeroed " << prepared.degenerate_hands << " degenerate hands\n";

  model::ModelConfig mcfg = cfg.model;
  mcfg.n_actions = cfg.n_actions.value_or(prepared.n_actions);
  log << "training " << model::to_string(mcfg.kind) << " on " << split.train.size() << " windows ("
      << split.val.size() << " validation)\n";

  const fs::path dir(cfg.output.dir);
  make_dir(dir);
  auto result = training::train(mcfg, prepared, split, cfg.rates, cfg.train, [&](const training::EpochRecord& r) {
    log << "epoch " << r.epoch << " loss " << short_fmt(r.train_loss) << " val_loss " << short_fmt(r.val_loss)
        << " f1_action " << short_fmt(r.val_f1_action) << " f1_verb " << short_fmt(r.val_f1_verb) << '\n';
  });

  training::write_history_csv((dir / "history.csv").string(), result.history);
  handpose::write_reference_lengths((dir / "reference_lengths.txt").string(), topo);
  write_text(dir / "config.json", config::to_json(cfg).dump(2) + "\n");
  model::save_checkpoint((dir / "checkpoint.json").string(), *result.model,
                         {{"seed", cfg.seed},
                          {"best_epoch", result.best_epoch},
                          {"rates",
                           {{"native_hz", cfg.rates.native_hz},
                            {"f_rgb", cfg.rates.f_rgb},
                            {"f_hp", cfg.rates.f_hp},
                            {"window_seconds", cfg.rates.window_seconds}}}});
  log << "best epoch " << result.best_epoch << "; wrote " << dir.string() << '\n';
  return kExitOk;
}

int cmd_sweep(const config::RunConfig& cfg, std::ostream& log) {
  config::validate(cfg, config::Command::sweep);
  const auto grid = config::expand_grid(cfg.grid);
  const auto data = load_data(cfg);

  const fs::path dir(cfg.output.dir);
  bench::SweepOptions opts;
  opts.model = cfg.model;
  opts.bench_model = cfg.bench_model;
  opts.rates = cfg.rates;
  opts.bench_window_seconds = cfg.bench_window_seconds;
  opts.train = cfg.train;
  opts.split = cfg.split;
  opts.measure = cfg.measure;
  opts.reference_lengths = cfg.normalize.reference_lengths;
  opts.axes = cfg.normalize.axes;
  opts.results_csv = (dir / "results.csv").string();
  opts.checkpoint_dir = (dir / "checkpoints").string();

  make_dir(dir);
  write_text(dir / "config.json", config::to_json(cfg).dump(2) + "\n");
  const auto rows = bench::run_sweep(grid, data, opts, cfg.seed, [&](const bench::SweepRow& r) {
    log << model::to_string(r.kind) << " f_rgb=" << fmt(r.f_rgb) << " f_hp=" << fmt(r.f_hp) << ' ' << r.status
        << " f1_action " << short_fmt(r.macro_f1_action) << " f1_verb " << short_fmt(r.macro_f1_verb)
        << " cpu " << r.cpu.median_cpu_seconds << " s";
    if (!r.message.empty()) log << " (" << r.message << ')';
    log << '\n';
  });
  bench::export_results((dir / "results.json").string(), rows, bench::ExportFormat::json);
  const auto front = bench::pareto_front(rows);
  bench::export_results((dir / "pareto.csv").string(), front, bench::ExportFormat::csv);

  std::size_t ok = 0;
  for (const auto& r : rows) ok += r.ok() ? 1 : 0;
  log << ok << " of " << rows.size() << " grid points succeeded; " << front.size() << " on the Pareto front\n";
  return ok > 0 ? kExitOk : kExitDivergence;
}

int cmd_bench(const config::RunConfig& cfg, std::ostream& log) {
  config::validate(cfg, config::Command::bench);
  auto points = config::expand_grid(cfg.grid);
  log << "model_kind,f_rgb,f_hp,cpu_median_s,cpu_p10_s,cpu_p90_s,macs\n";
  auto report = [&](const model::ModelConfig& m, const sampling::RateConfig& r) {
    const auto stats = bench::measure_cpu(m, r, cfg.measure, cfg.seed);
    const auto built = model::make_model(m.with_rates(r), cfg.seed);
    const std::size_t calls = model::is_sequence_model(m.kind) ? 1
                              : model::uses_rgb(m.kind)         ? r.rgb_steps()
                                                                : r.hp_steps();
    log << model::to_string(m.kind) << ',' << fmt(r.f_rgb) << ',' << fmt(r.f_hp) << ','
        << fmt(stats.median_cpu_seconds) << ',' << fmt(stats.p10) << ',' << fmt(stats.p90) << ','
        << built->macs() * calls << '\n';
  };
  if (points.empty()) {
    sampling::RateConfig r = cfg.rates;
    r.window_seconds = cfg.bench_window_seconds;
    report(cfg.bench_model, r);
    return kExitOk;
  }
  for (const auto& p : points) {
    model::ModelConfig m = cfg.bench_model;
    m.kind = p.kind;
    report(m, bench::point_rates(p, cfg.rates, cfg.bench_window_seconds));
  }
  return kExitOk;
}

int cmd_normalize(const NormalizeArgs& args, std::ostream& log, std::ostream& err) {
  if (args.input.empty() || args.output.empty()) throw ConfigError("normalize needs an input and an output file");
  if (args.reference_lengths == "train_mean") {
    throw ConfigError("train_mean lengths come from a dataset; compute them with `normalize reference-lengths`");
  }
  const auto topo = args.reference_lengths == "unit" ? handpose::SkeletonTopology::hand_unit()
                                                     : handpose::read_reference_lengths(args.reference_lengths);
  bool already = false;
  const auto frames = dataset::parse_handpose_file(args.input, &already);
  std::vector<handpose::NormalizedHandFrame> out;
  const auto as_norm = already ? dataset::as_normalized(frames) : std::vector<handpose::NormalizedHandFrame>{};
  out.reserve(frames.size());
  std::vector<std::string> problems;
  std::size_t zeroed = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    problems.clear();
    if (args.strict) {
      try {
        out.push_back(already ? handpose::normalize_hand_frame(as_norm[i], topo,
                                                               args.axes)
                              : handpose::normalize_hand_frame(frames[i], topo, args.axes));
      } catch (const InvalidPoseError& e) {
        throw DataError(args.input + " frame " + std::to_string(i + 1) + ": " + e.what());
      }
      continue;
    }
    out.push_back(already ? handpose::normalize_hand_frame_lenient(as_norm[i],
                                                                   topo, args.axes, problems)
                          : handpose::normalize_hand_frame_lenient(frames[i], topo, args.axes, problems));
    for (const auto& p : problems) err << "warning: frame " << i + 1 << ": " << p << " (zeroed)\n";
    zeroed += problems.size();
  }
  dataset::write_normalized_handpose_file(args.output, out);
  log << "normalized " << frames.size() << " frames";
  if (zeroed > 0) log << ", zeroed " << zeroed << " degenerate hands";
  log << '\n';
  return kExitOk;
}

int cmd_reference_lengths(const std::vector<std::string>& inputs, const std::string& output,
                          const config::RunConfig& cfg, std::ostream& log) {
  if (output.empty()) throw ConfigError("reference-lengths needs an output file");
  std::vector<handpose::HandFrame> frames;
  if (inputs.empty()) {
    config::validate(cfg, config::Command::train);
    const auto data = load_data(cfg);
    const auto split = dataset::split_and_window(data.takes, cfg.rates, split_options(cfg));
    const auto topo = bench::resolve_topology("train_mean", data, split.train_takes);
    handpose::write_reference_lengths(output, topo);
    log << "wrote mean bone lengths of " << split.train_takes.size() << " training takes to " << output << '\n';
    return kExitOk;
  }
  for (const auto& path : inputs) {
    bool normalized = false;
    auto f = dataset::parse_handpose_file(path, &normalized);
    if (normalized) throw DataError("'" + path + "' is already normalized; lengths need raw poses");
    frames.insert(frames.end(), f.begin(), f.end());
  }
  const auto unit = handpose::SkeletonTopology::hand_unit();
  handpose::write_reference_lengths(output, handpose::SkeletonTopology::hand(handpose::mean_edge_lengths(frames, unit)));
  log << "wrote mean bone lengths of " << frames.size() << " frames to " << output << '\n';
  return kExitOk;
}

}  // namespace mmtmlp::commands
