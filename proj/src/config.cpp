#include "mmtmlp/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmtmlp/error.hpp"
#include "strict_json.hpp"

namespace mmtmlp::config {

using detail::StrictObject;
using nlohmann::json;

model::ModelConfig RunConfig::default_bench_model() {
  model::ModelConfig c;
  c.rgb_backend = model::RgbBackend::reference;
  return c;
}

namespace {

std::vector<double> number_list(const json& j, const std::string& where) {
  if (j.is_number()) return {j.get<double>()};
  if (!j.is_array()) throw ConfigError(where + ": expected a number or an array of numbers");
  std::vector<double> out;
  for (const auto& v : j) {
    if (!v.is_number()) throw ConfigError(where + ": expected numbers");
    out.push_back(v.get<double>());
  }
  return out;
}

dataset::SynthSpec synth_from_json(const json& j) {
  dataset::SynthSpec s;
  StrictObject o(j, "dataset.synth");
  o.get("n_takes", s.n_takes);
  o.get("frames_per_take", s.frames_per_take);
  o.get("n_verbs", s.n_verbs);
  o.get("n_objects", s.n_objects);
  o.get("motion_noise", s.motion_noise);
  o.get("feature_noise", s.feature_noise);
  o.get("feature_dim", s.feature_dim);
  o.get("segment_min", s.segment_min);
  o.get("segment_max", s.segment_max);
  o.get("gap_min", s.gap_min);
  o.get("gap_max", s.gap_max);
  o.get("seed", s.seed);
  o.finish();
  return s;
}

json synth_to_json(const dataset::SynthSpec& s) {
  return {{"n_takes", s.n_takes},         {"frames_per_take", s.frames_per_take},
          {"n_verbs", s.n_verbs},         {"n_objects", s.n_objects},
          {"motion_noise", s.motion_noise}, {"feature_noise", s.feature_noise},
          {"feature_dim", s.feature_dim}, {"segment_min", s.segment_min},
          {"segment_max", s.segment_max}, {"gap_min", s.gap_min},
          {"gap_max", s.gap_max},         {"seed", s.seed}};
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  StrictObject o(j, "config");
  o.get("seed", c.seed);
  if (const auto* d = o.child("dataset")) {
    StrictObject od(*d, "dataset");
    od.get("path", c.dataset.path);
    if (const auto* s = od.child("synth")) c.dataset.synth = synth_from_json(*s);
    od.finish();
  }
  if (const auto* m = o.child("model")) {
    c.model = model::model_config_from_json(*m, "model");
    if (m->contains("n_actions")) c.n_actions = c.model.n_actions;
  }
  if (const auto* r = o.child("rates")) {
    StrictObject orr(*r, "rates");
    orr.get("native_hz", c.rates.native_hz);
    orr.get("f_rgb", c.rates.f_rgb);
    orr.get("f_hp", c.rates.f_hp);
    orr.get("window_seconds", c.rates.window_seconds);
    orr.finish();
  }
  if (const auto* g = o.child("grid")) {
    if (!g->is_array()) throw ConfigError("grid: expected an array of blocks");
    for (std::size_t i = 0; i < g->size(); ++i) {
      const std::string where = "grid[" + std::to_string(i) + "]";
      StrictObject ob((*g)[i], where);
      std::string kind;
      ob.get("kind", kind);
      GridBlock b;
      if (kind.empty()) throw ConfigError(where + ".kind is required");
      b.kind = model::parse_model_kind(kind);
      const auto* fr = ob.child("f_rgb");
      const auto* fh = ob.child("f_hp");
      ob.finish();
      b.f_rgb = fr != nullptr ? number_list(*fr, where + ".f_rgb") : std::vector<double>{0.0};
      b.f_hp = fh != nullptr ? number_list(*fh, where + ".f_hp") : std::vector<double>{0.0};
      if (b.f_rgb.empty() || b.f_hp.empty()) throw ConfigError(where + ": empty frequency list");
      c.grid.push_back(std::move(b));
    }
  }
  if (const auto* s = o.child("split")) {
    StrictObject os(*s, "split");
    os.get("val_fraction", c.split.val_fraction);
    os.get("stride", c.split.stride);
    os.get("background_keep", c.split.background_keep);
    os.finish();
  }
  if (const auto* t = o.child("train")) {
    StrictObject ot(*t, "train");
    ot.get("epochs", c.train.epochs);
    ot.get("batch_size", c.train.batch_size);
    ot.get("lr", c.train.lr);
    ot.get("fit_input_scalers", c.train.fit_input_scalers);
    if (const auto* a = ot.child("augment")) {
      StrictObject oa(*a, "train.augment");
      oa.get("flip", c.train.augment.flip);
      oa.get("jitter", c.train.augment.jitter);
      oa.get("keypoint_noise", c.train.augment.keypoint_noise);
      oa.get("feature_dropout", c.train.augment.feature_dropout);
      oa.finish();
    }
    ot.finish();
  }
  if (const auto* b = o.child("bench")) {
    StrictObject ob(*b, "bench");
    ob.get("reps", c.measure.reps);
    ob.get("warmup", c.measure.warmup);
    ob.get("threads", c.measure.threads);
    ob.get("window_seconds", c.bench_window_seconds);
    if (const auto* m = ob.child("model")) {
      json merged = model::to_json(RunConfig::default_bench_model());
      merged.merge_patch(*m);
      // merge_patch cannot reject unknown keys, so parse the patch itself first.
      model::model_config_from_json(*m, "bench.model");
      c.bench_model = model::model_config_from_json(merged, "bench.model");
    }
    ob.finish();
  }
  if (const auto* n = o.child("normalize")) {
    StrictObject on(*n, "normalize");
    on.get("reference_lengths", c.normalize.reference_lengths);
    on.get("strict", c.normalize.strict);
    on.get("primary_keypoint", c.normalize.axes.primary);
    on.get("secondary_keypoint", c.normalize.axes.secondary);
    on.finish();
  }
  if (const auto* out = o.child("output")) {
    StrictObject oo(*out, "output");
    oo.get("dir", c.output.dir);
    oo.get("force", c.output.force);
    oo.finish();
  }
  o.finish();
  return c;
}

json to_json(const RunConfig& c) {
  json grid = json::array();
  for (const auto& b : c.grid) grid.push_back({{"kind", model::to_string(b.kind)}, {"f_rgb", b.f_rgb}, {"f_hp", b.f_hp}});
  json model = model::to_json(c.model);
  if (!c.n_actions) model.erase("n_actions");
  return {
      {"seed", c.seed},
      {"dataset", {{"path", c.dataset.path}, {"synth", synth_to_json(c.dataset.synth)}}},
      {"model", model},
      {"rates",
       {{"native_hz", c.rates.native_hz},
        {"f_rgb", c.rates.f_rgb},
        {"f_hp", c.rates.f_hp},
        {"window_seconds", c.rates.window_seconds}}},
      {"grid", grid},
      {"split",
       {{"val_fraction", c.split.val_fraction}, {"stride", c.split.stride}, {"background_keep", c.split.background_keep}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr},
        {"fit_input_scalers", c.train.fit_input_scalers},
        {"augment",
         {{"flip", c.train.augment.flip},
          {"jitter", c.train.augment.jitter},
          {"keypoint_noise", c.train.augment.keypoint_noise},
          {"feature_dropout", c.train.augment.feature_dropout}}}}},
      {"bench",
       {{"reps", c.measure.reps},
        {"warmup", c.measure.warmup},
        {"threads", c.measure.threads},
        {"window_seconds", c.bench_window_seconds},
        {"model", model::to_json(c.bench_model)}}},
      {"normalize",
       {{"reference_lengths", c.normalize.reference_lengths},
        {"strict", c.normalize.strict},
        {"primary_keypoint", c.normalize.axes.primary},
        {"secondary_keypoint", c.normalize.axes.secondary}}},
      {"output", {{"dir", c.output.dir}, {"force", c.output.force}}},
  };
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override key '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    try {
      j = json::parse(in, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw ConfigError("config '" + path + "': " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

std::vector<bench::SweepPoint> expand_grid(const std::vector<GridBlock>& grid) {
  std::vector<bench::SweepPoint> out;
  for (const auto& b : grid) {
    for (double fr : b.f_rgb) {
      for (double fh : b.f_hp) out.push_back({b.kind, fr, fh});
    }
  }
  return out;
}

void validate(const RunConfig& c, Command cmd) {
  auto check_model = [&](const model::ModelConfig& m, const sampling::RateConfig& r) { m.with_rates(r).validate(); };
  if (c.measure.reps < 5) throw ConfigError("bench.reps must be at least 5");
  if (c.measure.threads != 1) throw ConfigError("bench.threads must be 1");
  if (!(c.bench_window_seconds > 0.0)) throw ConfigError("bench.window_seconds must be positive");
  c.rates.validate();
  if (c.normalize.axes.primary >= handpose::kKeypointsPerHand ||
      c.normalize.axes.secondary >= handpose::kKeypointsPerHand || c.normalize.axes.primary == 0 ||
      c.normalize.axes.secondary == 0 || c.normalize.axes.primary == c.normalize.axes.secondary) {
    throw ConfigError("normalize: canonical keypoints must be distinct non-wrist keypoints");
  }
  const std::string& lengths = c.normalize.reference_lengths;
  if (lengths != "train_mean" && lengths != "unit" && !std::filesystem::exists(lengths)) {
    throw ConfigError("normalize.reference_lengths: no such file '" + lengths + "'");
  }
  switch (cmd) {
    case Command::synth:
      if (c.dataset.path.empty()) throw ConfigError("dataset.path is required for synth");
      c.dataset.synth.validate();
      return;
    case Command::normalize:
      return;
    case Command::bench: {
      const auto grid = expand_grid(c.grid);
      if (grid.empty()) {
        sampling::RateConfig r = c.rates;
        r.window_seconds = c.bench_window_seconds;
        check_model(c.bench_model, r);
      }
      for (const auto& p : grid) {
        model::ModelConfig m = c.bench_model;
        m.kind = p.kind;
        check_model(m, bench::point_rates(p, c.rates, c.bench_window_seconds));
      }
      return;
    }
    case Command::train:
    case Command::sweep:
      break;
  }
  if (c.dataset.path.empty()) {
    c.dataset.synth.validate();
  } else if (!std::filesystem::is_directory(c.dataset.path)) {
    throw DataError("dataset directory '" + c.dataset.path + "' not found");
  }
  if (c.train.batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (!(c.train.lr >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (c.split.stride == 0) throw ConfigError("split.stride must be at least 1");
  if (!(c.split.val_fraction >= 0.0 && c.split.val_fraction < 1.0)) {
    throw ConfigError("split.val_fraction must lie in [0, 1)");
  }
  if (!(c.split.background_keep >= 0.0 && c.split.background_keep <= 1.0)) {
    throw ConfigError("split.background_keep must lie in [0, 1]");
  }
  if (c.output.dir.empty()) throw ConfigError("output.dir must not be empty");
  const auto& aug = c.train.augment;
  auto check_augment = [&](model::ModelKind kind) {
    const bool rgb = model::uses_rgb(kind);
    const bool hp = model::uses_hp(kind);
    if (aug.has_private() && rgb && hp) {
      throw ConfigError("modality-private augmentation requested for the multimodal model '" +
                        std::string(model::to_string(kind)) + "'");
    }
    if (aug.keypoint_noise > 0.0 && !hp) throw ConfigError("train.augment.keypoint_noise needs a hand-pose stream");
    if (aug.feature_dropout > 0.0 && !rgb) throw ConfigError("train.augment.feature_dropout needs an RGB stream");
  };
  if (cmd == Command::train) {
    check_model(c.model, c.rates);
    check_augment(c.model.kind);
    return;
  }
  const auto grid = expand_grid(c.grid);
  if (grid.empty()) throw ConfigError("sweep grid is empty");
  for (const auto& p : grid) {
    model::ModelConfig m = c.model;
    m.kind = p.kind;
    check_model(m, bench::point_rates(p, c.rates, c.rates.window_seconds));
    check_augment(p.kind);
    model::ModelConfig b = c.bench_model;
    b.kind = p.kind;
    check_model(b, bench::point_rates(p, c.rates, c.bench_window_seconds));
  }
}

const std::vector<KeyDoc>& key_docs() {
  static const std::vector<KeyDoc> docs = {
      {"seed", "master seed: split, initialization, shuffling, augmentation, CPU inputs (default 1)"},
      {"dataset.path", "dataset directory; for `synth` the output location, otherwise the input (empty: synthesize in memory)"},
      {"dataset.synth.n_takes", "synthetic takes (default 32)"},
      {"dataset.synth.frames_per_take", "native frames per take (default 600)"},
      {"dataset.synth.n_verbs", "verb classes, excluding background (default 4)"},
      {"dataset.synth.n_objects", "object classes (default 3); actions are verb x object"},
      {"dataset.synth.motion_noise", "hand-pose noise scale (default 0.1)"},
      {"dataset.synth.feature_noise", "RGB feature noise sigma, centers are 1 apart (default 0.3)"},
      {"dataset.synth.feature_dim", "RGB feature width (default 32)"},
      {"dataset.synth.segment_min", "shortest action segment in frames (default 60)"},
      {"dataset.synth.segment_max", "longest action segment in frames (default 150)"},
      {"dataset.synth.gap_min", "shortest background gap in frames (default 15)"},
      {"dataset.synth.gap_max", "longest background gap in frames (default 45)"},
      {"dataset.synth.seed", "generator seed (default 7)"},
      {"model.kind", "rgb_seq | mm_tmlp | fusionnet | hp_mlp (default mm_tmlp)"},
      {"model.n_actions", "output classes including background (default: from the dataset)"},
      {"model.rgb_backend", "precomputed | reference (default precomputed)"},
      {"model.rgb_feature_dim", "width of one precomputed feature row (default 512)"},
      {"model.reference.channels", "reference extractor image channels (default 3)"},
      {"model.reference.height", "reference extractor image height (default 64)"},
      {"model.reference.width", "reference extractor image width (default 64)"},
      {"model.reference.patch", "reference extractor square patch size (default 16)"},
      {"model.reference.patch_dim", "patch embedding width (default 256)"},
      {"model.reference.out_dim", "reference extractor output width D_rgb (default 512)"},
      {"model.hp_hidden", "hand-pose extractor hidden width (default 256)"},
      {"model.hp_dim", "hand-pose feature width D_hp (default 128)"},
      {"model.head_hidden", "classifier hidden width (default 256)"},
      {"model.activation", "relu | gelu (default gelu)"},
      {"model.temporal.depth", "temporal blocks per stream (default 2)"},
      {"model.temporal.time_hidden_ratio", "time-mixing hidden width as a multiple of T (default 2)"},
      {"model.temporal.channel_hidden_ratio", "channel-mixing hidden width as a multiple of D (default 2)"},
      {"model.temporal.activation", "temporal block activation (default: model.activation)"},
      {"model.t_rgb", "RGB sequence length; recomputed from the rates at run time"},
      {"model.t_hp", "hand-pose sequence length; recomputed from the rates at run time"},
      {"rates.native_hz", "capture rate of the data (default 30)"},
      {"rates.f_rgb", "RGB sampling frequency in Hz, 0 disables (default 30)"},
      {"rates.f_hp", "hand-pose sampling frequency in Hz, 0 disables (default 30)"},
      {"rates.window_seconds", "training window length in seconds (default 2)"},
      {"grid", "sweep blocks: [{\"kind\": K, \"f_rgb\": [..], \"f_hp\": [..]}], expanded as a product"},
      {"split.val_fraction", "fraction of takes held out for validation (default 0.25)"},
      {"split.stride", "frames between consecutive window ends (default 1)"},
      {"split.background_keep", "probability of keeping a background training window (default 1)"},
      {"train.epochs", "training epochs (default 20)"},
      {"train.batch_size", "windows per Adam step (default 32)"},
      {"train.lr", "Adam learning rate (default 0.001)"},
      {"train.fit_input_scalers", "standardize inputs with training-split statistics (default true)"},
      {"train.augment.flip", "horizontal flip with hand swap, probability 0.5 (default false)"},
      {"train.augment.jitter", "maximum window-end shift in frames (default 0)"},
      {"train.augment.keypoint_noise", "hand-pose-only Gaussian keypoint noise (default 0)"},
      {"train.augment.feature_dropout", "RGB-only feature dropout probability (default 0)"},
      {"bench.reps", "timed repetitions, at least 5 (default 15)"},
      {"bench.warmup", "untimed warmup repetitions (default 3)"},
      {"bench.threads", "must be 1"},
      {"bench.window_seconds", "window length of a timed inference (default 1)"},
      {"bench.model.*", "architecture timed for the CPU column; same keys as model.* (default rgb_backend reference)"},
      {"normalize.reference_lengths", "train_mean | unit | path to a lengths file (default train_mean)"},
      {"normalize.strict", "fail on degenerate hands instead of zeroing them (default false)"},
      {"normalize.primary_keypoint", "keypoint rotated onto +z (default 9, middle MCP)"},
      {"normalize.secondary_keypoint", "keypoint fixing +x (default 5, index MCP)"},
      {"output.dir", "directory for checkpoints, histories and results (default run)"},
      {"output.force", "let synth replace an existing dataset directory (default false)"},
  };
  return docs;
}

std::string key_help_text() {
  std::ostringstream out;
  out << "Config keys (JSON file via --config, or --set key=value):\n";
  for (const auto& d : key_docs()) out << "  " << d.key << "\n      " << d.description << "\n";
  return out.str();
}

}  // namespace mmtmlp::config
