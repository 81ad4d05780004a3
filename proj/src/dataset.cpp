#include "mmtmlp/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "mmtmlp/error.hpp"

namespace fs = std::filesystem;

namespace mmtmlp::dataset {

namespace {

std::string segment_string(const ActionSegment& s) {
  return "[" + std::to_string(s.start_frame) + ", " + std::to_string(s.end_frame) + "] (action " +
         std::to_string(s.action) + ")";
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw IoError("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IoError("cannot open '" + path + "'");
  return in;
}

constexpr const char* kNormalizedTag = "normalized-hand-pose";

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

/// Shortest decimal text that reads back to the same double.
void put_real(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace

void Take::validate() const {
  if (hp_frames.size() != n_frames) {
    throw DataError("take '" + id + "': " + std::to_string(hp_frames.size()) + " hand-pose frames for " +
                    std::to_string(n_frames) + " frames");
  }
  if (!rgb_features.empty() && rgb_features.rows() != n_frames) {
    throw DataError("take '" + id + "': " + std::to_string(rgb_features.rows()) + " RGB feature rows for " +
                    std::to_string(n_frames) + " frames");
  }
  for (const auto& s : segments) {
    if (s.start_frame > s.end_frame || s.end_frame >= n_frames) {
      throw DataError("take '" + id + "': segment " + segment_string(s) + " outside [0, " +
                      std::to_string(n_frames) + ")");
    }
  }
}

std::size_t Dataset::n_actions() const {
  int max_id = 0;
  for (const auto& e : actions) max_id = std::max(max_id, e.id);
  for (const auto& t : takes)
    for (const auto& s : t.segments) max_id = std::max(max_id, s.action);
  return static_cast<std::size_t>(max_id) + 1;
}

std::size_t Dataset::n_verbs() const {
  int max_id = 0;
  for (const auto& e : verbs) max_id = std::max(max_id, e.id);
  for (const auto& t : takes)
    for (const auto& s : t.segments) max_id = std::max(max_id, s.verb);
  return static_cast<std::size_t>(max_id) + 1;
}

std::vector<int> Dataset::action_to_verb() const {
  std::vector<int> out(n_actions(), -1);
  out[kBackground] = kBackground;
  for (const auto& t : takes) {
    for (const auto& s : t.segments) {
      int& v = out[static_cast<std::size_t>(s.action)];
      if (v != -1 && v != s.verb) {
        throw DataError("action " + std::to_string(s.action) + " is annotated with verbs " + std::to_string(v) +
                        " and " + std::to_string(s.verb));
      }
      v = s.verb;
    }
  }
  for (int& v : out) v = std::max(v, 0);
  return out;
}

std::vector<FrameLabel> assign_frame_labels(std::span<const ActionSegment> segments, std::size_t n_frames) {
  std::vector<ActionSegment> sorted(segments.begin(), segments.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ActionSegment& a, const ActionSegment& b) { return a.start_frame < b.start_frame; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].start_frame <= sorted[i - 1].end_frame) {
      throw DataError("overlapping segments " + segment_string(sorted[i - 1]) + " and " + segment_string(sorted[i]));
    }
  }
  std::vector<FrameLabel> labels(n_frames);
  for (const auto& s : sorted) {
    if (s.start_frame > s.end_frame || s.end_frame >= n_frames) {
      throw DataError("segment " + segment_string(s) + " outside [0, " + std::to_string(n_frames) + ")");
    }
    for (std::size_t f = s.start_frame; f <= s.end_frame; ++f) labels[f] = {s.action, s.verb};
  }
  return labels;
}

// Hand-pose text ----------------------------------------------------------------

std::vector<HandFrame> parse_handpose_file(const std::string& path, bool* normalized) {
  auto in = open_in(path);
  if (normalized != nullptr) *normalized = false;
  constexpr std::size_t kFields = 2 * (1 + 3 * handpose::kKeypointsPerHand);
  std::vector<HandFrame> frames;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> v;
  v.reserve(kFields);
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    if (line[line.find_first_not_of(" \t")] == '#') {
      if (normalized != nullptr && frames.empty() && line.find(kNormalizedTag) != std::string::npos) *normalized = true;
      continue;
    }
    v.clear();
    const char* p = line.c_str();
    char* endp = nullptr;
    while (true) {
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == '\0') break;
      const double x = std::strtod(p, &endp);
      if (endp == p) throw ParseError(path, line_no, "non-numeric field " + std::to_string(v.size() + 1));
      v.push_back(x);
      p = endp;
    }
    if (v.size() != kFields) {
      throw ParseError(path, line_no,
                       "expected " + std::to_string(kFields) + " fields, found " + std::to_string(v.size()));
    }
    HandFrame f;
    std::size_t i = 0;
    for (auto [hand, valid] : {std::pair{&f.left, &f.left_valid}, std::pair{&f.right, &f.right_valid}}) {
      const double flag = v[i++];
      if (flag != 0.0 && flag != 1.0) throw ParseError(path, line_no, "validity flag must be 0 or 1");
      *valid = flag == 1.0;
      for (auto& kp : *hand) {
        kp = handpose::Vec3(v[i], v[i + 1], v[i + 2]);
        i += 3;
      }
      if (!*valid) *hand = handpose::zero_hand();
    }
    frames.push_back(f);
  }
  return frames;
}

void write_handpose_file(const std::string& path, std::span<const HandFrame> frames, bool normalized) {
  auto out = open_out(path);
  if (normalized) out << "# " << kNormalizedTag << '\n';
  std::string line;
  for (const auto& f : frames) {
    line.clear();
    for (auto [hand, valid] : {std::pair{&f.left, f.left_valid}, std::pair{&f.right, f.right_valid}}) {
      if (!line.empty()) line += ' ';
      line += valid ? '1' : '0';
      for (const auto& kp : *hand) {
        for (int c = 0; c < 3; ++c) {
          line += ' ';
          put_real(line, valid ? kp[c] : 0.0);
        }
      }
    }
    line += '\n';
    out << line;
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_normalized_handpose_file(const std::string& path, std::span<const NormalizedHandFrame> frames) {
  std::vector<HandFrame> raw;
  raw.reserve(frames.size());
  for (const auto& n : frames) raw.push_back(HandFrame{n.left, n.right, n.left_valid, n.right_valid});
  write_handpose_file(path, raw, true);
}

std::vector<NormalizedHandFrame> as_normalized(std::span<const HandFrame> frames) {
  std::vector<NormalizedHandFrame> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    NormalizedHandFrame n;
    n.left = f.left;
    n.right = f.right;
    n.left_valid = f.left_valid;
    n.right_valid = f.right_valid;
    out.push_back(n);
  }
  return out;
}

// Labels / vocabulary -----------------------------------------------------------

std::vector<ActionSegment> parse_label_file(const std::string& path) {
  if (!fs::exists(path)) throw IoError("label file not found: '" + path + "'");
  auto in = open_in(path);
  std::vector<ActionSegment> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    std::istringstream ls(line);
    long long start = 0, end = 0;
    int action = 0, verb = 0;
    std::string extra;
    if (!(ls >> start >> end >> action >> verb) || (ls >> extra)) {
      throw ParseError(path, line_no, "expected `start end action_id verb_id`");
    }
    if (start < 0 || end < start || action < 0 || verb < 0) {
      throw ParseError(path, line_no, "invalid segment bounds or ids");
    }
    out.push_back({static_cast<std::size_t>(start), static_cast<std::size_t>(end), action, verb});
  }
  return out;
}

void write_label_file(const std::string& path, std::span<const ActionSegment> segments) {
  auto out = open_out(path);
  for (const auto& s : segments) out << s.start_frame << ' ' << s.end_frame << ' ' << s.action << ' ' << s.verb << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

Vocabulary read_vocabulary(const std::string& path) {
  auto in = open_in(path);
  Vocabulary out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    std::istringstream ls(line);
    VocabularyEntry e;
    if (!(ls >> e.id) || e.id < 0) throw ParseError(path, line_no, "expected `id name`");
    std::getline(ls >> std::ws, e.name);
    while (!e.name.empty() && (e.name.back() == '\r' || e.name.back() == ' ')) e.name.pop_back();
    if (e.name.empty()) throw ParseError(path, line_no, "missing name");
    out.push_back(std::move(e));
  }
  return out;
}

void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  auto out = open_out(path);
  for (const auto& e : vocab) out << e.id << ' ' << e.name << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

// RGB features ------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'M', 'M', 'R', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf += static_cast<char>((v >> (8 * i)) & 0xFFu);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_rgb_features(const std::string& path, const nn::Matrix& features) {
  std::string buf(kFeatureMagic.begin(), kFeatureMagic.end());
  put_u32(buf, kFeatureVersion);
  put_u32(buf, static_cast<std::uint32_t>(features.rows()));
  put_u32(buf, static_cast<std::uint32_t>(features.cols()));
  buf.reserve(buf.size() + 4 * features.size());
  for (double v : features.data()) put_u32(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  auto out = open_out(path, std::ios::binary);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

nn::Matrix read_rgb_features(const std::string& path) {
  auto in = open_in(path, std::ios::binary);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (buf.size() < 16 || !std::equal(kFeatureMagic.begin(), kFeatureMagic.end(), buf.begin())) {
    throw DataError("'" + path + "' is not an RGB feature file");
  }
  if (get_u32(p + 4) != kFeatureVersion) throw DataError("'" + path + "': unsupported feature file version");
  const std::size_t n = get_u32(p + 8);
  const std::size_t d = get_u32(p + 12);
  if (buf.size() != 16 + 4 * n * d) {
    throw DataError("'" + path + "': expected " + std::to_string(16 + 4 * n * d) + " bytes, found " +
                    std::to_string(buf.size()));
  }
  nn::Matrix out(n, d);
  auto dst = out.data();
  for (std::size_t i = 0; i < n * d; ++i) dst[i] = std::bit_cast<float>(get_u32(p + 16 + 4 * i));
  return out;
}

// Directory layout --------------------------------------------------------------

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  if (!fs::is_directory(base)) throw IoError("dataset directory not found: '" + root + "'");
  Dataset data;
  if (fs::exists(base / "actions.txt")) data.actions = read_vocabulary((base / "actions.txt").string());
  if (fs::exists(base / "verbs.txt")) data.verbs = read_vocabulary((base / "verbs.txt").string());
  const fs::path takes_dir = base / "takes";
  if (!fs::is_directory(takes_dir)) throw IoError("dataset has no takes directory: '" + takes_dir.string() + "'");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(takes_dir))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    Take t;
    t.id = dir.filename().string();
    t.hp_frames = parse_handpose_file((dir / "hand_pose.txt").string());
    t.n_frames = t.hp_frames.size();
    t.segments = parse_label_file((dir / "labels.txt").string());
    if (fs::exists(dir / "rgb_features.bin")) t.rgb_features = read_rgb_features((dir / "rgb_features.bin").string());
    t.validate();
    assign_frame_labels(t.segments, t.n_frames);
    data.takes.push_back(std::move(t));
  }
  if (data.takes.empty()) throw DataError("dataset '" + root + "' contains no takes");
  return data;
}

void write_dataset(const std::string& root, const Dataset& data, bool force) {
  const fs::path base(root);
  if (fs::exists(base)) {
    if (!force) throw ConfigError("output '" + root + "' already exists (use --force to overwrite)");
    fs::remove_all(base);
  }
  std::error_code ec;
  fs::create_directories(base / "takes", ec);
  if (ec) throw IoError("cannot create '" + root + "': " + ec.message());
  write_vocabulary((base / "actions.txt").string(), data.actions);
  write_vocabulary((base / "verbs.txt").string(), data.verbs);
  for (const auto& t : data.takes) {
    const fs::path dir = base / "takes" / t.id;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    write_handpose_file((dir / "hand_pose.txt").string(), t.hp_frames);
    write_label_file((dir / "labels.txt").string(), t.segments);
    if (!t.rgb_features.empty()) write_rgb_features((dir / "rgb_features.bin").string(), t.rgb_features);
  }
}

// Preparation -------------------------------------------------------------------

PreparedDataset prepare_dataset(const Dataset& data, const handpose::SkeletonTopology& topo, bool strict,
                                const handpose::CanonicalAxes& axes) {
  PreparedDataset out;
  out.n_actions = data.n_actions();
  out.n_verbs = data.n_verbs();
  out.action_to_verb = data.action_to_verb();
  std::vector<std::string> problems;
  for (const auto& t : data.takes) {
    t.validate();
    PreparedTake p;
    p.id = t.id;
    p.rgb = t.rgb_features;
    p.labels = assign_frame_labels(t.segments, t.n_frames);
    p.hp.reserve(t.n_frames);
    for (std::size_t f = 0; f < t.n_frames; ++f) {
      if (strict) {
        try {
          p.hp.push_back(handpose::normalize_hand_frame(t.hp_frames[f], topo, axes));
        } catch (const InvalidPoseError& e) {
          throw DataError("take '" + t.id + "' frame " + std::to_string(f) + ": " + e.what());
        }
      } else {
        problems.clear();
        p.hp.push_back(handpose::normalize_hand_frame_lenient(t.hp_frames[f], topo, axes, problems));
        out.degenerate_hands += problems.size();
      }
    }
    out.takes.push_back(std::move(p));
  }
  return out;
}

WindowSplit split_and_window(std::span<const Take> takes, const sampling::RateConfig& cfg, const SplitOptions& opts) {
  if (takes.empty()) throw DataError("cannot window an empty dataset");
  if (opts.stride == 0) throw ConfigError("window stride must be at least 1");
  if (opts.val_fraction < 0.0 || opts.val_fraction >= 1.0) throw ConfigError("val_fraction must lie in [0, 1)");
  if (opts.background_keep < 0.0 || opts.background_keep > 1.0) {
    throw ConfigError("background_keep must lie in [0, 1]");
  }
  const std::size_t w = cfg.window_frames();
  for (const auto& t : takes) {
    if (t.n_frames < w) {
      throw ConfigError("window of " + std::to_string(w) + " frames is longer than take '" + t.id + "' (" +
                        std::to_string(t.n_frames) + " frames)");
    }
  }
  const std::size_t n = takes.size();
  std::size_t n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * opts.val_fraction));
  if (opts.val_fraction > 0.0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  if (n_val >= n) n_val = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  std::shuffle(order.begin(), order.end(), rng);
  WindowSplit split;
  split.val_takes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train_takes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(split.val_takes.begin(), split.val_takes.end());
  std::sort(split.train_takes.begin(), split.train_takes.end());

  std::bernoulli_distribution keep(opts.background_keep);
  auto enumerate = [&](std::size_t ti, std::vector<WindowRef>& out, bool subsample) {
    const Take& t = takes[ti];
    const auto labels = assign_frame_labels(t.segments, t.n_frames);
    for (std::size_t end = w - 1; end < t.n_frames; end += opts.stride) {
      if (subsample && labels[end].action == kBackground && opts.background_keep < 1.0 && !keep(rng)) continue;
      out.push_back({ti, end});
    }
  };
  for (std::size_t ti : split.train_takes) enumerate(ti, split.train, true);
  for (std::size_t ti : split.val_takes) enumerate(ti, split.val, false);
  return split;
}

sampling::MultiRateWindow make_window(const PreparedDataset& data, WindowRef ref, const sampling::RateConfig& cfg) {
  if (ref.take >= data.takes.size()) throw DataError("window refers to unknown take " + std::to_string(ref.take));
  const PreparedTake& t = data.takes[ref.take];
  if (cfg.rgb_enabled() && t.rgb.rows() <= ref.end) {
    throw DataError("take '" + t.id + "': missing precomputed RGB feature for frame " +
                    std::to_string(std::min(t.rgb.rows(), ref.end)));
  }
  return sampling::build_window(t.rgb, t.hp, t.labels, ref.end, cfg, t.id);
}

// Augmentation ------------------------------------------------------------------

sampling::MultiRateWindow flip_window(const sampling::MultiRateWindow& w, const AugmentContext& ctx) {
  sampling::MultiRateWindow out = w;
  for (auto& f : out.hp_seq) f = handpose::flip_horizontal(f);
  if (ctx.rgb_flip) {
    for (std::size_t r = 0; r < out.rgb_seq.rows(); ++r) ctx.rgb_flip(out.rgb_seq.row(r));
  }
  return out;
}

sampling::MultiRateWindow jitter_window(const sampling::MultiRateWindow& w, std::ptrdiff_t delta,
                                        const AugmentContext& ctx) {
  if (ctx.source == nullptr) throw ConfigError("temporal jitter needs the source dataset");
  const auto& takes = ctx.source->takes;
  auto it = std::find_if(takes.begin(), takes.end(), [&](const PreparedTake& t) { return t.id == w.take_id; });
  if (it == takes.end()) throw DataError("window source take '" + w.take_id + "' not found");
  const auto lo = static_cast<std::ptrdiff_t>(ctx.rates.window_frames()) - 1;
  const auto hi = static_cast<std::ptrdiff_t>(it->labels.size()) - 1;
  const auto end = std::clamp(static_cast<std::ptrdiff_t>(w.end) + delta, lo, hi);
  return make_window(*ctx.source, {static_cast<std::size_t>(it - takes.begin()), static_cast<std::size_t>(end)},
                     ctx.rates);
}

sampling::MultiRateWindow augment(const sampling::MultiRateWindow& w, const AugmentOps& ops, std::uint64_t seed,
                                  const AugmentContext& ctx) {
  const bool multimodal = !w.hp_seq.empty() && w.rgb_seq.rows() > 0;
  if (multimodal && ops.has_private()) {
    throw ConfigError("modality-private augmentations (keypoint noise, feature dropout) are not allowed when "
                      "both streams are enabled");
  }
  if (ops.empty()) return w;
  std::mt19937_64 rng(seed);
  sampling::MultiRateWindow out = w;
  if (ops.jitter > 0) {
    const auto j = static_cast<std::ptrdiff_t>(ops.jitter);
    std::uniform_int_distribution<std::ptrdiff_t> shift(-j, j);
    out = jitter_window(out, shift(rng), ctx);
  }
  if (ops.flip && std::bernoulli_distribution(0.5)(rng)) out = flip_window(out, ctx);
  if (ops.keypoint_noise > 0.0) {
    std::normal_distribution<double> noise(0.0, ops.keypoint_noise);
    for (auto& f : out.hp_seq) {
      for (auto [hand, valid] : {std::pair{&f.left, f.left_valid}, std::pair{&f.right, f.right_valid}}) {
        if (!valid) continue;
        for (auto& kp : *hand)
          for (int c = 0; c < 3; ++c) kp[c] += noise(rng);
      }
    }
  }
  if (ops.feature_dropout > 0.0) {
    std::bernoulli_distribution drop(ops.feature_dropout);
    for (double& v : out.rgb_seq.data())
      if (drop(rng)) v = 0.0;
  }
  return out;
}

}  // namespace mmtmlp::dataset
