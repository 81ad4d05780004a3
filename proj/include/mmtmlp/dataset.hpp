#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmtmlp/handpose.hpp"
#include "mmtmlp/nn/matrix.hpp"
#include "mmtmlp/sampling.hpp"

namespace mmtmlp::dataset {

using handpose::HandFrame;
using handpose::NormalizedHandFrame;
using sampling::FrameLabel;

inline constexpr int kBackground = 0;

/// Inclusive frame range carrying one action (and its verb).
struct ActionSegment {
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;
  int action = kBackground;
  int verb = kBackground;
  friend bool operator==(const ActionSegment&, const ActionSegment&) = default;
};

struct Take {
  std::string id;
  std::size_t n_frames = 0;
  std::vector<HandFrame> hp_frames;
  /// Precomputed RGB features, one row per native frame.
  nn::Matrix rgb_features;
  std::vector<ActionSegment> segments;

  void validate() const;
};

struct VocabularyEntry {
  int id = 0;
  std::string name;
  friend bool operator==(const VocabularyEntry&, const VocabularyEntry&) = default;
};
using Vocabulary = std::vector<VocabularyEntry>;

struct Dataset {
  std::vector<Take> takes;
  Vocabulary actions;  // includes background (id 0)
  Vocabulary verbs;

  std::size_t n_actions() const;
  std::size_t n_verbs() const;
  /// Verb of every action id, derived from segment annotations. Background maps to 0.
  std::vector<int> action_to_verb() const;
};

/// Background everywhere except inside segments. Overlaps are a DataError.
std::vector<FrameLabel> assign_frame_labels(std::span<const ActionSegment> segments, std::size_t n_frames);

// File formats ------------------------------------------------------------------

/// Hand-pose text: per line `left_valid` + 63 reals + `right_valid` + 63 reals.
/// Lines starting with '#' are comments. A leading `# normalized-hand-pose` comment marks
/// normalizer output and sets `*normalized`.
std::vector<HandFrame> parse_handpose_file(const std::string& path, bool* normalized = nullptr);
void write_handpose_file(const std::string& path, std::span<const HandFrame> frames, bool normalized = false);
void write_normalized_handpose_file(const std::string& path, std::span<const NormalizedHandFrame> frames);
/// Reinterprets frames read from a normalized file (no re-mirroring of the left block).
std::vector<NormalizedHandFrame> as_normalized(std::span<const HandFrame> frames);

/// Label text: per line `start end action_id verb_id`.
std::vector<ActionSegment> parse_label_file(const std::string& path);
void write_label_file(const std::string& path, std::span<const ActionSegment> segments);

/// Binary feature file: "MMRF", u32 version, u32 n_frames, u32 dim, then float32 LE data.
nn::Matrix read_rgb_features(const std::string& path);
void write_rgb_features(const std::string& path, const nn::Matrix& features);

/// Vocabulary text: per line `id name`.
Vocabulary read_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path, const Vocabulary& vocab);

/// Directory layout: actions.txt, verbs.txt, takes/<id>/{hand_pose.txt,labels.txt,rgb_features.bin}.
Dataset load_dataset(const std::string& root);
/// Refuses to touch an existing directory unless `force`.
void write_dataset(const std::string& root, const Dataset& data, bool force);

// Synthetic generator -----------------------------------------------------------

struct SynthSpec {
  std::size_t n_takes = 32;
  std::size_t frames_per_take = 600;
  std::size_t n_verbs = 4;
  std::size_t n_objects = 3;
  double motion_noise = 0.1;
  double feature_noise = 0.3;
  std::size_t feature_dim = 32;
  std::size_t segment_min = 60;
  std::size_t segment_max = 150;
  std::size_t gap_min = 15;
  std::size_t gap_max = 45;
  std::uint64_t seed = 7;

  void validate() const;
  std::size_t n_actions() const { return n_verbs * n_objects + 1; }
};

/// Action id of a (verb, object) pair, both 0-based: 1 + verb * n_objects + object.
int synth_action_id(const SynthSpec& spec, std::size_t verb, std::size_t object);

/// Verb identity lives only in finger articulation, object identity only in the
/// RGB feature vector (one cluster center per object, pairwise distance 1).
std::vector<Take> synth_generate(const SynthSpec& spec);
Dataset synth_dataset(const SynthSpec& spec);
/// The per-object (and background, last row) RGB cluster centers used by the generator.
nn::Matrix synth_feature_centers(const SynthSpec& spec);

// Preparation and windowing ----------------------------------------------------

struct PreparedTake {
  std::string id;
  nn::Matrix rgb;
  std::vector<NormalizedHandFrame> hp;
  std::vector<FrameLabel> labels;
};

struct PreparedDataset {
  std::vector<PreparedTake> takes;
  std::vector<int> action_to_verb;
  std::size_t n_actions = 0;
  std::size_t n_verbs = 0;
  std::size_t degenerate_hands = 0;
};

/// Normalizes every hand frame; degenerate hands are zeroed and flagged invalid
/// (or rethrown when `strict`).
PreparedDataset prepare_dataset(const Dataset& data, const handpose::SkeletonTopology& topo, bool strict = false,
                                const handpose::CanonicalAxes& axes = {});

struct WindowRef {
  std::size_t take = 0;
  std::size_t end = 0;
  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

struct SplitOptions {
  double val_fraction = 0.25;
  std::size_t stride = 1;
  /// Probability of keeping a background-labeled training window.
  double background_keep = 1.0;
  std::uint64_t seed = 0;
};

struct WindowSplit {
  std::vector<std::size_t> train_takes;
  std::vector<std::size_t> val_takes;
  std::vector<WindowRef> train;
  std::vector<WindowRef> val;
};

/// Take-level split, then windows at `stride` over every valid end index.
WindowSplit split_and_window(std::span<const Take> takes, const sampling::RateConfig& cfg, const SplitOptions& opts);

sampling::MultiRateWindow make_window(const PreparedDataset& data, WindowRef ref, const sampling::RateConfig& cfg);

// Augmentation ------------------------------------------------------------------

struct AugmentOps {
  bool flip = false;             // shared: mirror image + swap hands
  std::size_t jitter = 0;        // shared: shift the window end by up to +/- jitter frames
  double keypoint_noise = 0.0;   // hand-pose only: Gaussian sigma added to normalized keypoints
  double feature_dropout = 0.0;  // RGB only: probability of zeroing each feature

  bool empty() const { return !flip && jitter == 0 && keypoint_noise == 0.0 && feature_dropout == 0.0; }
  bool has_private() const { return keypoint_noise > 0.0 || feature_dropout > 0.0; }
};

/// Where augmentations get their extra inputs.
struct AugmentContext {
  const PreparedDataset* source = nullptr;  // needed for jitter
  sampling::RateConfig rates;
  std::function<void(std::span<double>)> rgb_flip;  // backend flip hook; identity when empty
};

sampling::MultiRateWindow flip_window(const sampling::MultiRateWindow& w, const AugmentContext& ctx);
/// Rebuilds the window with its end shifted by `delta` (clamped to the take).
sampling::MultiRateWindow jitter_window(const sampling::MultiRateWindow& w, std::ptrdiff_t delta,
                                        const AugmentContext& ctx);

/// Applies each enabled op with draws from `seed`. Modality-private ops are a ConfigError
/// when both streams are enabled.
sampling::MultiRateWindow augment(const sampling::MultiRateWindow& w, const AugmentOps& ops, std::uint64_t seed,
                                  const AugmentContext& ctx);

}  // namespace mmtmlp::dataset
