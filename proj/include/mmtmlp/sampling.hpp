#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mmtmlp/handpose.hpp"
#include "mmtmlp/nn/matrix.hpp"

namespace mmtmlp::sampling {

/// Per-modality sampling frequencies over a window of native-rate frames.
/// f_hp = 0 disables the hand stream; f_rgb = 0 disables RGB (hand-pose-only models).
struct RateConfig {
  double native_hz = 30.0;
  double f_rgb = 30.0;
  double f_hp = 30.0;
  double window_seconds = 2.0;

  bool rgb_enabled() const noexcept { return f_rgb > 0.0; }
  bool hp_enabled() const noexcept { return f_hp > 0.0; }

  /// Throws ConfigError when any invariant is violated.
  void validate() const;
  std::size_t window_frames() const;
  /// Sequence length of each stream (0 when disabled).
  std::size_t rgb_steps() const;
  std::size_t hp_steps() const;

  friend bool operator==(const RateConfig&, const RateConfig&) = default;
};

/// T = max(1, round(window_frames * f / native_hz)).
std::size_t sequence_length(double native_hz, double f, std::size_t window_frames);

/// Last-frame-anchored strided selection: index_k = ceil((k+1) * W / T) - 1 for k < T.
/// The final index is always window_frames - 1.
std::vector<std::size_t> sample_indices(double native_hz, double f, std::size_t window_frames);

struct FrameLabel {
  int action = 0;
  int verb = 0;
  friend bool operator==(const FrameLabel&, const FrameLabel&) = default;
};

/// One model input: per-modality sequences plus the label of the final native frame.
struct MultiRateWindow {
  nn::Matrix rgb_seq;                                  // T_rgb x D_in (empty when disabled)
  std::vector<handpose::NormalizedHandFrame> hp_seq;   // T_hp frames (empty when disabled)
  std::vector<std::size_t> rgb_frames;                 // native indices within the take
  std::vector<std::size_t> hp_frames;
  int label = 0;
  int verb = 0;
  std::string take_id;
  std::size_t end = 0;
};

/// Slices the native window ending at `end` and samples each enabled stream.
/// `rgb_frames` holds one row per native frame; `labels` one entry per native frame.
MultiRateWindow build_window(const nn::Matrix& rgb_frames,
                             std::span<const handpose::NormalizedHandFrame> hp_frames,
                             std::span<const FrameLabel> labels, std::size_t end, const RateConfig& cfg,
                             std::string take_id = {});

}  // namespace mmtmlp::sampling
