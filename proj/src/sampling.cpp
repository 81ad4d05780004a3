#include "mmtmlp/sampling.hpp"

#include <cmath>

#include "mmtmlp/error.hpp"

namespace mmtmlp::sampling {

namespace {

void check_frequency(double native_hz, double f, const char* what) {
  if (!std::isfinite(f) || f <= 0.0) {
    throw ConfigError(std::string(what) + " must be positive for an enabled stream, got " + std::to_string(f));
  }
  if (f > native_hz) {
    throw ConfigError(std::string(what) + " = " + std::to_string(f) + " exceeds native rate " +
                      std::to_string(native_hz));
  }
}

}  // namespace

void RateConfig::validate() const {
  if (!std::isfinite(native_hz) || native_hz <= 0.0) throw ConfigError("native_hz must be positive");
  if (!std::isfinite(window_seconds) || window_seconds <= 0.0) {
    throw ConfigError("window_seconds must be positive");
  }
  if (f_rgb < 0.0 || f_hp < 0.0) throw ConfigError("sampling frequencies must be non-negative");
  if (!rgb_enabled() && !hp_enabled()) throw ConfigError("both streams are disabled (f_rgb = f_hp = 0)");
  if (rgb_enabled()) check_frequency(native_hz, f_rgb, "f_rgb");
  if (hp_enabled()) check_frequency(native_hz, f_hp, "f_hp");
  const double frames = window_seconds * native_hz;
  if (std::abs(frames - std::round(frames)) > 1e-9 || std::round(frames) < 1.0) {
    throw ConfigError("window_seconds * native_hz = " + std::to_string(frames) +
                      " is not a whole number of frames");
  }
}

std::size_t RateConfig::window_frames() const {
  validate();
  return static_cast<std::size_t>(std::llround(window_seconds * native_hz));
}

std::size_t RateConfig::rgb_steps() const {
  return rgb_enabled() ? sequence_length(native_hz, f_rgb, window_frames()) : 0;
}

std::size_t RateConfig::hp_steps() const {
  return hp_enabled() ? sequence_length(native_hz, f_hp, window_frames()) : 0;
}

std::size_t sequence_length(double native_hz, double f, std::size_t window_frames) {
  if (window_frames == 0) throw ConfigError("window must contain at least one frame");
  check_frequency(native_hz, f, "sampling frequency");
  const auto t = std::llround(static_cast<double>(window_frames) * f / native_hz);
  return t < 1 ? 1 : static_cast<std::size_t>(t);
}

std::vector<std::size_t> sample_indices(double native_hz, double f, std::size_t window_frames) {
  const std::size_t t = sequence_length(native_hz, f, window_frames);
  std::vector<std::size_t> out;
  out.reserve(t);
  for (std::size_t k = 0; k < t; ++k) out.push_back(((k + 1) * window_frames + t - 1) / t - 1);
  return out;
}

MultiRateWindow build_window(const nn::Matrix& rgb_frames,
                             std::span<const handpose::NormalizedHandFrame> hp_frames,
                             std::span<const FrameLabel> labels, std::size_t end, const RateConfig& cfg,
                             std::string take_id) {
  const std::size_t w = cfg.window_frames();
  if (end + 1 < w) {
    throw WindowBoundsError("window of " + std::to_string(w) + " frames cannot end at frame " +
                            std::to_string(end));
  }
  if (end >= labels.size()) {
    throw WindowBoundsError("window end " + std::to_string(end) + " beyond " + std::to_string(labels.size()) +
                            " labeled frames");
  }
  const std::size_t start = end + 1 - w;
  MultiRateWindow out;
  out.label = labels[end].action;
  out.verb = labels[end].verb;
  out.take_id = std::move(take_id);
  out.end = end;
  if (cfg.rgb_enabled()) {
    if (end >= rgb_frames.rows()) {
      throw WindowBoundsError("RGB stream has " + std::to_string(rgb_frames.rows()) +
                              " frames, window ends at " + std::to_string(end));
    }
    const auto idx = sample_indices(cfg.native_hz, cfg.f_rgb, w);
    out.rgb_seq = nn::Matrix(idx.size(), rgb_frames.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t frame = start + idx[k];
      out.rgb_frames.push_back(frame);
      auto src = rgb_frames.row(frame);
      std::copy(src.begin(), src.end(), out.rgb_seq.row(k).begin());
    }
  }
  if (cfg.hp_enabled()) {
    if (end >= hp_frames.size()) {
      throw WindowBoundsError("hand-pose stream has " + std::to_string(hp_frames.size()) +
                              " frames, window ends at " + std::to_string(end));
    }
    for (std::size_t i : sample_indices(cfg.native_hz, cfg.f_hp, w)) {
      out.hp_frames.push_back(start + i);
      out.hp_seq.push_back(hp_frames[start + i]);
    }
  }
  return out;
}

}  // namespace mmtmlp::sampling
