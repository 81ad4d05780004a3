#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "mmtmlp/error.hpp"
#include "mmtmlp/sampling.hpp"

using namespace mmtmlp;
using namespace mmtmlp::sampling;

namespace {

std::vector<std::size_t> range(std::size_t first, std::size_t last, std::size_t step) {
  std::vector<std::size_t> out;
  for (std::size_t i = first; i <= last; i += step) out.push_back(i);
  return out;
}

// Direct evaluation of ceil((k+1) W / T) - 1 in floating point.
std::vector<std::size_t> oracle(double native, double f, std::size_t w) {
  const double t = std::max(1.0, std::round(static_cast<double>(w) * f / native));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < static_cast<std::size_t>(t); ++k) {
    out.push_back(static_cast<std::size_t>(std::ceil(static_cast<double>(k + 1) * static_cast<double>(w) / t)) - 1);
  }
  return out;
}

struct Stream {
  nn::Matrix rgb;
  std::vector<handpose::NormalizedHandFrame> hp;
  std::vector<FrameLabel> labels;
};

Stream native_stream(std::size_t n) {
  Stream s;
  s.rgb = nn::Matrix(n, 2);
  s.hp.resize(n);
  s.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.rgb(i, 0) = static_cast<double>(i);
    s.hp[i].right[0].x() = static_cast<double>(i);
    s.labels[i] = {static_cast<int>(i % 7), static_cast<int>(i % 3)};
  }
  return s;
}

}  // namespace

TEST_CASE("sample_indices examples") {
  CHECK(sample_indices(30, 30, 60) == range(0, 59, 1));
  const auto ten = sample_indices(30, 10, 60);
  CHECK(ten.size() == 20);
  CHECK(ten == range(2, 59, 3));
  CHECK(sample_indices(30, 1, 60) == std::vector<std::size_t>{29, 59});
  CHECK(sample_indices(30, 3, 30) == std::vector<std::size_t>{9, 19, 29});
}

TEST_CASE("sample_indices matches the closed form and ends on the last frame") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> freq(0.05, 30.0);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  for (int i = 0; i < 500; ++i) {
    const double f = freq(rng);
    const std::size_t w = len(rng);
    const auto idx = sample_indices(30.0, f, w);
    CAPTURE(f);
    CAPTURE(w);
    CHECK(idx == oracle(30.0, f, w));
    CHECK(idx.back() == w - 1);
    CHECK(idx.size() == sequence_length(30.0, f, w));
    CHECK(std::adjacent_find(idx.begin(), idx.end(), std::greater_equal<>()) == idx.end());
  }
}

TEST_CASE("divisor frequencies give arithmetic sequences") {
  for (double f : {1.0, 2.0, 3.0, 5.0, 6.0, 10.0, 15.0, 30.0}) {
    const auto idx = sample_indices(30, f, 60);
    const auto stride = static_cast<std::size_t>(30.0 / f);
    for (std::size_t k = 1; k < idx.size(); ++k) CHECK(idx[k] - idx[k - 1] == stride);
  }
}

TEST_CASE("raising the frequency never shortens the sequence") {
  for (std::size_t w : {1u, 7u, 30u, 60u, 61u}) {
    std::size_t prev = 0;
    for (double f = 0.5; f <= 30.0; f += 0.5) {
      const auto idx = sample_indices(30, f, w);
      CHECK(idx.size() >= prev);
      CHECK(idx.back() == w - 1);
      prev = idx.size();
    }
  }
}

TEST_CASE("rate config validation") {
  RateConfig ok;
  CHECK_NOTHROW(ok.validate());
  CHECK(ok.window_frames() == 60);
  CHECK(ok.rgb_steps() == 60);
  RateConfig rgb_only = ok;
  rgb_only.f_hp = 0;
  CHECK(rgb_only.hp_steps() == 0);
  RateConfig bad = ok;
  bad.f_rgb = 0;
  bad.f_hp = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.f_rgb = 45;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.f_hp = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.window_seconds = 1.01;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(sample_indices(30, 0, 60), ConfigError);
  CHECK_THROWS_AS(sample_indices(30, -2, 60), ConfigError);
  CHECK_THROWS_AS(sample_indices(30, 10, 0), ConfigError);
}

TEST_CASE("build_window examples") {
  const auto s = native_stream(200);
  RateConfig cfg;
  const auto full = build_window(s.rgb, s.hp, s.labels, 59, cfg, "t");
  CHECK(full.rgb_seq.rows() == 60);
  CHECK(full.hp_seq.size() == 60);
  CHECK(full.label == s.labels[59].action);
  CHECK(full.verb == s.labels[59].verb);
  CHECK(full.take_id == "t");

  cfg.f_hp = 0;
  const auto rgb_only = build_window(s.rgb, s.hp, s.labels, 59, cfg);
  CHECK(rgb_only.hp_seq.empty());
  CHECK(rgb_only.rgb_seq.rows() == 60);

  cfg.f_hp = 30;
  cfg.f_rgb = 10;
  const auto mixed = build_window(s.rgb, s.hp, s.labels, 59, cfg);
  CHECK(mixed.rgb_seq.rows() == 20);
  CHECK(mixed.hp_seq.size() == 60);
  CHECK(mixed.rgb_frames.back() == 59);
  CHECK(mixed.hp_frames.back() == 59);
  for (std::size_t k = 0; k < mixed.rgb_frames.size(); ++k) {
    CHECK(mixed.rgb_seq(k, 0) == static_cast<double>(mixed.rgb_frames[k]));
  }
  for (std::size_t k = 0; k < mixed.hp_frames.size(); ++k) {
    CHECK(mixed.hp_seq[k].right[0].x() == static_cast<double>(mixed.hp_frames[k]));
  }
}

TEST_CASE("consecutive window ends shift every index by one") {
  const auto s = native_stream(150);
  RateConfig cfg;
  cfg.f_rgb = 3;
  cfg.f_hp = 10;
  for (std::size_t end = 59; end + 1 < 150; ++end) {
    const auto a = build_window(s.rgb, s.hp, s.labels, end, cfg);
    const auto b = build_window(s.rgb, s.hp, s.labels, end + 1, cfg);
    for (std::size_t k = 0; k < a.rgb_frames.size(); ++k) CHECK(b.rgb_frames[k] == a.rgb_frames[k] + 1);
    for (std::size_t k = 0; k < a.hp_frames.size(); ++k) CHECK(b.hp_frames[k] == a.hp_frames[k] + 1);
  }
}

TEST_CASE("build_window bounds") {
  const auto s = native_stream(100);
  RateConfig cfg;
  CHECK_THROWS_AS(build_window(s.rgb, s.hp, s.labels, 58, cfg), WindowBoundsError);
  CHECK_THROWS_AS(build_window(s.rgb, s.hp, s.labels, 100, cfg), WindowBoundsError);
  CHECK_NOTHROW(build_window(s.rgb, s.hp, s.labels, 99, cfg));
}
