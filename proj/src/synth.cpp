#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "mmtmlp/dataset.hpp"
#include "mmtmlp/error.hpp"

namespace mmtmlp::dataset {

namespace {

using handpose::HandKeypoints;
using handpose::Vec3;

constexpr double kNativeHz = 30.0;
constexpr std::size_t kFingers = 5;
using Posture = std::array<double, kFingers>;

// Right-hand skeleton in a palm frame: fingers along +y, back of the hand along +z.
struct FingerModel {
  Vec3 base;
  Vec3 direction;
  std::array<double, 3> bones;
};

const std::array<FingerModel, kFingers>& finger_models() {
  static const std::array<FingerModel, kFingers> fingers = {{
      {Vec3(0.022, 0.025, -0.010), Vec3(0.8, 0.6, -0.2).normalized(), {0.035, 0.030, 0.025}},
      {Vec3(0.024, 0.085, 0.0), Vec3(0.10, 1.0, 0.0).normalized(), {0.040, 0.025, 0.020}},
      {Vec3(0.002, 0.090, 0.0), Vec3(0.0, 1.0, 0.0), {0.045, 0.028, 0.022}},
      {Vec3(-0.018, 0.083, 0.0), Vec3(-0.08, 1.0, 0.0).normalized(), {0.042, 0.026, 0.020}},
      {Vec3(-0.035, 0.072, 0.0), Vec3(-0.18, 1.0, 0.0).normalized(), {0.033, 0.020, 0.018}},
  }};
  return fingers;
}

/// Forward kinematics of the local right hand for per-finger flexion angles.
HandKeypoints pose_hand(const Posture& flexion) {
  constexpr std::array<double, 3> kJointShare = {1.0, 2.0, 2.7};
  HandKeypoints h = handpose::zero_hand();
  const Vec3 back(0.0, 0.0, 1.0);
  for (std::size_t f = 0; f < kFingers; ++f) {
    const auto& m = finger_models()[f];
    const Vec3 axis = back.cross(m.direction).normalized();
    Vec3 p = m.base;
    h[1 + 4 * f] = p;
    for (std::size_t b = 0; b < 3; ++b) {
      const Vec3 dir = Eigen::AngleAxisd(flexion[f] * kJointShare[b], axis) * m.direction;
      p += m.bones[b] * dir;
      h[2 + 4 * f + b] = p;
    }
  }
  return h;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Quaterniond q(g(rng), g(rng), g(rng), g(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Posture idle_posture() { return {0.25, 0.3, 0.3, 0.3, 0.3}; }

std::vector<Posture> verb_postures(std::size_t n_verbs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.4);
  std::vector<Posture> chosen{idle_posture()};
  auto far_enough = [&](const Posture& p) {
    for (const auto& q : chosen) {
      double l2 = 0.0, linf = 0.0;
      for (std::size_t f = 0; f < kFingers; ++f) {
        l2 += (p[f] - q[f]) * (p[f] - q[f]);
        linf = std::max(linf, std::abs(p[f] - q[f]));
      }
      if (std::sqrt(l2) < 0.9 || linf < 0.5) return false;
    }
    return true;
  };
  for (std::size_t v = 0; v < n_verbs; ++v) {
    Posture p{};
    for (int attempt = 0;; ++attempt) {
      for (double& x : p) x = u(rng);
      if (far_enough(p) || attempt > 10000) break;
    }
    chosen.push_back(p);
  }
  return {chosen.begin() + 1, chosen.end()};
}

const char* const kVerbNames[] = {"grab", "place", "open", "close", "pour", "take_out",
                                  "put_in", "apply", "read", "spray", "squeeze"};
const char* const kObjectNames[] = {"book", "espresso", "lotion", "spray", "milk", "cocoa", "chips", "cappuccino"};

std::string verb_name(std::size_t v) {
  return v < std::size(kVerbNames) ? kVerbNames[v] : "verb" + std::to_string(v);
}
std::string object_name(std::size_t o) {
  return o < std::size(kObjectNames) ? kObjectNames[o] : "object" + std::to_string(o);
}

/// Slowly moving global placement of one hand over a take.
struct Trajectory {
  Eigen::Matrix3d base_rotation;
  Vec3 base_position;
  Vec3 wobble_axis;
  double wobble_phase = 0.0;
  std::array<double, 3> drift_phase{};

  static Trajectory random(std::mt19937_64& rng, const Vec3& center) {
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> g(0.0, 1.0);
    Trajectory t;
    t.base_rotation = random_rotation(rng);
    t.base_position = center + 0.05 * Vec3(g(rng), g(rng), g(rng));
    t.wobble_axis = Vec3(g(rng), g(rng), g(rng)).normalized();
    t.wobble_phase = phase(rng);
    for (double& p : t.drift_phase) p = phase(rng);
    return t;
  }

  HandKeypoints place(const HandKeypoints& local, double seconds, bool mirror) const {
    const double w = 2.0 * std::numbers::pi;
    const Eigen::Matrix3d rot =
        base_rotation * Eigen::AngleAxisd(0.4 * std::sin(w * 0.11 * seconds + wobble_phase), wobble_axis).toRotationMatrix();
    const Vec3 pos = base_position + Vec3(0.06 * std::sin(w * 0.07 * seconds + drift_phase[0]),
                                          0.04 * std::sin(w * 0.13 * seconds + drift_phase[1]),
                                          0.03 * std::sin(w * 0.05 * seconds + drift_phase[2]));
    HandKeypoints out;
    for (std::size_t k = 0; k < local.size(); ++k) {
      Vec3 p = local[k];
      if (mirror) p.x() = -p.x();
      out[k] = rot * p + pos;
    }
    return out;
  }
};

}  // namespace

void SynthSpec::validate() const {
  if (n_takes == 0) throw ConfigError("synthetic spec: n_takes must be at least 1 (empty dataset)");
  if (frames_per_take == 0) throw ConfigError("synthetic spec: frames_per_take must be positive");
  if (n_verbs == 0 || n_objects == 0) throw ConfigError("synthetic spec: need at least one verb and one object");
  if (!(motion_noise >= 0.0) || !(feature_noise >= 0.0)) throw ConfigError("synthetic spec: noise must be >= 0");
  if (feature_dim < n_objects + 1) {
    throw ConfigError("synthetic spec: feature_dim must be at least n_objects + 1");
  }
  if (segment_min == 0 || segment_min > segment_max || gap_min > gap_max) {
    throw ConfigError("synthetic spec: invalid segment/gap length ranges");
  }
}

int synth_action_id(const SynthSpec& spec, std::size_t verb, std::size_t object) {
  return static_cast<int>(1 + verb * spec.n_objects + object);
}

nn::Matrix synth_feature_centers(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> g(0.0, 1.0);
  const std::size_t k = spec.n_objects + 1;
  std::vector<Eigen::VectorXd> basis;
  while (basis.size() < k) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(spec.feature_dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
    for (const auto& b : basis) v -= v.dot(b) * b;
    if (v.norm() < 1e-6) continue;
    basis.push_back(v.normalized());
  }
  // Orthonormal directions scaled by 1/sqrt(2) are pairwise exactly distance 1 apart.
  nn::Matrix centers(k, spec.feature_dim);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < spec.feature_dim; ++c)
      centers(r, c) = basis[r][static_cast<Eigen::Index>(c)] / std::numbers::sqrt2;
  return centers;
}

std::vector<Take> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const nn::Matrix centers = synth_feature_centers(spec);
  const std::vector<Posture> postures = verb_postures(spec.n_verbs, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> angle_noise(0.0, spec.motion_noise);
  std::normal_distribution<double> point_noise(0.0, 0.01 * spec.motion_noise);
  std::normal_distribution<double> feature_noise(0.0, spec.feature_noise);

  std::vector<double> verb_hz(spec.n_verbs);
  std::vector<Posture> verb_phase(spec.n_verbs);
  for (std::size_t v = 0; v < spec.n_verbs; ++v) {
    verb_hz[v] = 0.4 + unit(rng);
    for (double& p : verb_phase[v]) p = phase(rng);
  }

  // Balanced action schedule shared across takes.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t v = 0; v < spec.n_verbs; ++v)
    for (std::size_t o = 0; o < spec.n_objects; ++o) pairs.emplace_back(v, o);
  std::vector<std::pair<std::size_t, std::size_t>> schedule;
  auto next_pair = [&] {
    if (schedule.empty()) {
      schedule = pairs;
      std::shuffle(schedule.begin(), schedule.end(), rng);
    }
    auto p = schedule.back();
    schedule.pop_back();
    return p;
  };
  auto uniform_len = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  constexpr double kAmplitude = 0.12;
  std::vector<Take> takes;
  for (std::size_t ti = 0; ti < spec.n_takes; ++ti) {
    Take take;
    char id[32];
    std::snprintf(id, sizeof id, "take_%04zu", ti);
    take.id = id;
    take.n_frames = spec.frames_per_take;

    // Per-frame plan: which verb/object and which hand acts, which hands are visible.
    struct FramePlan {
      int verb = -1;
      int object = -1;
      bool right_acts = true;
      bool left_valid = true;
      bool right_valid = true;
    };
    std::vector<FramePlan> plan(take.n_frames);
    auto plan_visibility = [&](std::size_t from, std::size_t to, bool right_acts, bool in_action) {
      const bool idle_hidden = unit(rng) < 0.15;
      for (std::size_t f = from; f <= to; ++f) {
        plan[f].right_acts = right_acts;
        if (idle_hidden) (in_action && !right_acts ? plan[f].right_valid : plan[f].left_valid) = false;
      }
    };
    std::size_t t = uniform_len(spec.gap_min, spec.gap_max);
    if (t > 0) plan_visibility(0, std::min(t, take.n_frames) - 1, true, false);
    while (t < take.n_frames) {
      const std::size_t len = uniform_len(spec.segment_min, spec.segment_max);
      const std::size_t end = std::min(t + len - 1, take.n_frames - 1);
      if (end - t + 1 < std::max<std::size_t>(1, spec.segment_min / 2)) {
        plan_visibility(t, take.n_frames - 1, true, false);
        break;
      }
      const auto [verb, object] = next_pair();
      const bool right_acts = unit(rng) < 0.7;
      take.segments.push_back({t, end, synth_action_id(spec, verb, object), static_cast<int>(verb + 1)});
      for (std::size_t f = t; f <= end; ++f) {
        plan[f].verb = static_cast<int>(verb);
        plan[f].object = static_cast<int>(object);
      }
      plan_visibility(t, end, right_acts, true);
      const std::size_t gap_start = end + 1;
      const std::size_t gap = uniform_len(spec.gap_min, spec.gap_max);
      if (gap_start < take.n_frames && gap > 0) {
        plan_visibility(gap_start, std::min(gap_start + gap, take.n_frames) - 1, true, false);
      }
      t = gap_start + gap;
    }

    const Trajectory right_traj = Trajectory::random(rng, Vec3(0.15, -0.2, 0.45));
    const Trajectory left_traj = Trajectory::random(rng, Vec3(-0.15, -0.2, 0.45));
    Posture idle_phase{};
    for (double& p : idle_phase) p = phase(rng);

    take.hp_frames.resize(take.n_frames);
    take.rgb_features = nn::Matrix(take.n_frames, spec.feature_dim);
    for (std::size_t f = 0; f < take.n_frames; ++f) {
      const double seconds = static_cast<double>(f) / kNativeHz;
      const FramePlan& p = plan[f];
      auto articulate = [&](bool acting) {
        Posture flex{};
        for (std::size_t k = 0; k < kFingers; ++k) {
          if (acting) {
            const auto v = static_cast<std::size_t>(p.verb);
            flex[k] = postures[v][k] +
                      kAmplitude * std::sin(2.0 * std::numbers::pi * verb_hz[v] * seconds + verb_phase[v][k]);
          } else {
            flex[k] = idle_posture()[k] + 0.05 * std::sin(2.0 * std::numbers::pi * 0.2 * seconds + idle_phase[k]);
          }
          flex[k] += angle_noise(rng);
        }
        HandKeypoints local = pose_hand(flex);
        for (auto& kp : local)
          for (int c = 0; c < 3; ++c) kp[c] += point_noise(rng);
        return local;
      };
      const bool acting = p.verb >= 0;
      handpose::HandFrame& frame = take.hp_frames[f];
      const HandKeypoints right_local = articulate(acting && p.right_acts);
      const HandKeypoints left_local = articulate(acting && !p.right_acts);
      frame.right_valid = p.right_valid;
      frame.left_valid = p.left_valid;
      if (frame.right_valid) frame.right = right_traj.place(right_local, seconds, false);
      if (frame.left_valid) frame.left = left_traj.place(left_local, seconds, true);

      const std::size_t center = acting ? static_cast<std::size_t>(p.object) : spec.n_objects;
      auto row = take.rgb_features.row(f);
      for (std::size_t c = 0; c < spec.feature_dim; ++c) {
        // Stored as float32 on disk; round here so files round-trip exactly.
        row[c] = static_cast<float>(centers(center, c) + feature_noise(rng));
      }
    }
    takes.push_back(std::move(take));
  }
  return takes;
}

Dataset synth_dataset(const SynthSpec& spec) {
  Dataset d;
  d.takes = synth_generate(spec);
  d.actions.push_back({kBackground, "background"});
  d.verbs.push_back({kBackground, "background"});
  for (std::size_t v = 0; v < spec.n_verbs; ++v) {
    d.verbs.push_back({static_cast<int>(v + 1), verb_name(v)});
    for (std::size_t o = 0; o < spec.n_objects; ++o) {
      d.actions.push_back({synth_action_id(spec, v, o), verb_name(v) + "_" + object_name(o)});
    }
  }
  return d;
}

}  // namespace mmtmlp::dataset
