#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Geometry>

#include "mmtmlp/handpose.hpp"
#include "mmtmlp/nn/layers.hpp"

namespace testing {

using mmtmlp::handpose::HandKeypoints;
using mmtmlp::handpose::Vec3;
using mmtmlp::nn::Matrix;

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = n(rng);
  return m;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

/// A plausible right hand: fingers fan out along +y from the wrist, each joint bends a
/// random amount, then everything is randomly rotated and translated.
inline HandKeypoints random_hand(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  HandKeypoints h = mmtmlp::handpose::zero_hand();
  const Eigen::Matrix3d r = random_rotation(rng);
  const Vec3 t = random_vec(rng, 0.3);
  for (int finger = 0; finger < 5; ++finger) {
    const double spread = (finger - 2) * 0.35 + 0.05 * u(rng);
    Vec3 dir(std::sin(spread), std::cos(spread), 0.1 * u(rng));
    Vec3 p = Vec3::Zero();
    double seg = finger == 0 ? 0.035 : 0.07;
    for (int joint = 0; joint < 4; ++joint) {
      dir = Eigen::AngleAxisd(0.3 * (u(rng) + 1.0), Vec3::UnitX()) * dir;
      p += seg * (1.0 + 0.2 * u(rng)) * dir.normalized();
      h[static_cast<std::size_t>(1 + 4 * finger + joint)] = p;
      seg *= 0.6;
    }
  }
  for (auto& p : h) p = r * p + t;
  h[0] = t;
  return h;
}

inline HandKeypoints transform(const HandKeypoints& h, const Eigen::Matrix3d& r, const Vec3& t) {
  HandKeypoints out;
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = r * h[i] + t;
  return out;
}

inline double max_deviation(const HandKeypoints& a, const HandKeypoints& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

/// Relative gradient error with a small absolute floor so exact zeros compare cleanly.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Worst relative error between analytic gradients (already accumulated in `grad`) and
/// central differences of `loss` with respect to every entry of `value`.
inline double check_gradient(Matrix& value, const Matrix& grad, const std::function<double()>& loss,
                             double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    double& v = value.data()[i];
    const double saved = v;
    v = saved + h;
    const double up = loss();
    v = saved - h;
    const double down = loss();
    v = saved;
    worst = std::max(worst, relative_error(grad.data()[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mmtmlp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
