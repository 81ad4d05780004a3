#include "mmtmlp/handpose.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <queue>
#include <sstream>

#include <Eigen/Geometry>

#include "mmtmlp/error.hpp"

namespace mmtmlp::handpose {

namespace {

std::string edge_string(const Edge& e) {
  return "(" + std::to_string(e.parent) + " -> " + std::to_string(e.child) + ")";
}

void require_finite(std::span<const Vec3> hand) {
  for (std::size_t k = 0; k < hand.size(); ++k) {
    if (!hand[k].allFinite()) throw InvalidPoseError("keypoint " + std::to_string(k) + " is not finite");
  }
}

std::vector<Vec3> to_vector(const HandKeypoints& h) { return {h.begin(), h.end()}; }

HandKeypoints to_array(const std::vector<Vec3>& v) {
  HandKeypoints h;
  std::copy(v.begin(), v.end(), h.begin());
  return h;
}

}  // namespace

SkeletonTopology::SkeletonTopology(std::size_t keypoints, std::vector<Edge> edges,
                                   std::vector<double> reference_lengths)
    : keypoints_(keypoints) {
  if (keypoints == 0) throw ConfigError("skeleton needs at least one keypoint");
  if (edges.size() != keypoints - 1) {
    throw ConfigError("skeleton with " + std::to_string(keypoints) + " keypoints needs " +
                      std::to_string(keypoints - 1) + " edges, got " + std::to_string(edges.size()));
  }
  if (reference_lengths.size() != edges.size()) {
    throw ConfigError("skeleton has " + std::to_string(edges.size()) + " edges but " +
                      std::to_string(reference_lengths.size()) + " reference lengths");
  }
  std::vector<int> edge_of_child(keypoints, -1);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    if (e.parent >= keypoints || e.child >= keypoints || e.child == 0) {
      throw ConfigError("invalid skeleton edge " + edge_string(e));
    }
    if (edge_of_child[e.child] != -1) {
      throw ConfigError("keypoint " + std::to_string(e.child) + " has more than one parent");
    }
    if (!(reference_lengths[i] > 0.0) || !std::isfinite(reference_lengths[i])) {
      throw ConfigError("reference length of edge " + edge_string(e) + " must be positive");
    }
    edge_of_child[e.child] = static_cast<int>(i);
  }
  // Breadth-first from the root so parents are always placed before children.
  std::vector<std::vector<std::size_t>> children(keypoints);
  for (std::size_t i = 0; i < edges.size(); ++i) children[edges[i].parent].push_back(i);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  while (!frontier.empty()) {
    const std::size_t node = frontier.front();
    frontier.pop();
    for (std::size_t ei : children[node]) {
      edges_.push_back(edges[ei]);
      lengths_.push_back(reference_lengths[ei]);
      frontier.push(edges[ei].child);
    }
  }
  if (edges_.size() != edges.size()) throw ConfigError("skeleton edges do not form a tree rooted at 0");
}

const std::vector<Edge>& SkeletonTopology::hand_edges() {
  static const std::vector<Edge> edges = [] {
    std::vector<Edge> out;
    for (std::size_t finger = 0; finger < 5; ++finger) {
      const std::size_t base = 1 + 4 * finger;
      out.push_back({kp::wrist, base});
      for (std::size_t j = 0; j < 3; ++j) out.push_back({base + j, base + j + 1});
    }
    return out;
  }();
  return edges;
}

SkeletonTopology SkeletonTopology::hand(std::vector<double> reference_lengths) {
  return SkeletonTopology(kKeypointsPerHand, hand_edges(), std::move(reference_lengths));
}

SkeletonTopology SkeletonTopology::hand_unit() {
  return hand(std::vector<double>(hand_edges().size(), 1.0));
}

std::vector<Vec3> translate_to_wrist(std::span<const Vec3> hand) {
  if (hand.empty()) throw InvalidPoseError("empty hand");
  require_finite(hand);
  const Vec3 wrist = hand[0];
  std::vector<Vec3> out(hand.begin(), hand.end());
  for (auto& p : out) p -= wrist;
  out[0] = Vec3::Zero();
  return out;
}

std::vector<Vec3> standardize_bone_lengths(std::span<const Vec3> hand, const SkeletonTopology& topo) {
  if (hand.size() != topo.keypoints()) {
    throw DimensionError("hand has " + std::to_string(hand.size()) + " keypoints, topology expects " +
                         std::to_string(topo.keypoints()));
  }
  require_finite(hand);
  std::vector<Vec3> out(hand.begin(), hand.end());
  const auto& edges = topo.edges();
  const auto& lengths = topo.reference_lengths();
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i];
    const Vec3 bone = hand[e.child] - hand[e.parent];
    const double len = bone.norm();
    if (!(len > 0.0)) throw DegeneratePoseError("zero-length bone " + edge_string(e));
    out[e.child] = out[e.parent] + lengths[i] * (bone / len);
  }
  return out;
}

std::vector<Vec3> canonical_rotate(std::span<const Vec3> hand, const CanonicalAxes& axes) {
  if (axes.primary >= hand.size() || axes.secondary >= hand.size()) {
    throw DimensionError("canonical axis keypoint out of range");
  }
  require_finite(hand);
  const Vec3& p = hand[axes.primary];
  const Vec3& s = hand[axes.secondary];
  const double pn = p.norm();
  if (!(pn > 0.0)) throw DegeneratePoseError("primary canonical vector has zero length");
  const Vec3 z = p / pn;
  const Vec3 residual = s - s.dot(z) * z;
  const double rn = residual.norm();
  if (!(rn > 1e-9 * std::max(s.norm(), pn))) {
    throw DegeneratePoseError("canonical frame vectors are collinear");
  }
  const Vec3 x = residual / rn;
  const Vec3 y = z.cross(x);
  Eigen::Matrix3d rot;
  rot.row(0) = x.transpose();
  rot.row(1) = y.transpose();
  rot.row(2) = z.transpose();
  std::vector<Vec3> out;
  out.reserve(hand.size());
  for (const auto& q : hand) out.push_back(rot * q);
  return out;
}

HandKeypoints normalize_hand(const HandKeypoints& hand, const SkeletonTopology& topo,
                             const CanonicalAxes& axes) {
  auto v = translate_to_wrist(to_vector(hand));
  v = standardize_bone_lengths(v, topo);
  v = canonical_rotate(v, axes);
  v[0] = Vec3::Zero();
  return to_array(v);
}

HandKeypoints mirror_x(const HandKeypoints& hand) {
  HandKeypoints out = hand;
  for (auto& p : out) p.x() = -p.x();
  return out;
}

namespace {

HandKeypoints normalize_side(const HandKeypoints& hand, bool mirror, const char* side,
                             const SkeletonTopology& topo, const CanonicalAxes& axes) {
  try {
    return normalize_hand(mirror ? mirror_x(hand) : hand, topo, axes);
  } catch (const DegeneratePoseError& e) {
    throw DegeneratePoseError(std::string(side) + " hand: " + e.what());
  } catch (const InvalidPoseError& e) {
    throw InvalidPoseError(std::string(side) + " hand: " + e.what());
  }
}

template <typename Frame>
NormalizedHandFrame normalize_impl(const Frame& frame, bool mirror_left, const SkeletonTopology& topo,
                                   const CanonicalAxes& axes, std::vector<std::string>* problems = nullptr) {
  if (topo.keypoints() != kKeypointsPerHand) {
    throw DimensionError("hand frames need a 21-keypoint topology");
  }
  NormalizedHandFrame out;
  auto side = [&](const HandKeypoints& in, bool valid, bool mirror, const char* name, HandKeypoints& dst,
                  bool& dst_valid) {
    if (!valid) return;
    try {
      dst = normalize_side(in, mirror, name, topo, axes);
      dst_valid = true;
    } catch (const InvalidPoseError& e) {
      if (problems == nullptr) throw;
      problems->emplace_back(e.what());
    }
  };
  side(frame.left, frame.left_valid, mirror_left, "left", out.left, out.left_valid);
  side(frame.right, frame.right_valid, false, "right", out.right, out.right_valid);
  return out;
}

}  // namespace

NormalizedHandFrame normalize_hand_frame(const HandFrame& frame, const SkeletonTopology& topo,
                                         const CanonicalAxes& axes) {
  return normalize_impl(frame, true, topo, axes);
}

NormalizedHandFrame normalize_hand_frame(const NormalizedHandFrame& frame, const SkeletonTopology& topo,
                                         const CanonicalAxes& axes) {
  return normalize_impl(frame, false, topo, axes);
}

NormalizedHandFrame normalize_hand_frame_lenient(const HandFrame& frame, const SkeletonTopology& topo,
                                                 const CanonicalAxes& axes, std::vector<std::string>& problems) {
  return normalize_impl(frame, true, topo, axes, &problems);
}

NormalizedHandFrame normalize_hand_frame_lenient(const NormalizedHandFrame& frame, const SkeletonTopology& topo,
                                                 const CanonicalAxes& axes, std::vector<std::string>& problems) {
  return normalize_impl(frame, false, topo, axes, &problems);
}

HandFrame flip_horizontal(const HandFrame& frame) {
  HandFrame out;
  out.left = frame.right_valid ? mirror_x(frame.right) : zero_hand();
  out.right = frame.left_valid ? mirror_x(frame.left) : zero_hand();
  out.left_valid = frame.right_valid;
  out.right_valid = frame.left_valid;
  return out;
}

NormalizedHandFrame flip_horizontal(const NormalizedHandFrame& frame) {
  NormalizedHandFrame out;
  out.left = frame.right;
  out.right = frame.left;
  out.left_valid = frame.right_valid;
  out.right_valid = frame.left_valid;
  return out;
}

std::array<double, kFrameFeatures> flatten(const NormalizedHandFrame& frame) {
  std::array<double, kFrameFeatures> out{};
  std::size_t i = 0;
  for (const auto* hand : {&frame.left, &frame.right}) {
    for (const auto& p : *hand) {
      out[i++] = p.x();
      out[i++] = p.y();
      out[i++] = p.z();
    }
  }
  return out;
}

NormalizedHandFrame unflatten(std::span<const double> values, bool left_valid, bool right_valid) {
  if (values.size() != kFrameFeatures) {
    throw DimensionError("hand frame needs " + std::to_string(kFrameFeatures) + " values, got " +
                         std::to_string(values.size()));
  }
  NormalizedHandFrame out;
  out.left_valid = left_valid;
  out.right_valid = right_valid;
  std::size_t i = 0;
  for (auto* hand : {&out.left, &out.right}) {
    for (auto& p : *hand) {
      p = Vec3(values[i], values[i + 1], values[i + 2]);
      i += 3;
    }
  }
  return out;
}

std::vector<double> edge_lengths(std::span<const Vec3> hand, const SkeletonTopology& topo) {
  if (hand.size() != topo.keypoints()) throw DimensionError("hand/topology keypoint count mismatch");
  std::vector<double> out;
  out.reserve(topo.edges().size());
  for (const auto& e : topo.edges()) out.push_back((hand[e.child] - hand[e.parent]).norm());
  return out;
}

std::vector<double> mean_edge_lengths(std::span<const HandFrame> frames, const SkeletonTopology& topo) {
  const std::size_t n_edges = topo.edges().size();
  std::vector<double> sum(n_edges, 0.0);
  std::size_t count = 0;
  auto accumulate = [&](const HandKeypoints& h) {
    const auto l = edge_lengths(std::span<const Vec3>(h.data(), h.size()), topo);
    for (std::size_t i = 0; i < n_edges; ++i) sum[i] += l[i];
    ++count;
  };
  for (const auto& f : frames) {
    if (f.left_valid) accumulate(f.left);
    if (f.right_valid) accumulate(f.right);
  }
  std::vector<double> out(n_edges, 1.0);
  if (count == 0) return out;
  for (std::size_t i = 0; i < n_edges; ++i) {
    const double m = sum[i] / static_cast<double>(count);
    if (m > 0.0) out[i] = m;
  }
  return out;
}

void write_reference_lengths(const std::string& path, const SkeletonTopology& topo) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write reference lengths to '" + path + "'");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < topo.edges().size(); ++i) {
    out << topo.edges()[i].parent << ' ' << topo.edges()[i].child << ' ' << topo.reference_lengths()[i]
        << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

SkeletonTopology read_reference_lengths(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open reference lengths file '" + path + "'");
  std::vector<Edge> edges;
  std::vector<double> lengths;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Edge e;
    double len = 0.0;
    std::string extra;
    if (!(ls >> e.parent >> e.child >> len) || (ls >> extra)) {
      throw ParseError(path, line_no, "expected `parent child length`");
    }
    edges.push_back(e);
    lengths.push_back(len);
  }
  const std::size_t keypoints = edges.size() + 1;
  try {
    return SkeletonTopology(keypoints, std::move(edges), std::move(lengths));
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace mmtmlp::handpose
