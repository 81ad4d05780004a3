#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mmtmlp::handpose {

using Vec3 = Eigen::Vector3d;

inline constexpr std::size_t kKeypointsPerHand = 21;
/// Flattened length of one frame: 2 hands x 21 keypoints x 3 coordinates.
inline constexpr std::size_t kFrameFeatures = 2 * kKeypointsPerHand * 3;

/// Keypoint indices of the 21-point hand layout: wrist, then 4 joints per finger
/// (thumb, index, middle, ring, pinky), each ordered base to tip.
namespace kp {
inline constexpr std::size_t wrist = 0;
inline constexpr std::size_t thumb_cmc = 1;
inline constexpr std::size_t index_mcp = 5;
inline constexpr std::size_t middle_mcp = 9;
inline constexpr std::size_t ring_mcp = 13;
inline constexpr std::size_t pinky_mcp = 17;
}  // namespace kp

using HandKeypoints = std::array<Vec3, kKeypointsPerHand>;

inline HandKeypoints zero_hand() {
  HandKeypoints h;
  h.fill(Vec3::Zero());
  return h;
}

struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Kinematic tree rooted at keypoint 0 with a target length per edge.
/// Edges are stored in root-to-leaf order regardless of input order.
class SkeletonTopology {
 public:
  SkeletonTopology(std::size_t keypoints, std::vector<Edge> edges, std::vector<double> reference_lengths);

  /// Standard 21-keypoint hand tree (20 edges).
  static const std::vector<Edge>& hand_edges();
  static SkeletonTopology hand(std::vector<double> reference_lengths);
  static SkeletonTopology hand_unit();

  std::size_t keypoints() const noexcept { return keypoints_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<double>& reference_lengths() const noexcept { return lengths_; }

 private:
  std::size_t keypoints_;
  std::vector<Edge> edges_;
  std::vector<double> lengths_;
};

/// Which keypoints define the canonical frame: wrist->primary is rotated onto +z,
/// the component of wrist->secondary orthogonal to it onto +x.
struct CanonicalAxes {
  std::size_t primary = kp::middle_mcp;
  std::size_t secondary = kp::index_mcp;
};

/// One time step of raw bilateral keypoints (meters). Invalid hands are all zeros.
struct HandFrame {
  HandKeypoints left = zero_hand();
  HandKeypoints right = zero_hand();
  bool left_valid = false;
  bool right_valid = false;
};

/// Output of normalize_hand_frame. Both blocks share right-hand chirality.
struct NormalizedHandFrame {
  HandKeypoints left = zero_hand();
  HandKeypoints right = zero_hand();
  bool left_valid = false;
  bool right_valid = false;
};

std::vector<Vec3> translate_to_wrist(std::span<const Vec3> hand);

/// Rebuilds the pose root-to-leaf, keeping each bone's direction and replacing its
/// length with the topology's reference length.
std::vector<Vec3> standardize_bone_lengths(std::span<const Vec3> hand, const SkeletonTopology& topo);

/// Applies the proper rotation that maps the canonical vectors onto +z / +x.
std::vector<Vec3> canonical_rotate(std::span<const Vec3> hand, const CanonicalAxes& axes = {});

/// translate -> standardize -> rotate, for one hand already in right-hand chirality.
HandKeypoints normalize_hand(const HandKeypoints& hand, const SkeletonTopology& topo,
                             const CanonicalAxes& axes = {});

/// Normalizes every valid hand. The left hand is mirrored across x first.
/// Errors are re-thrown tagged with the hand side.
NormalizedHandFrame normalize_hand_frame(const HandFrame& frame, const SkeletonTopology& topo,
                                         const CanonicalAxes& axes = {});

/// Re-normalizing an already normalized frame: no mirroring (chirality is canonical).
NormalizedHandFrame normalize_hand_frame(const NormalizedHandFrame& frame, const SkeletonTopology& topo,
                                         const CanonicalAxes& axes = {});

/// Like normalize_hand_frame, but a degenerate hand is zeroed and marked invalid, and its
/// error message is appended to `problems`.
NormalizedHandFrame normalize_hand_frame_lenient(const HandFrame& frame, const SkeletonTopology& topo,
                                                 const CanonicalAxes& axes, std::vector<std::string>& problems);
NormalizedHandFrame normalize_hand_frame_lenient(const NormalizedHandFrame& frame, const SkeletonTopology& topo,
                                                 const CanonicalAxes& axes, std::vector<std::string>& problems);

HandKeypoints mirror_x(const HandKeypoints& hand);

/// Horizontal image flip in raw space: negate x and swap the hands.
HandFrame flip_horizontal(const HandFrame& frame);
/// The same flip expressed on normalized frames, where it reduces to a swap.
NormalizedHandFrame flip_horizontal(const NormalizedHandFrame& frame);

/// Left block then right block, x/y/z per keypoint.
std::array<double, kFrameFeatures> flatten(const NormalizedHandFrame& frame);
NormalizedHandFrame unflatten(std::span<const double> values, bool left_valid, bool right_valid);

std::vector<double> edge_lengths(std::span<const Vec3> hand, const SkeletonTopology& topo);

/// Per-edge mean length over all valid hands. Edges with no data fall back to 1.
std::vector<double> mean_edge_lengths(std::span<const HandFrame> frames, const SkeletonTopology& topo);

/// Reference-lengths text file: one `parent child length` line per edge.
void write_reference_lengths(const std::string& path, const SkeletonTopology& topo);
SkeletonTopology read_reference_lengths(const std::string& path);

}  // namespace mmtmlp::handpose
