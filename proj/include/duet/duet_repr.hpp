#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "duet/skeleton.hpp"

namespace duet {

inline constexpr double kFps = 30.0;

// Unified two-person feature layout. Each person owns a 268-wide block:
//   [0,3)     root translation (A: x/z step from the previous frame, zero at frame 0,
//             and absolute height; B: offset from A's root)
//   [3,9)     6-D global root orientation
//   [9,72)    root-frame joint positions, joints 1..21
//   [72,198)  6-D local rotations, joints 1..21
//   [198,264) root-frame joint velocities, joints 0..21 (per-frame deltas)
//   [264,268) foot contacts (left heel, left toe, right heel, right toe)
namespace layout {
inline constexpr int kPersonWidth = 268;
inline constexpr int kWidth = 2 * kPersonWidth;  // 536
inline constexpr int kRootTrans = 0;
inline constexpr int kRootRot = 3;
inline constexpr int kJointPos = 9;
inline constexpr int kJointRot = 72;
inline constexpr int kJointVel = 198;
inline constexpr int kContacts = 264;
inline constexpr int kLocalWidth = kWidth - 6;  // 530
inline constexpr int person_base(int person) { return person * kPersonWidth; }
}  // namespace layout

static_assert(3 + 6 + 3 * kLocalJointCount + 6 * kLocalJointCount + 3 * kJointCount + 4 ==
              layout::kPersonWidth);

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PersonMotion {
  std::vector<Eigen::Vector3d> root_position;
  std::vector<Eigen::Matrix3d> root_orientation;
  // local_rotations[frame][k] is the rotation of joint k+1 relative to its parent.
  std::vector<std::array<Eigen::Matrix3d, kLocalJointCount>> local_rotations;
};

struct GlobalDuetMotion {
  double fps = kFps;
  std::array<PersonMotion, 2> person;  // 0 = A, 1 = B

  int frames() const { return static_cast<int>(person[0].root_position.size()); }
  // Throws Error("invalid-motion") on size mismatch, N < 2 or non-rotations.
  void validate() const;
};

struct FeatureStats {
  static constexpr double kStdFloor = 1e-8;
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

struct DuetClip {
  FeatureMatrix features;  // N x 536
  double fps = kFps;
  bool normalized = false;
  std::string stats_id;

  int frames() const { return static_cast<int>(features.rows()); }
};

// World-space joint positions per frame for one person.
using PersonPositions = std::vector<JointPositions>;

GlobalDuetMotion canonicalize(const GlobalDuetMotion& motion);

DuetClip encode_features(const GlobalDuetMotion& motion, const Skeleton& skel,
                         const FeatureStats* stats = nullptr);

GlobalDuetMotion decode_features(const DuetClip& clip, const Skeleton& skel,
                                 const FeatureStats* stats = nullptr);

// FK for every frame of one person.
PersonPositions person_positions(const PersonMotion& person, const Skeleton& skel);

// heel_toe[i][k] for the four kFootJoints. Contact iff speed < threshold (m/s).
std::vector<std::array<int, 4>> detect_foot_contacts(
    const std::vector<std::array<Eigen::Vector3d, 4>>& heel_toe, double fps = kFps,
    double speed_threshold = 0.15);

DuetClip mirror_swap(const DuetClip& clip, const Skeleton& skel);

DuetClip normalize(const DuetClip& clip, const FeatureStats& stats);
DuetClip denormalize(const DuetClip& clip, const FeatureStats& stats);

// Swaps person labels in a world-space motion.
GlobalDuetMotion swap_persons(const GlobalDuetMotion& motion);

}  // namespace duet
