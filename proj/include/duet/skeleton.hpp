#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace duet {

inline constexpr int kJointCount = 22;
inline constexpr int kLocalJointCount = kJointCount - 1;

// Heel/toe joints used for foot contacts, in contact-channel order.
inline constexpr std::array<int, 4> kFootJoints = {7, 10, 8, 11};
// Hands, feet and head carry the higher interaction-loss weight.
inline constexpr std::array<int, 5> kEndEffectors = {10, 11, 15, 20, 21};

using JointPositions = std::array<Eigen::Vector3d, kJointCount>;

struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parents;  // parents[0] == -1
  std::vector<Eigen::Vector3d> rest_offsets;

  int joint_count() const { return static_cast<int>(parents.size()); }

  // Throws Error("bad-skeleton") when the tree invariants do not hold.
  void validate() const;

  static Skeleton smpl22();
  static Skeleton load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// Local rotations are given for joints 1..21 (index 0 of the span is joint 1).
// Each non-root joint sits at parent position + parent global rotation * offset.
JointPositions forward_kinematics(std::span<const Eigen::Matrix3d> local_rotations,
                                  const Eigen::Matrix3d& root_orientation,
                                  const Eigen::Vector3d& root_position,
                                  const Skeleton& skel);

}  // namespace duet
