#pragma once

#include "duet/duet_repr.hpp"
#include "duet/rng.hpp"
#include "duet/rotation.hpp"

namespace duet::test {

inline Eigen::Matrix3d random_rotation(Rng& rng, double max_angle = 3.0) {
  const Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
  return axis_angle(axis, rng.uniform(-max_angle, max_angle));
}

inline Eigen::Matrix3d random_yaw(Rng& rng) { return rot_y(rng.uniform(-3.1, 3.1)); }

// Smooth-ish random two-person motion, not canonical.
inline GlobalDuetMotion random_motion(int frames, uint64_t seed) {
  Rng rng(seed);
  GlobalDuetMotion m;
  for (int p = 0; p < 2; ++p) {
    auto& person = m.person[p];
    Eigen::Vector3d pos(rng.uniform(-2, 2), rng.uniform(0.8, 1.0), rng.uniform(-2, 2));
    Eigen::Matrix3d yaw = random_yaw(rng);
    std::array<Eigen::Matrix3d, kLocalJointCount> local;
    for (auto& r : local) r = random_rotation(rng, 0.6);
    for (int t = 0; t < frames; ++t) {
      pos += Eigen::Vector3d(rng.uniform(-0.02, 0.02), rng.uniform(-0.005, 0.005), rng.uniform(-0.02, 0.02));
      yaw = yaw * rot_y(rng.uniform(-0.03, 0.03));
      for (auto& r : local) r = r * random_rotation(rng, 0.03);
      person.root_position.push_back(pos);
      person.root_orientation.push_back(yaw * random_rotation(rng, 0.05));
      person.local_rotations.push_back(local);
    }
  }
  return m;
}

inline double max_joint_error(const GlobalDuetMotion& a, const GlobalDuetMotion& b, const Skeleton& skel) {
  double worst = 0.0;
  for (int p = 0; p < 2; ++p) {
    const auto pa = person_positions(a.person[p], skel);
    const auto pb = person_positions(b.person[p], skel);
    for (size_t t = 0; t < pa.size(); ++t)
      for (int j = 0; j < kJointCount; ++j) worst = std::max(worst, (pa[t][j] - pb[t][j]).norm());
  }
  return worst;
}

}  // namespace duet::test
