#include "duet/duet_repr.hpp"

#include <cmath>

#include "duet/error.hpp"
#include "duet/rotation.hpp"

namespace duet {

namespace {

constexpr double kCanonicalTol = 1e-6;

Eigen::Vector3d facing(const Eigen::Matrix3d& root_orientation) {
  return root_orientation * Eigen::Vector3d::UnitZ();
}

void put3(FeatureMatrix& f, int row, int col, const Eigen::Vector3d& v) {
  f(row, col) = v.x();
  f(row, col + 1) = v.y();
  f(row, col + 2) = v.z();
}

void put6(FeatureMatrix& f, int row, int col, const Eigen::Matrix3d& r) {
  const Rot6 v = rotation_to_6d(r);
  for (int k = 0; k < 6; ++k) f(row, col + k) = v[k];
}

Eigen::Vector3d get3(const FeatureMatrix& f, int row, int col) {
  return {f(row, col), f(row, col + 1), f(row, col + 2)};
}

DuetClip encode_unchecked(const GlobalDuetMotion& motion, const Skeleton& skel) {
  const int n = motion.frames();
  DuetClip clip;
  clip.fps = motion.fps;
  clip.features = FeatureMatrix::Zero(n, layout::kWidth);
  auto& f = clip.features;

  const auto& a_root = motion.person[0].root_position;
  for (int p = 0; p < 2; ++p) {
    const PersonMotion& pm = motion.person[p];
    const int base = layout::person_base(p);
    const PersonPositions pos = person_positions(pm, skel);

    std::vector<std::array<Eigen::Vector3d, 4>> heel_toe(n);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 4; ++k) heel_toe[i][k] = pos[i][kFootJoints[k]];
    }
    const auto contacts = detect_foot_contacts(heel_toe, motion.fps);

    for (int i = 0; i < n; ++i) {
      if (p == 0) {
        // Horizontal displacement since the previous frame (zero at frame 0) and absolute height.
        const Eigen::Vector3d step = i == 0 ? Eigen::Vector3d::Zero() : Eigen::Vector3d(a_root[i] - a_root[i - 1]);
        put3(f, i, base + layout::kRootTrans, Eigen::Vector3d(step.x(), a_root[i].y(), step.z()));
      } else {
        put3(f, i, base + layout::kRootTrans, pm.root_position[i] - a_root[i]);
      }
      const Eigen::Matrix3d& r = pm.root_orientation[i];
      const Eigen::Matrix3d rt = r.transpose();
      put6(f, i, base + layout::kRootRot, r);
      for (int j = 1; j < kJointCount; ++j) {
        put3(f, i, base + layout::kJointPos + 3 * (j - 1), rt * (pos[i][j] - pos[i][0]));
        put6(f, i, base + layout::kJointRot + 6 * (j - 1), pm.local_rotations[i][j - 1]);
      }
      if (i > 0) {
        for (int j = 0; j < kJointCount; ++j) {
          put3(f, i, base + layout::kJointVel + 3 * j, rt * (pos[i][j] - pos[i - 1][j]));
        }
      }
      for (int k = 0; k < 4; ++k) f(i, base + layout::kContacts + k) = contacts[i][k];
    }
  }
  return clip;
}

}  // namespace

void GlobalDuetMotion::validate() const {
  const size_t n = person[0].root_position.size();
  if (n < 2) throw Error("invalid-motion", "need at least 2 frames");
  for (const auto& pm : person) {
    if (pm.root_position.size() != n || pm.root_orientation.size() != n || pm.local_rotations.size() != n) {
      throw Error("invalid-motion", "per-person frame counts differ");
    }
    for (size_t i = 0; i < n; ++i) {
      if (!pm.root_position[i].allFinite() || !is_rotation(pm.root_orientation[i])) {
        throw Error("invalid-motion", "bad root at frame " + std::to_string(i));
      }
      for (const auto& r : pm.local_rotations[i]) {
        if (!is_rotation(r)) throw Error("invalid-motion", "bad local rotation at frame " + std::to_string(i));
      }
    }
  }
}

PersonPositions person_positions(const PersonMotion& person, const Skeleton& skel) {
  PersonPositions out(person.root_position.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = forward_kinematics(person.local_rotations[i], person.root_orientation[i],
                                person.root_position[i], skel);
  }
  return out;
}

GlobalDuetMotion canonicalize(const GlobalDuetMotion& motion) {
  motion.validate();
  Eigen::Vector3d fwd = facing(motion.person[0].root_orientation[0]);
  fwd.y() = 0.0;
  if (fwd.norm() < kCanonicalTol) throw Error("degenerate-facing");
  const double yaw = std::atan2(fwd.x(), fwd.z());
  const Eigen::Matrix3d rot = rot_y(-yaw);
  Eigen::Vector3d shift = -(rot * motion.person[0].root_position[0]);
  shift.y() = 0.0;

  GlobalDuetMotion out = motion;
  for (auto& pm : out.person) {
    for (int i = 0; i < out.frames(); ++i) {
      pm.root_position[i] = rot * pm.root_position[i] + shift;
      pm.root_orientation[i] = rot * pm.root_orientation[i];
    }
  }
  return out;
}

DuetClip encode_features(const GlobalDuetMotion& motion, const Skeleton& skel, const FeatureStats* stats) {
  motion.validate();
  const Eigen::Vector3d& p0 = motion.person[0].root_position[0];
  if (std::hypot(p0.x(), p0.z()) > kCanonicalTol) {
    throw Error("not-canonical", "frame-0 root of A is off the origin");
  }
  DuetClip clip = encode_unchecked(motion, skel);
  if (stats) clip = normalize(clip, *stats);
  return clip;
}

GlobalDuetMotion decode_features(const DuetClip& clip, const Skeleton& skel, const FeatureStats* stats) {
  (void)skel;
  if (clip.features.cols() != layout::kWidth) throw Error("shape-mismatch", "clip width must be 536");
  if (!clip.features.allFinite()) throw Error("invalid-features");
  if (clip.frames() < 2) throw Error("invalid-features", "need at least 2 frames");
  DuetClip raw;
  if (clip.normalized) {
    if (!stats) throw Error("missing-stats", "normalized clip needs feature stats");
    raw = denormalize(clip, *stats);
  }
  const FeatureMatrix& f = clip.normalized ? raw.features : clip.features;
  const int n = static_cast<int>(f.rows());

  GlobalDuetMotion m;
  m.fps = clip.fps;
  for (auto& pm : m.person) {
    pm.root_position.resize(n);
    pm.root_orientation.resize(n);
    pm.local_rotations.resize(n);
  }
  Eigen::Vector3d a_root = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d t = get3(f, i, layout::kRootTrans);
    a_root = Eigen::Vector3d(a_root.x() + t.x(), t.y(), a_root.z() + t.z());
    m.person[0].root_position[i] = a_root;
    m.person[1].root_position[i] = a_root + get3(f, i, layout::kPersonWidth + layout::kRootTrans);
    for (int p = 0; p < 2; ++p) {
      const int base = layout::person_base(p);
      m.person[p].root_orientation[i] = rotation_from_6d(&f(i, base + layout::kRootRot));
      for (int k = 0; k < kLocalJointCount; ++k) {
        m.person[p].local_rotations[i][k] = rotation_from_6d(&f(i, base + layout::kJointRot + 6 * k));
      }
    }
  }
  return m;
}

std::vector<std::array<int, 4>> detect_foot_contacts(const std::vector<std::array<Eigen::Vector3d, 4>>& heel_toe,
                                                     double fps, double speed_threshold) {
  const size_t n = heel_toe.size();
  std::vector<std::array<int, 4>> out(n, {0, 0, 0, 0});
  if (n < 2) return out;
  for (size_t i = 1; i < n; ++i) {
    for (int k = 0; k < 4; ++k) {
      const double speed = (heel_toe[i][k] - heel_toe[i - 1][k]).norm() * fps;
      out[i][k] = speed < speed_threshold ? 1 : 0;
    }
  }
  out[0] = out[1];
  return out;
}

GlobalDuetMotion swap_persons(const GlobalDuetMotion& motion) {
  GlobalDuetMotion out = motion;
  std::swap(out.person[0], out.person[1]);
  return out;
}

DuetClip mirror_swap(const DuetClip& clip, const Skeleton& skel) {
  if (clip.normalized) throw Error("cannot-mirror-normalized");
  DuetClip out = encode_unchecked(swap_persons(decode_features(clip, skel)), skel);
  out.fps = clip.fps;
  return out;
}

DuetClip normalize(const DuetClip& clip, const FeatureStats& stats) {
  if (clip.normalized) throw Error("already-normalized");
  if (stats.mean.size() != clip.features.cols() || stats.std.size() != clip.features.cols()) {
    throw Error("shape-mismatch", "stats dimension differs from clip width");
  }
  DuetClip out = clip;
  out.features = (clip.features.rowwise() - stats.mean.transpose()).array().rowwise() / stats.std.transpose().array();
  out.normalized = true;
  return out;
}

DuetClip denormalize(const DuetClip& clip, const FeatureStats& stats) {
  if (!clip.normalized) throw Error("not-normalized");
  if (stats.mean.size() != clip.features.cols() || stats.std.size() != clip.features.cols()) {
    throw Error("shape-mismatch", "stats dimension differs from clip width");
  }
  DuetClip out = clip;
  out.features = (clip.features.array().rowwise() * stats.std.transpose().array()).matrix().rowwise() +
                 stats.mean.transpose();
  out.normalized = false;
  return out;
}

}  // namespace duet
