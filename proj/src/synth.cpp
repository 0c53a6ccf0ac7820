#include "duet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "duet/error.hpp"
#include "duet/metrics.hpp"
#include "duet/rng.hpp"
#include "duet/rotation.hpp"

namespace duet {

namespace {

using std::numbers::pi;
using Pose = std::array<Eigen::Vector3d, kLocalJointCount>;  // (x, y, z) angles for joints 1..21

// Horizontal travel, leg motion and turning happen inside this part of each beat,
// while the hop lifts both feet above the contact height gate.
constexpr double kWindowLo = 0.35;
constexpr double kWindowHi = 0.65;
constexpr double kHopLo = 0.2;
constexpr double kHopHi = 0.8;
constexpr double kHoldGap = 0.04;
constexpr int kMovesPerGenre = 8;
constexpr double kMoveJitter = 0.05;

constexpr std::array<int, kJointCount> kMirrorJoint = {0,  2,  1,  3,  5,  4,  6,  8,  7,  9,  11,
                                                       10, 12, 14, 13, 15, 17, 16, 19, 18, 21, 20};
constexpr std::array<int, 8> kLowerJoints = {1, 2, 4, 5, 7, 8, 10, 11};
constexpr std::array<int, 6> kHoldNeutral = {3, 6, 9, 12, 13, 14};

// Zero velocity only at u = 0 and u = 1.
double ease(double u) { return u - std::sin(2.0 * pi * u) / (2.0 * pi); }

double window_ease(double u, double lo, double hi) { return ease(std::clamp((u - lo) / (hi - lo), 0.0, 1.0)); }

double hop(double u) {
  if (u <= kHopLo || u >= kHopHi) return 0.0;
  const double s = std::sin(pi * (u - kHopLo) / (kHopHi - kHopLo));
  return s * s;
}

Eigen::Matrix3d joint_rotation(const Eigen::Vector3d& a) { return rot_y(a.y()) * rot_z(a.z()) * rot_x(a.x()); }

Pose mirror_pose(const Pose& p) {
  Pose out;
  for (int j = 1; j < kJointCount; ++j) {
    const Eigen::Vector3d& src = p[kMirrorJoint[j] - 1];
    out[j - 1] = {src.x(), -src.y(), -src.z()};
  }
  return out;
}

bool is_lower(int joint) { return std::find(kLowerJoints.begin(), kLowerJoints.end(), joint) != kLowerJoints.end(); }

struct Palette {
  double arm_lower_lo, arm_lower_hi;
  double arm_swing_lo, arm_swing_hi;
  double elbow_hi;
  double spine_amp;
  double hip_amp, knee_hi;
  double hop_lo, hop_hi;
  double step_lo, step_hi;
  double turn_max;
  struct Move {
    Pose pose;
    double heading;  // step direction relative to facing
    double step;     // meters
    double turn;     // yaw change, radians
  };
  std::vector<Move> moves;  // the genre's vocabulary
};

Pose random_pose(Rng& rng, const Palette& pal);

Palette palette_for(int genre) {
  Rng g(0xD0E7 + static_cast<uint64_t>(genre) * 7919);
  Palette p;
  p.arm_lower_lo = g.uniform(-0.3, 0.4);
  p.arm_lower_hi = p.arm_lower_lo + g.uniform(0.5, 1.1);
  p.arm_swing_lo = g.uniform(-0.6, 0.1);
  p.arm_swing_hi = p.arm_swing_lo + g.uniform(0.6, 1.3);
  p.elbow_hi = g.uniform(0.6, 1.7);
  p.spine_amp = g.uniform(0.05, 0.25);
  p.hip_amp = g.uniform(0.15, 0.5);
  p.knee_hi = g.uniform(0.3, 1.0);
  p.hop_lo = g.uniform(0.18, 0.21);
  p.hop_hi = p.hop_lo + g.uniform(0.01, 0.05);
  p.step_lo = g.uniform(0.2, 0.26);
  p.step_hi = p.step_lo + g.uniform(0.05, 0.18);
  p.turn_max = g.uniform(0.1, 0.5);
  for (int m = 0; m < kMovesPerGenre; ++m) {
    Palette::Move mv;
    mv.pose = random_pose(g, p);
    mv.heading = g.uniform(-pi, pi);
    mv.step = g.uniform(p.step_lo, p.step_hi);
    mv.turn = g.uniform(-p.turn_max, p.turn_max);
    p.moves.push_back(mv);
  }
  return p;
}

Pose random_pose(Rng& rng, const Palette& pal) {
  Pose p;
  for (auto& a : p) a.setZero();
  auto at = [&](int joint) -> Eigen::Vector3d& { return p[joint - 1]; };
  for (int j : {3, 6, 9}) at(j) = {rng.uniform(-1, 1) * pal.spine_amp, rng.uniform(-1, 1) * pal.spine_amp, rng.uniform(-0.5, 0.5) * pal.spine_amp};
  at(12) = {rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3), 0.0};
  at(15) = {rng.uniform(-0.2, 0.2), rng.uniform(-0.3, 0.3), rng.uniform(-0.1, 0.1)};
  at(13) = {0.0, rng.uniform(-0.1, 0.1), -rng.uniform(0.0, 0.15)};
  at(14) = {0.0, -rng.uniform(-0.1, 0.1), rng.uniform(0.0, 0.15)};
  // Left arm points +X at rest, right arm -X; mirrored angle signs.
  at(16) = {0.0, -rng.uniform(pal.arm_swing_lo, pal.arm_swing_hi), -rng.uniform(pal.arm_lower_lo, pal.arm_lower_hi)};
  at(17) = {0.0, rng.uniform(pal.arm_swing_lo, pal.arm_swing_hi), rng.uniform(pal.arm_lower_lo, pal.arm_lower_hi)};
  at(18) = {0.0, -rng.uniform(0.0, pal.elbow_hi), 0.0};
  at(19) = {0.0, rng.uniform(0.0, pal.elbow_hi), 0.0};
  at(20) = {rng.uniform(-0.3, 0.3), 0.0, rng.uniform(-0.3, 0.3)};
  at(21) = {rng.uniform(-0.3, 0.3), 0.0, rng.uniform(-0.3, 0.3)};
  for (int side = 0; side < 2; ++side) {
    const double s = side == 0 ? 1.0 : -1.0;
    const double flex = rng.uniform(-pal.hip_amp, 0.4 * pal.hip_amp);
    at(1 + side) = {flex, s * rng.uniform(-0.2, 0.2), s * rng.uniform(0.0, 0.15)};
    at(4 + side) = {rng.uniform(0.0, pal.knee_hi), 0.0, 0.0};
    at(7 + side) = {rng.uniform(-0.2, 0.3), 0.0, 0.0};
    at(10 + side) = {rng.uniform(-0.2, 0.2), 0.0, 0.0};
  }
  return p;
}

// A vocabulary move with small per-beat jitter; never the previous move twice.
Palette::Move pick_move(Rng& rng, const Palette& pal, int& last) {
  int m;
  do {
    m = static_cast<int>(rng.below(pal.moves.size()));
  } while (m == last);
  last = m;
  Palette::Move mv = pal.moves[m];
  for (auto& a : mv.pose) {
    for (int c = 0; c < 3; ++c) {
      if (a[c] != 0.0) a[c] += rng.uniform(-kMoveJitter, kMoveJitter);
    }
  }
  mv.heading += rng.uniform(-kMoveJitter, kMoveJitter);
  mv.step += rng.uniform(-0.02, 0.02);
  mv.turn += rng.uniform(-kMoveJitter, kMoveJitter);
  return mv;
}

// A's right arm reaching forward; B's mirrored left arm meets it.
void apply_hold(Pose& p) {
  for (int j : kHoldNeutral) p[j - 1].setZero();
  p[17 - 1] = {0.0, 1.35, 0.15};
  p[19 - 1] = {0.0, 0.25, 0.0};
  p[21 - 1].setZero();
}

struct BeatKeys {
  std::vector<Pose> pose;
  std::vector<double> yaw, sep, hop_height;
  std::vector<Eigen::Vector2d> pos;  // (x, z)
};

std::vector<int> hold_schedule(int beats, int holds, Rng rng) {
  std::vector<int> hold(beats, 0);
  if (holds <= 0) return hold;
  if (holds >= beats) {
    std::fill(hold.begin(), hold.end(), 1);
    return hold;
  }
  const int runs = std::max(1, std::min({holds, beats - holds, static_cast<int>(std::lround(holds / 4.0))}));
  auto split = [&](int total, int parts) {
    std::vector<int> sizes(parts, 1);
    for (int r = total - parts; r > 0; --r) ++sizes[rng.below(parts)];
    return sizes;
  };
  const bool hold_first = rng.uniform() < 0.5;
  const auto near = split(holds, runs);
  const auto far = split(beats - holds, runs);
  int k = 0;
  for (int r = 0; r < runs; ++r) {
    if (hold_first) {
      for (int i = 0; i < near[r]; ++i) hold[k++] = 1;
      k += far[r];
    } else {
      k += far[r];
      for (int i = 0; i < near[r]; ++i) hold[k++] = 1;
    }
  }
  return hold;
}

double hold_separation(const Skeleton& skel) {
  Pose p;
  for (auto& a : p) a.setZero();
  apply_hold(p);
  std::array<Eigen::Matrix3d, kLocalJointCount> rots;
  for (int j = 0; j < kLocalJointCount; ++j) rots[j] = joint_rotation(p[j]);
  const auto pos = forward_kinematics(rots, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), skel);
  return 2.0 * pos[21].z() + kHoldGap;
}

double ground_height(const Skeleton& skel) {
  std::array<Eigen::Matrix3d, kLocalJointCount> rots;
  rots.fill(Eigen::Matrix3d::Identity());
  const auto pos = forward_kinematics(rots, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), skel);
  double lowest = 0.0;
  for (int j : kFootJoints) lowest = std::min(lowest, pos[j].y());
  return -lowest;
}

GlobalDuetMotion build_motion(const SynthSpec& spec, const std::vector<int>& hold,
                              const BeatKeys& keys, double near_sep, double ground) {
  const int n = static_cast<int>(std::lround(spec.duration * kFps));
  const double period = 60.0 / spec.bpm;
  GlobalDuetMotion m;
  for (auto& pm : m.person) {
    pm.root_position.resize(n);
    pm.root_orientation.resize(n);
    pm.local_rotations.resize(n);
  }
  for (int i = 0; i < n; ++i) {
    const double phase = (i / kFps) / period;
    const int k = static_cast<int>(std::floor(phase + 1e-9));
    const double u = std::clamp(phase - k, 0.0, 1.0);
    const double full = ease(u);
    const double win = window_ease(u, kWindowLo, kWindowHi);

    Pose pose;
    for (int j = 1; j < kJointCount; ++j) {
      const double w = is_lower(j) ? win : full;
      pose[j - 1] = keys.pose[k][j - 1] + w * (keys.pose[k + 1][j - 1] - keys.pose[k][j - 1]);
    }
    const double yaw = keys.yaw[k] + win * (keys.yaw[k + 1] - keys.yaw[k]);
    const Eigen::Vector2d xz = keys.pos[k] + win * (keys.pos[k + 1] - keys.pos[k]);
    const double sep_k = hold[k] ? near_sep : keys.sep[k];
    const double sep_k1 = hold[k + 1] ? near_sep : keys.sep[k + 1];
    const double sep = sep_k + win * (sep_k1 - sep_k);
    const double height = ground + keys.hop_height[k] * hop(u);

    const Eigen::Matrix3d ra = rot_y(yaw);
    const Eigen::Vector3d root_a(xz.x(), height, xz.y());
    m.person[0].root_position[i] = root_a;
    m.person[0].root_orientation[i] = ra;
    m.person[1].root_position[i] = root_a + ra * Eigen::Vector3d(0.0, 0.0, sep);
    m.person[1].root_orientation[i] = rot_y(yaw + pi);
    const Pose mirrored = mirror_pose(pose);
    for (int j = 0; j < kLocalJointCount; ++j) {
      m.person[0].local_rotations[i][j] = joint_rotation(pose[j]);
      m.person[1].local_rotations[i][j] = joint_rotation(mirrored[j]);
    }
  }
  return m;
}

}  // namespace

void SynthSpec::validate() const {
  if (!(bpm >= 40.0 && bpm <= 240.0)) throw Error("bad-spec", "bpm outside [40, 240]");
  if (!(duration >= 14.0)) throw Error("bad-spec", "duration below 14 s");
  if (!(interaction_profile >= 0.0 && interaction_profile <= 1.0)) throw Error("bad-spec", "interaction_profile outside [0, 1]");
  if (genre_id < 0 || genre_id >= kGenreCount) throw Error("bad-spec", "genre_id out of range");
}

SynthDuet synth_duet(const SynthSpec& spec, const Skeleton& skel, const SynthTolerances& tol) {
  spec.validate();
  skel.validate();
  Rng rng(spec.seed);
  const Palette pal = palette_for(spec.genre_id);
  const double period = 60.0 / spec.bpm;
  const int beats = static_cast<int>(std::ceil(spec.duration / period)) + 2;

  BeatKeys keys;
  keys.pose.resize(beats);
  keys.yaw.resize(beats);
  keys.sep.resize(beats);
  keys.hop_height.resize(beats);
  keys.pos.resize(beats);
  keys.yaw[0] = 0.0;
  keys.pos[0].setZero();
  int last_move = -1;
  for (int k = 0; k < beats; ++k) {
    const Palette::Move mv = pick_move(rng, pal, last_move);
    keys.pose[k] = mv.pose;
    keys.sep[k] = 2.3 + 0.2 * std::sin(0.9 * k) + rng.uniform(-0.05, 0.15);
    keys.hop_height[k] = rng.uniform(pal.hop_lo, pal.hop_hi);
    if (k + 1 < beats) {
      keys.yaw[k + 1] = keys.yaw[k] + mv.turn;
      Eigen::Vector2d dir(std::sin(keys.yaw[k] + mv.heading), std::cos(keys.yaw[k] + mv.heading));
      // Stepping back toward the origin keeps long clips on a bounded floor.
      if (keys.pos[k].norm() > 2.0 && dir.dot(keys.pos[k]) > 0.0) dir = -dir;
      keys.pos[k + 1] = keys.pos[k] + mv.step * dir;
    }
  }

  const double near_sep = hold_separation(skel);
  const double ground = ground_height(skel);
  const Rng schedule_rng = rng.fork();
  const int target_holds = static_cast<int>(std::lround(spec.interaction_profile * beats));

  // Try hold counts nearest to the proportional guess first.
  std::vector<int> candidates;
  for (int d = 0; d <= beats; ++d) {
    for (int h : {target_holds - d, target_holds + d}) {
      if (h >= 0 && h <= beats && std::find(candidates.begin(), candidates.end(), h) == candidates.end()) {
        candidates.push_back(h);
      }
    }
  }

  SynthDuet best;
  double best_err = 1e9;
  for (int holds : candidates) {
    const auto hold = hold_schedule(beats, holds, schedule_rng);
    BeatKeys k2 = keys;
    for (int k = 0; k < beats; ++k) {
      if (hold[k]) apply_hold(k2.pose[k]);
    }
    GlobalDuetMotion motion = build_motion(spec, hold, k2, near_sep, ground);
    const double cf = contact_frequency(motion, skel);
    const double err = std::abs(cf - 100.0 * spec.interaction_profile);
    if (err < best_err) {
      best_err = err;
      best.motion = std::move(motion);
      best.contact_fraction = cf / 100.0;
    }
    if (err <= 0.5 * tol.contact_points) break;
  }
  if (best_err > tol.contact_points) {
    throw Error("synth-out-of-tolerance", "contact fraction " + std::to_string(best.contact_fraction) + " vs target " +
                                             std::to_string(spec.interaction_profile));
  }

  ClickTrack track = synth_click_track(spec.bpm, spec.duration, spec.seed ^ 0xA5A5A5A5ULL);
  best.audio = std::move(track.audio);
  best.beat_times = std::move(track.beat_times);
  best.beat_alignment = beat_alignment(best.motion, skel, best.beat_times);
  if (best.beat_alignment < tol.min_beat_alignment) {
    throw Error("synth-out-of-tolerance", "beat alignment " + std::to_string(best.beat_alignment));
  }
  return best;
}

}  // namespace duet
