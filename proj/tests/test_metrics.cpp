#include <doctest.h>

#include <numbers>

#include "duet/error.hpp"
#include "duet/metrics.hpp"
#include "helpers.hpp"

using namespace duet;

namespace {

const Skeleton& skel() {
  static const Skeleton s = Skeleton::smpl22();
  return s;
}

// Both persons in the identity pose; roots follow the given paths.
GlobalDuetMotion rigid_motion(const std::vector<Eigen::Vector3d>& a, const std::vector<Eigen::Vector3d>& b) {
  GlobalDuetMotion m;
  std::array<Eigen::Matrix3d, kLocalJointCount> local;
  local.fill(Eigen::Matrix3d::Identity());
  for (int p = 0; p < 2; ++p) {
    const auto& path = p == 0 ? a : b;
    for (const auto& r : path) {
      m.person[p].root_position.push_back(r);
      m.person[p].root_orientation.push_back(Eigen::Matrix3d::Identity());
      m.person[p].local_rotations.push_back(local);
    }
  }
  return m;
}

double min_gap(const JointPositions& a, const JointPositions& b) {
  double best = 1e9;
  for (const auto& x : a)
    for (const auto& y : b) best = std::min(best, (x - y).norm());
  return best;
}

double skeleton_width() {
  std::array<Eigen::Matrix3d, kLocalJointCount> local;
  local.fill(Eigen::Matrix3d::Identity());
  const auto p = forward_kinematics(local, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), skel());
  double lo = 1e9, hi = -1e9;
  for (const auto& j : p) {
    lo = std::min(lo, j.x());
    hi = std::max(hi, j.x());
  }
  return hi - lo;
}

}  // namespace

TEST_CASE("reconstruction errors") {
  const auto gt = test::random_motion(30, 1);
  const auto zero = recon_errors(gt, gt, skel());
  CHECK(zero.mpjpe_mm[0] == 0.0);
  CHECK(zero.rde_mm == 0.0);

  auto shifted = gt;
  for (auto& r : shifted.person[0].root_position) r += Eigen::Vector3d(0.01, 0, 0);
  const auto e = recon_errors(gt, shifted, skel());
  CHECK(e.mpjpe_mm[0] == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(e.mpjpe_mm[1] == 0.0);
  CHECK(e.mpjve_mm[0] == doctest::Approx(0.0).scale(1.0));

  auto both = gt;
  for (auto& p : both.person)
    for (auto& r : p.root_position) r += Eigen::Vector3d(0.3, -0.1, 0.2);
  CHECK(recon_errors(gt, both, skel()).rde_mm == doctest::Approx(0.0).scale(1.0));

  // A rigid transform applied to both sides leaves every error unchanged.
  const auto rec = test::random_motion(30, 2);
  auto move = [](GlobalDuetMotion m) {
    const Eigen::Matrix3d r = rot_y(0.7);
    const Eigen::Vector3d t(1.0, 0.0, -2.0);
    for (auto& p : m.person) {
      for (size_t i = 0; i < p.root_position.size(); ++i) {
        p.root_position[i] = r * p.root_position[i] + t;
        p.root_orientation[i] = r * p.root_orientation[i];
      }
    }
    return m;
  };
  const auto e1 = recon_errors(gt, rec, skel());
  const auto e2 = recon_errors(move(gt), move(rec), skel());
  CHECK(e1.mpjpe_mm[0] == doctest::Approx(e2.mpjpe_mm[0]).epsilon(1e-9));
  CHECK(e1.mpjve_mm[1] == doctest::Approx(e2.mpjve_mm[1]).epsilon(1e-9));
  CHECK(e1.rde_mm == doctest::Approx(e2.rde_mm).epsilon(1e-9));
}

TEST_CASE("Fréchet distance hand cases") {
  auto g1 = [](double mu, double var) {
    return GaussianMoments{Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, var)};
  };
  CHECK(std::abs(frechet_distance(g1(0, 1), g1(1, 1)) - 1.0) < 1e-9);
  CHECK(std::abs(frechet_distance(g1(0, 1), g1(0, 4)) - 1.0) < 1e-9);
  CHECK(std::abs(frechet_distance(g1(2, 9), g1(-1, 1)) - (9.0 + 4.0)) < 1e-9);
}

TEST_CASE("Fréchet distance properties on random PSD inputs") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = 1 + static_cast<int>(rng.below(8));
    auto sample = [&](int n) {
      Eigen::MatrixXd x(n, d);
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) x(i, k) = rng.normal() * (1 + k);
      return fit_gaussian(x);
    };
    const auto a = sample(30), b = sample(4);  // b is rank deficient when d > 3
    CHECK(frechet_distance(a, a) < 1e-6);
    CHECK(frechet_distance(a, b) >= 0.0);
    CHECK(frechet_distance(a, b) == doctest::Approx(frechet_distance(b, a)).epsilon(1e-6));
    CHECK((a.covariance - a.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("distribution scores") {
  Rng rng(6);
  ClipLatents x{Eigen::MatrixXd(10, 4), Eigen::MatrixXd(10, 4)};
  for (int i = 0; i < 10; ++i)
    for (int k = 0; k < 4; ++k) {
      x.person_a(i, k) = rng.normal();
      x.person_b(i, k) = rng.normal();
    }
  const auto s = distribution_scores(x, x);
  CHECK(s.fid < 1e-6);
  CHECK(s.pfid < 1e-6);
  ClipLatents same{Eigen::MatrixXd::Ones(5, 4), Eigen::MatrixXd::Ones(5, 4)};
  CHECK(distribution_scores(same, x).div == 0.0);
  CHECK(mean_pairwise_distance((Eigen::MatrixXd(3, 1) << 0, 1, 3).finished()) == doctest::Approx(2.0));
  CHECK_THROWS_AS(fit_gaussian(Eigen::MatrixXd(1, 3)), Error);
}

TEST_CASE("contact frequency against a brute-force oracle") {
  const double w = skeleton_width();
  const int n = 10;
  std::vector<Eigen::Vector3d> a(n, Eigen::Vector3d(0, 1, 0)), near(n), far(n);
  for (int i = 0; i < n; ++i) {
    near[i] = Eigen::Vector3d(w + 0.30, 1, 0);
    far[i] = Eigen::Vector3d(w + 0.50, 1, 0);
  }
  CHECK(contact_frequency(rigid_motion(a, near), skel()) == doctest::Approx(100.0));
  CHECK(contact_frequency(rigid_motion(a, far), skel()) == doctest::Approx(0.0));

  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto m = test::random_motion(40, 100 + seed);
    const auto pa = person_positions(m.person[0], skel());
    const auto pb = person_positions(m.person[1], skel());
    int hits = 0;
    for (int i = 0; i < m.frames(); ++i) hits += min_gap(pa[i], pb[i]) < 0.40;
    CHECK(contact_frequency(m, skel()) == 100.0 * hits / m.frames());
  }
}

TEST_CASE("foot skate") {
  const int n = 20;
  std::array<Eigen::Matrix3d, kLocalJointCount> local;
  local.fill(Eigen::Matrix3d::Identity());
  const auto rest = forward_kinematics(local, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), skel());
  double lowest = 1e9;
  for (int j : kFootJoints) lowest = std::min(lowest, rest[j].y());
  const double h = 0.02 - lowest;  // lowest foot joint 2 cm above ground
  int below = 0;
  for (int j : kFootJoints) below += rest[j].y() + h < 0.08;

  std::vector<Eigen::Vector3d> still(n, Eigen::Vector3d(0, h, 0)), slide(n), air(n), far(n, Eigen::Vector3d(5, h, 0));
  for (int i = 0; i < n; ++i) {
    slide[i] = Eigen::Vector3d(0.5 * i / kFps, h, 0);
    air[i] = Eigen::Vector3d(2.0 * i / kFps, h + 0.5, 0);
  }
  CHECK(foot_skate(rigid_motion(still, far), skel()) == 0.0);
  // Only A slides; the score averages the two persons.
  const double expected = 0.5 * 0.5 * below / 4.0;
  CHECK(foot_skate(rigid_motion(slide, far), skel()) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(foot_skate(rigid_motion(air, far), skel()) == 0.0);
}

TEST_CASE("beat alignment") {
  // Sliding with speed 1 - cos(2 pi t / 15 frames): zero speed every 15 frames.
  const int n = 120, period = 15;
  std::vector<Eigen::Vector3d> a(n), b(n);
  for (int i = 0; i < n; ++i) {
    const double x = i - period / (2 * std::numbers::pi) * std::sin(2 * std::numbers::pi * i / period);
    a[i] = Eigen::Vector3d(0.02 * x, 1, 0);
    b[i] = Eigen::Vector3d(0.02 * x, 1, 3);
  }
  const auto m = rigid_motion(a, b);
  std::vector<double> beats;
  for (int k = 0; k * period < n; ++k) beats.push_back(k * period / kFps);
  const auto mb = motion_beats(person_positions(m.person[0], skel()), kFps);
  REQUIRE(!mb.empty());
  CHECK(std::abs(beat_alignment(m, skel(), beats) - 1.0) < 1e-9);

  // One motion beat a sigma away from the only music beat.
  std::vector<double> shifted;
  for (double t : mb) shifted.push_back(t + 0.1);
  const double bas = beat_alignment(m, skel(), shifted);
  CHECK(bas == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
  CHECK_THROWS_WITH_AS(beat_alignment(m, skel(), {}), "no-beats", Error);

  const auto still = rigid_motion(std::vector<Eigen::Vector3d>(n, Eigen::Vector3d(0, 1, 0)),
                                  std::vector<Eigen::Vector3d>(n, Eigen::Vector3d(0, 1, 3)));
  CHECK(beat_alignment(still, skel(), beats) == 0.0);
}

TEST_CASE("beat alignment stays in [0, 1] on random motion") {
  for (uint64_t s = 0; s < 5; ++s) {
    const auto m = test::random_motion(90, 200 + s);
    const double v = beat_alignment(m, skel(), {0.3, 1.1, 2.0});
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
