#include "duet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>

#include "duet/error.hpp"

namespace duet {

ReconErrors recon_errors(const GlobalDuetMotion& gt, const GlobalDuetMotion& rec, const Skeleton& skel) {
  if (gt.frames() != rec.frames()) throw Error("length-mismatch", "gt and reconstruction frame counts differ");
  const int n = gt.frames();
  ReconErrors out;
  std::array<PersonPositions, 2> pg, pr;
  for (int p = 0; p < 2; ++p) {
    pg[p] = person_positions(gt.person[p], skel);
    pr[p] = person_positions(rec.person[p], skel);
    double pos = 0.0, vel = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < kJointCount; ++j) {
        pos += (pg[p][i][j] - pr[p][i][j]).norm();
        if (i > 0) {
          vel += ((pg[p][i][j] - pg[p][i - 1][j]) - (pr[p][i][j] - pr[p][i - 1][j])).norm();
        }
      }
    }
    out.mpjpe_mm[p] = 1000.0 * pos / (n * kJointCount);
    out.mpjve_mm[p] = n > 1 ? 1000.0 * vel / ((n - 1) * kJointCount) : 0.0;
  }
  double rde = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dg = (gt.person[0].root_position[i] - gt.person[1].root_position[i]).norm();
    const double dr = (rec.person[0].root_position[i] - rec.person[1].root_position[i]).norm();
    rde += std::abs(dg - dr);
  }
  out.rde_mm = 1000.0 * rde / n;
  return out;
}

GaussianMoments fit_gaussian(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw Error("too-few-samples", "need at least 2 samples");
  GaussianMoments g;
  g.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - g.mean.transpose();
  g.covariance = centered.transpose() * centered / static_cast<double>(samples.rows() - 1);
  return g;
}

namespace {

constexpr double kPsdTol = 1e-8;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -kPsdTol * std::max(1.0, ev.cwiseAbs().maxCoeff())) {
    throw Error("not-psd", "covariance has a negative eigenvalue");
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
  const auto d = a.mean.size();
  if (b.mean.size() != d || a.covariance.rows() != d || a.covariance.cols() != d || b.covariance.rows() != d ||
      b.covariance.cols() != d) {
    throw Error("dimension-mismatch");
  }
  // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2), the inner matrix being symmetric PSD.
  const Eigen::MatrixXd sa = psd_sqrt(a.covariance);
  const Eigen::MatrixXd inner = sa * (0.5 * (b.covariance + b.covariance.transpose())) * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  double cross = 0.0;
  for (int k = 0; k < es.eigenvalues().size(); ++k) cross += std::sqrt(std::max(0.0, es.eigenvalues()(k)));
  const double value =
      (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
  return std::max(0.0, value);
}

Eigen::MatrixXd ClipLatents::paired() const {
  Eigen::MatrixXd out(person_a.rows(), person_a.cols() + person_b.cols());
  out << person_a, person_b;
  return out;
}

double mean_pairwise_distance(const Eigen::MatrixXd& rows) {
  const auto n = rows.rows();
  if (n < 2) throw Error("too-few-samples", "need at least 2 clips");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) acc += (rows.row(i) - rows.row(j)).norm();
  }
  return acc / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1));
}

DistributionScores distribution_scores(const ClipLatents& gen, const ClipLatents& gt) {
  if (gen.person_a.rows() < 2 || gt.person_a.rows() < 2) throw Error("too-few-clips", "need at least 2 clips per set");
  DistributionScores s;
  s.fid = 0.5 * (frechet_distance(fit_gaussian(gen.person_a), fit_gaussian(gt.person_a)) +
                 frechet_distance(fit_gaussian(gen.person_b), fit_gaussian(gt.person_b)));
  s.pfid = frechet_distance(fit_gaussian(gen.paired()), fit_gaussian(gt.paired()));
  s.div = 0.5 * (mean_pairwise_distance(gen.person_a) + mean_pairwise_distance(gen.person_b));
  return s;
}

double contact_frequency(const GlobalDuetMotion& motion, const Skeleton& skel, double threshold_m) {
  const int n = motion.frames();
  if (n == 0) return 0.0;
  const PersonPositions a = person_positions(motion.person[0], skel);
  const PersonPositions b = person_positions(motion.person[1], skel);
  const double t2 = threshold_m * threshold_m;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    bool contact = false;
    for (int j = 0; j < kJointCount && !contact; ++j) {
      for (int k = 0; k < kJointCount && !contact; ++k) contact = (a[i][j] - b[i][k]).squaredNorm() < t2;
    }
    hits += contact;
  }
  return 100.0 * hits / n;
}

double foot_skate(const GlobalDuetMotion& motion, const Skeleton& skel, const FootSkateOptions& opts) {
  const int n = motion.frames();
  if (n < 2) return 0.0;
  double total = 0.0;
  for (int p = 0; p < 2; ++p) {
    const PersonPositions pos = person_positions(motion.person[p], skel);
    double acc = 0.0;
    for (int i = 1; i < n; ++i) {
      for (int joint : kFootJoints) {
        if (pos[i][joint].y() >= opts.height_gate_m) continue;
        const Eigen::Vector3d d = pos[i][joint] - pos[i - 1][joint];
        acc += std::hypot(d.x(), d.z()) * motion.fps;
      }
    }
    total += acc / ((n - 1) * static_cast<double>(kFootJoints.size()));
  }
  return 0.5 * total;
}

std::vector<double> motion_beats(const PersonPositions& positions, double fps, int nms_radius) {
  const int n = static_cast<int>(positions.size());
  std::vector<double> beats;
  if (n < 2) return beats;
  std::vector<double> speed(n, 0.0);
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - 1), hi = std::min(n - 1, i + 1);
    double acc = 0.0;
    for (int j = 0; j < kJointCount; ++j) acc += (positions[hi][j] - positions[lo][j]).norm();
    speed[i] = acc / (kJointCount * (hi - lo)) * fps;
  }
  // End frames have a one-sided neighbourhood and are never beats.
  for (int i = 1; i + 1 < n; ++i) {
    const int lo = std::max(0, i - nms_radius), hi = std::min(n - 1, i + nms_radius);
    bool minimum = true;
    double window_max = speed[i];
    for (int j = lo; j <= hi && minimum; ++j) {
      if (j < i) minimum = speed[i] < speed[j];
      else if (j > i) minimum = speed[i] <= speed[j];
      window_max = std::max(window_max, speed[j]);
    }
    // Flat stretches carry no kinematic beat.
    if (minimum && speed[i] < window_max) beats.push_back(i / fps);
  }
  return beats;
}

double beat_alignment(const GlobalDuetMotion& motion, const Skeleton& skel, const std::vector<double>& music_beats,
                      const BeatAlignmentOptions& opts) {
  if (music_beats.empty()) throw Error("no-beats");
  double total = 0.0;
  for (int p = 0; p < 2; ++p) {
    const auto beats = motion_beats(person_positions(motion.person[p], skel), motion.fps, opts.nms_radius);
    if (beats.empty()) continue;
    double acc = 0.0;
    for (double tm : beats) {
      double best = std::numeric_limits<double>::infinity();
      for (double tb : music_beats) best = std::min(best, (tm - tb) * (tm - tb));
      acc += std::exp(-best / (2.0 * opts.sigma_s * opts.sigma_s));
    }
    total += acc / beats.size();
  }
  return 0.5 * total;
}

}  // namespace duet
