#pragma once

#include <array>
#include <vector>

#include <Eigen/Core>

#include "duet/duet_repr.hpp"
#include "duet/skeleton.hpp"

namespace duet {

struct ReconErrors {
  std::array<double, 2> mpjpe_mm{};  // per person
  std::array<double, 2> mpjve_mm{};  // mm per frame, per person
  double rde_mm = 0.0;               // inter-person root distance error

  double mpjpe_mean() const { return 0.5 * (mpjpe_mm[0] + mpjpe_mm[1]); }
};

ReconErrors recon_errors(const GlobalDuetMotion& gt, const GlobalDuetMotion& rec, const Skeleton& skel);

struct GaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

// Rows are samples; covariance uses the unbiased (n-1) estimator.
GaussianMoments fit_gaussian(const Eigen::MatrixXd& samples);

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);

// Per-clip latents from the motion feature extractor.
struct ClipLatents {
  Eigen::MatrixXd person_a;  // clips x d
  Eigen::MatrixXd person_b;  // clips x d
  Eigen::MatrixXd paired() const;
};

struct DistributionScores {
  double fid = 0.0;   // mean of the two per-person Fréchet distances
  double pfid = 0.0;  // Fréchet distance of paired latents
  double div = 0.0;   // mean pairwise latent distance in the generated set
};

DistributionScores distribution_scores(const ClipLatents& gen, const ClipLatents& gt);

// Mean pairwise Euclidean distance between rows.
double mean_pairwise_distance(const Eigen::MatrixXd& rows);

// Percentage of frames whose closest inter-person joint pair is nearer than the threshold.
double contact_frequency(const GlobalDuetMotion& motion, const Skeleton& skel, double threshold_m = 0.40);

struct FootSkateOptions {
  double height_gate_m = 0.08;
};

// Horizontal heel/toe speed (m/s) while the joint is below the height gate,
// averaged over frames, foot joints and persons.
double foot_skate(const GlobalDuetMotion& motion, const Skeleton& skel, const FootSkateOptions& opts = {});

struct BeatAlignmentOptions {
  double sigma_s = 0.1;
  int nms_radius = 5;
};

// Kinematic beats: local minima of mean joint speed (central differences).
std::vector<double> motion_beats(const PersonPositions& positions, double fps, int nms_radius = 5);

double beat_alignment(const GlobalDuetMotion& motion, const Skeleton& skel, const std::vector<double>& music_beats,
                      const BeatAlignmentOptions& opts = {});

}  // namespace duet
