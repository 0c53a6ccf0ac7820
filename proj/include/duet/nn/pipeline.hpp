#pragma once

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "duet/metrics.hpp"
#include "duet/music.hpp"
#include "duet/nn/extractor.hpp"
#include "duet/nn/masked.hpp"
#include "duet/nn/refiner.hpp"
#include "duet/nn/vqvae.hpp"

namespace duet::nn {

struct Models {
  HierVq vq{nullptr};
  TokenTransformer top{nullptr};
  TokenTransformer bot{nullptr};
  Refiner refiner{nullptr};  // optional
  FeatureStats motion;
  FeatureStats music;
};

struct Generated {
  DuetClip clip;       // raw, refined when a refiner is present
  DuetClip unrefined;  // raw decoder output
  std::vector<int64_t> top;
  std::vector<int64_t> bot;
};

// Raw music rows -> normalized [1, N, 92].
torch::Tensor music_tensor(const MusicFeatures& music, const FeatureStats& stats);

// Throws Error("bad-length") unless `frames` divides by eta_top and matches the music rows.
Generated generate(Models& models, const MusicFeatures& music, int frames, const GenConfig& cfg);

// VQ round trip of a raw clip.
DuetClip reconstruct(HierVq& vq, const DuetClip& raw, const MusicFeatures& music, const FeatureStats& motion_stats,
                     const FeatureStats& music_stats);

struct EvalClip {
  DuetClip clip;                            // raw
  std::optional<std::vector<double>> beats;  // music beats in seconds
};

// FID/PFID/Div against the reference set, plus foot skate, contact frequency
// and beat alignment of the generated set. Reconstruction errors are added
// when `paired` (same count, same order).
nlohmann::json evaluate_sets(std::span<const EvalClip> gen, std::span<const EvalClip> ref, Extractor& extractor,
                             const Skeleton& skel, bool paired);

// Viewer-friendly world joint positions: {"fps", "frames", "persons": [[[x,y,z] x 22] x N] x 2}.
nlohmann::json motion_export(const DuetClip& raw, const Skeleton& skel);

}  // namespace duet::nn
