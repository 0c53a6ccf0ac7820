#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/dataset.hpp"
#include "duet/nn/extractor.hpp"
#include "duet/nn/masked.hpp"
#include "duet/nn/refiner.hpp"
#include "duet/nn/vqvae.hpp"

namespace duet::nn {

struct OptimConfig {
  double lr = 2e-4;
  int batch_size = 16;
  int epochs = 60;
  int decay_every = 0;  // epochs between LR halvings; 0 keeps the rate fixed
  double decay = 0.5;
  double grad_clip = 1.0;  // 0 disables
  int crop_frames = 64;    // random training crops; 0 uses whole windows
  int warmup_steps = 200;  // VQ only: autoencode first, then seed codebooks from live latents
};

void to_json(nlohmann::json& j, const OptimConfig& c);
void from_json(const nlohmann::json& j, OptimConfig& c);

// Normalized, batched views of a dataset split.
struct TensorSet {
  torch::Tensor motion;  // [M, N, 536]
  torch::Tensor music;   // [M, N, 92]
  int64_t size() const { return motion.defined() ? motion.size(0) : 0; }
};

TensorSet make_tensor_set(std::span<const DatasetItem> items, const FeatureStats& motion, const FeatureStats& music);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  nlohmann::json terms = nlohmann::json::object();
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Seeded shuffles; the returned log holds per-epoch losses.
struct Batcher {
  Batcher(int64_t count, int batch_size, uint64_t seed);
  std::vector<std::vector<int64_t>> epoch();
  // Same random crop for every sequence of the batch keeps things vectorized.
  int64_t crop_start(int64_t frames, int crop, int multiple);
  int64_t count;
  int batch_size;
  Rng rng;
};

// Crop of normalized windows whose first frame gets a zero horizontal root
// step, the way every canonical window starts.
torch::Tensor anchored_crop(const torch::Tensor& x, int64_t start, int64_t length, const MotionScale& scale);

nlohmann::json train_vq(HierVq& model, const TensorSet& data, const FeatureStats& motion_stats, const Skeleton& skel,
                        const OptimConfig& opt, uint64_t seed, const ProgressFn& progress = {});

// Fraction of codes assigned at least once over `data`.
double codebook_utilization(HierVq& model, const TensorSet& data, bool top_level);

struct TokenSet {
  torch::Tensor top;  // [M, N / eta_top]; undefined for a single-level model
  torch::Tensor bot;  // [M, N / eta_bot]
};

TokenSet tokenize_set(HierVq& model, const TensorSet& data);

// Top model when `top_ids` is undefined, bottom model otherwise. Each row gets
// its own mask ratio; the music is swapped for the null embedding with
// probability `cond_dropout`.
nlohmann::json train_masked(TokenTransformer& model, const torch::Tensor& ids, const torch::Tensor& music,
                            const torch::Tensor& top_ids, const OptimConfig& opt, double cond_dropout, uint64_t seed,
                            const ProgressFn& progress = {});

// Mean held-out NLL over every position, each row masked at its own ratio.
double masked_eval_loss(TokenTransformer& model, const torch::Tensor& ids, const torch::Tensor& music,
                        const torch::Tensor& top_ids, uint64_t seed);

// Trains on raw windows; the per-batch loss is refine_loss / (B * N).
nlohmann::json train_refiner(Refiner& model, const TensorSet& data, const FeatureStats& motion_stats,
                             const OptimConfig& opt, uint64_t seed, const ProgressFn& progress = {});

// Records the final training-set loss in the model.
nlohmann::json train_extractor(Extractor& model, const TensorSet& data, const FeatureStats& motion_stats,
                               const OptimConfig& opt, uint64_t seed, const ProgressFn& progress = {});
double extractor_loss(Extractor& model, const TensorSet& data, const FeatureStats& motion_stats);

}  // namespace duet::nn
