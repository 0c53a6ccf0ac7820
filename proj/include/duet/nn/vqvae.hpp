#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/duet_repr.hpp"
#include "duet/rng.hpp"
#include "duet/skeleton.hpp"

namespace duet::nn {

struct VqConfig {
  int eta_bot = 4;
  int eta_top = 8;
  int codebook_size = 512;
  int code_dim_top = 128;
  int code_dim_bot = 128;
  int width = 128;
  int res_units = 2;
  int music_width = 64;  // z_m channels; 0 disables conditioning
  double beta_top = 0.02;
  double beta_bot = 0.02;
  double lambda_r = 1.0;
  double lambda_v = 0.5;
  double lambda_com = 1.0;
  double lambda_fk = 1.0;
  double lambda_rel = 1.0;
  double end_effector_weight = 2.0;
  double ema_decay = 0.99;
  double reset_fraction = 0.01;  // stale when usage EMA < fraction * B*L/K
  int reset_patience = 100;
  bool single_level = false;

  // Throws Error("bad-config").
  void validate() const;
  bool music_conditioned() const { return music_width > 0; }
};

void to_json(nlohmann::json& j, const VqConfig& c);
void from_json(const nlohmann::json& j, VqConfig& c);

struct Quantized {
  torch::Tensor codes;  // [L, D]
  torch::Tensor ids;    // [L] int64
};

// Nearest codebook row per latent row; ties go to the smallest index.
Quantized quantize_nearest(const torch::Tensor& codebook, const torch::Tensor& latents);

// EMA codebook with dead-code reset.
struct CodebookImpl : torch::nn::Module {
  CodebookImpl(int size, int dim);

  torch::Tensor codes;        // [K, D]
  torch::Tensor ema_counts;   // [K]
  torch::Tensor ema_sums;     // [K, D]
  torch::Tensor stale_steps;  // [K] int64
  torch::Tensor initialized;  // scalar int64

  int size() const { return static_cast<int>(codes.size(0)); }
  int dim() const { return static_cast<int>(codes.size(1)); }

  Quantized quantize(const torch::Tensor& latents) const { return quantize_nearest(codes, latents); }
  // Decay, accumulate assignments, refresh codes, then reset codes that stayed
  // under the usage threshold for `patience` steps with random batch latents.
  // Returns the number of codes reset.
  int update(const torch::Tensor& latents, const torch::Tensor& ids, double decay, double reset_fraction,
             int patience, Rng& rng);
  // First batch seeds the codebook. Starting counts at the stale threshold lets
  // codes the encoder never reaches get reset after `patience` steps.
  void init_from(const torch::Tensor& latents, Rng& rng, double initial_count);
};
TORCH_MODULE(Codebook);

struct VqOutput {
  torch::Tensor recon;          // [B, N, 536] normalized
  torch::Tensor z_top_pre;      // [B, Lt, Dt] pre-quantization
  torch::Tensor z_top;          // quantized
  torch::Tensor z_bot_pre;      // [B, Lb, Db]
  torch::Tensor z_bot;
  torch::Tensor ids_top;        // [B, Lt]
  torch::Tensor ids_bot;        // [B, Lb]
};

struct HierVqImpl : torch::nn::Module {
  explicit HierVqImpl(const VqConfig& cfg);

  VqConfig cfg;
  torch::nn::Sequential enc_bot{nullptr};
  torch::nn::Sequential enc_top{nullptr};
  torch::nn::Sequential dec_top{nullptr};
  torch::nn::Conv1d pre_bot{nullptr};
  torch::nn::Sequential music_enc{nullptr};
  torch::nn::Sequential decoder{nullptr};
  Codebook top{nullptr};
  Codebook bot{nullptr};
  // Plain autoencoding during the codebook warm-up.
  bool bypass_quantizer = false;

  // x: [B, N, 536], music: [B, N, 92] (both normalized). N must divide by eta_top.
  VqOutput forward(const torch::Tensor& x, const torch::Tensor& music);
  torch::Tensor encode_music(const torch::Tensor& music);  // [B, Lb, music_width]
  // z_top may be undefined in the single-level model; z_m may be undefined when
  // unconditioned.
  torch::Tensor decode(const torch::Tensor& z_top, const torch::Tensor& z_bot, const torch::Tensor& z_m);
  // Tokens only; no straight-through bookkeeping.
  std::pair<torch::Tensor, torch::Tensor> tokenize(const torch::Tensor& x, const torch::Tensor& music);
  torch::Tensor detokenize(const torch::Tensor& ids_top, const torch::Tensor& ids_bot, const torch::Tensor& music);

  int64_t parameter_count() const;
};
TORCH_MODULE(HierVq);

// Width for a single-level model whose parameter count is closest to the
// hierarchical model described by `cfg`.
int matched_single_level_width(const VqConfig& cfg);

struct VqLossTerms {
  torch::Tensor total;
  torch::Tensor recon;
  torch::Tensor velocity;
  torch::Tensor commit;
  torch::Tensor fk;
  torch::Tensor rel;
};

struct MotionScale {
  torch::Tensor mean;  // [536]
  torch::Tensor std;
  static MotionScale from(const FeatureStats& s);
  torch::Tensor denormalize(const torch::Tensor& x) const { return x * std + mean; }
};

// Commitment: sum_i beta_i * mean((z_pre - sg(z_q))^2).
torch::Tensor commitment_loss(const torch::Tensor& z_pre, const torch::Tensor& z_q, double beta);
// Mean per-joint Euclidean error, summed over the two persons. Positions [..., 22, 3].
torch::Tensor fk_loss(const torch::Tensor& gt_a, const torch::Tensor& gt_b, const torch::Tensor& pred_a,
                      const torch::Tensor& pred_b);
// (1/J) sum_j w_j sum_k exp(-d_jk) |d_jk - d^_jk| averaged over leading dims;
// d from the ground truth, d^ from the prediction.
torch::Tensor relative_loss(const torch::Tensor& gt_a, const torch::Tensor& gt_b, const torch::Tensor& pred_a,
                            const torch::Tensor& pred_b, const torch::Tensor& joint_weights);
torch::Tensor joint_weights(double end_effector_weight, torch::ScalarType dtype = torch::kFloat);

VqLossTerms vq_losses(const VqConfig& cfg, const torch::Tensor& x, const VqOutput& out, const MotionScale& scale,
                      const Skeleton& skel);

void save_vq(const HierVq& model, const FeatureStats& motion, const FeatureStats& music,
             const nlohmann::json& extra, Archive& out);
HierVq load_vq(const Archive& in, FeatureStats* motion = nullptr, FeatureStats* music = nullptr);

}  // namespace duet::nn
