#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/rng.hpp"

namespace duet::nn {

// gamma(tau) = cos(pi * tau / 2); exactly 0 at tau = 1. Throws Error("bad-tau").
double mask_ratio(double tau);
// ceil(gamma(tau) * n) with the endpoints pinned.
int64_t mask_count(double tau, int64_t n);

struct MaskedSeq {
  std::vector<int64_t> ids;   // values in [0, K], K = MASK
  std::vector<bool> flags;    // loss positions
};

// Selects mask_count(tau, L) positions uniformly; 80% become MASK, 10% a random
// id, 10% keep the original.
MaskedSeq apply_training_mask(const std::vector<int64_t>& ids, int64_t codebook_size, Rng& rng, double tau);

struct MaskedConfig {
  int codebook_size = 512;
  int width = 256;
  int layers = 4;
  int heads = 4;
  int ff_width = 512;
  int music_width = 128;
  double dropout = 0.1;
  int downsample = 8;      // music frames per token
  int top_upsample = 0;    // bottom model: bottom tokens per top token; 0 = top model
  int max_len = 512;

  void validate() const;
  bool conditioned_on_top() const { return top_upsample > 0; }
};

void to_json(nlohmann::json& j, const MaskedConfig& c);
void from_json(const nlohmann::json& j, MaskedConfig& c);

struct GenConfig {
  int top_iters = 10;
  int bot_iters = 10;
  double guidance_scale = 4.0;
  double temperature = 1.0;
  double gumbel_scale = 1.0;  // annealed linearly to 0 over the iterations
  double cond_dropout = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GenConfig& c);
void from_json(const nlohmann::json& j, GenConfig& c);

// Bidirectional token transformer conditioned on music (and, for the bottom
// level, on the full top-token sequence).
struct TokenTransformerImpl : torch::nn::Module {
  explicit TokenTransformerImpl(const MaskedConfig& cfg);

  MaskedConfig cfg;
  torch::nn::Sequential music_enc{nullptr};
  torch::nn::Embedding tokens{nullptr};
  torch::nn::Embedding top_tokens{nullptr};
  torch::nn::Embedding positions{nullptr};
  torch::nn::Linear in_proj{nullptr};
  torch::nn::TransformerEncoder encoder{nullptr};
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear head{nullptr};
  torch::Tensor null_music;  // [music_width]

  // Music features [B, N, 92] -> [B, N / downsample, music_width].
  torch::Tensor encode_music(const torch::Tensor& music);
  // ids [B, L] (MASK allowed); drop_music [B] bool replaces the music embedding
  // with the learned null embedding. Returns logits [B, L, K].
  torch::Tensor forward(const torch::Tensor& ids, const torch::Tensor& music_emb, const torch::Tensor& top_ids,
                        const torch::Tensor& drop_music);
};
TORCH_MODULE(TokenTransformer);

// Mean NLL of targets over flagged positions. logits [B, L, K], targets [B, L],
// flags [B, L] bool. Throws Error("empty-mask").
torch::Tensor masked_nll(const torch::Tensor& logits, const torch::Tensor& targets, const torch::Tensor& flags);

struct MaskedBatch {
  torch::Tensor ids;      // corrupted
  torch::Tensor flags;    // bool
  torch::Tensor targets;  // clean
};

// Corrupts each row with its own tau drawn uniformly from [0, 1).
MaskedBatch corrupt_batch(const torch::Tensor& targets, int64_t codebook_size, Rng& rng);

// Losses on already-corrupted batches; music is raw [B, N, 92] (normalized).
torch::Tensor top_loss(TokenTransformer& model, const MaskedBatch& batch, const torch::Tensor& music,
                       const torch::Tensor& drop_music);
// Throws Error("incomplete-top") when top_ids holds MASK.
torch::Tensor bottom_loss(TokenTransformer& model, const MaskedBatch& batch, const torch::Tensor& music,
                          const torch::Tensor& top_ids, const torch::Tensor& drop_music);

torch::Tensor cfg_combine(const torch::Tensor& cond, const torch::Tensor& uncond, double scale);

struct GenerationTrace {
  std::vector<int64_t> remask_counts;  // per iteration
  std::vector<std::vector<int64_t>> states;  // ids after each iteration
};

// Iterative decoding for one sequence of length n. music [1, N, 92].
std::vector<int64_t> generate_tokens(TokenTransformer& model, const torch::Tensor& music, int64_t n,
                                     const torch::Tensor& top_ids, int iters, const GenConfig& cfg, Rng& rng,
                                     GenerationTrace* trace = nullptr);
std::vector<int64_t> generate_top(TokenTransformer& model, const torch::Tensor& music, int64_t n,
                                  const GenConfig& cfg, GenerationTrace* trace = nullptr);
// Throws Error("incomplete-top").
std::vector<int64_t> generate_bottom(TokenTransformer& model, const torch::Tensor& music,
                                     const std::vector<int64_t>& top, const GenConfig& cfg,
                                     GenerationTrace* trace = nullptr);

void save_transformer(const TokenTransformer& model, const std::string& prefix, Archive& out);
TokenTransformer load_transformer(const Archive& in, const std::string& prefix);

}  // namespace duet::nn
