#pragma once

#include <span>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/duet_repr.hpp"
#include "duet/metrics.hpp"

namespace duet::nn {

// Per-person channels fed to the extractor: the person block minus its root
// translation, which means different things for A and B.
inline constexpr int kExtractorInput = layout::kPersonWidth - 3;

struct ExtractorConfig {
  int latent = 64;
  int width = 128;
  int downsample = 8;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExtractorConfig& c);
void from_json(const nlohmann::json& j, ExtractorConfig& c);

// Temporal conv autoencoder shared by both persons. A clip's latent is the
// time average of the bottleneck map.
struct ExtractorImpl : torch::nn::Module {
  explicit ExtractorImpl(const ExtractorConfig& cfg);

  ExtractorConfig cfg;
  torch::nn::Sequential encoder{nullptr};
  torch::nn::Sequential decoder{nullptr};
  torch::Tensor mean, std;     // [265]
  torch::Tensor final_loss;    // scalar f32, training-set loss when saved

  void set_stats(const FeatureStats& motion);
  // Raw clips [B, N, 536] -> normalized per-person inputs [2B, N, 265] (A rows first).
  torch::Tensor person_inputs(const torch::Tensor& raw) const;
  torch::Tensor encode(const torch::Tensor& inputs);  // -> [2B, latent, N / downsample]
  torch::Tensor reconstruction_loss(const torch::Tensor& raw);
};
TORCH_MODULE(Extractor);

// Throws Error("shape-mismatch") for clips whose length does not divide by the stride.
ClipLatents extract_latents(Extractor& model, std::span<const DuetClip> raw_clips);

void save_extractor(const Extractor& model, const nlohmann::json& extra, Archive& out);
Extractor load_extractor(const Archive& in);

}  // namespace duet::nn
