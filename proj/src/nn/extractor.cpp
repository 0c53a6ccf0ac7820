#include "duet/nn/extractor.hpp"

#include <bit>

#include "duet/error.hpp"
#include "duet/nn/checkpoint.hpp"

namespace duet::nn {

namespace {

torch::Tensor person_block(const torch::Tensor& x, int p) {
  return x.narrow(-1, layout::person_base(p) + 3, kExtractorInput);
}

}  // namespace

void ExtractorConfig::validate() const {
  if (latent < 1 || width < 1 || downsample < 1 || !std::has_single_bit(static_cast<unsigned>(downsample)))
    throw Error("bad-config", "extractor sizes");
}

void to_json(nlohmann::json& j, const ExtractorConfig& c) {
  j = {{"latent", c.latent}, {"width", c.width}, {"downsample", c.downsample}};
}

void from_json(const nlohmann::json& j, ExtractorConfig& c) {
  ExtractorConfig d;
  c.latent = j.value("latent", d.latent);
  c.width = j.value("width", d.width);
  c.downsample = j.value("downsample", d.downsample);
  c.validate();
}

ExtractorImpl::ExtractorImpl(const ExtractorConfig& c) : cfg(c) {
  cfg.validate();
  const int w = cfg.width;
  torch::nn::Sequential enc, dec;
  enc->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(kExtractorInput, w, 3).padding(1)));
  enc->push_back(torch::nn::ReLU());
  for (int s = 1; s < cfg.downsample; s *= 2) {
    enc->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(w, w, 4).stride(2).padding(1)));
    enc->push_back(torch::nn::ReLU());
  }
  enc->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(w, cfg.latent, 3).padding(1)));
  dec->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(cfg.latent, w, 3).padding(1)));
  dec->push_back(torch::nn::ReLU());
  for (int s = 1; s < cfg.downsample; s *= 2) {
    dec->push_back(torch::nn::Upsample(torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0}).mode(torch::kNearest)));
    dec->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(w, w, 3).padding(1)));
    dec->push_back(torch::nn::ReLU());
  }
  dec->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(w, kExtractorInput, 3).padding(1)));
  encoder = register_module("encoder", enc);
  decoder = register_module("decoder", dec);
  mean = register_buffer("mean", torch::zeros({kExtractorInput}));
  std = register_buffer("std", torch::ones({kExtractorInput}));
  final_loss = register_buffer("final_loss", torch::full({}, std::numeric_limits<float>::infinity()));
}

void ExtractorImpl::set_stats(const FeatureStats& motion) {
  // Both persons share one normalization: pool their channel moments.
  const auto m = to_tensor(motion.mean), s = to_tensor(motion.std);
  const auto ma = person_block(m, 0), mb = person_block(m, 1);
  const auto va = person_block(s, 0).square() + ma.square(), vb = person_block(s, 1).square() + mb.square();
  const auto pooled = 0.5 * (ma + mb);
  mean.copy_(pooled);
  std.copy_((0.5 * (va + vb) - pooled.square()).clamp_min(0).sqrt().clamp_min(FeatureStats::kStdFloor));
}

torch::Tensor ExtractorImpl::person_inputs(const torch::Tensor& raw) const {
  if (raw.dim() != 3 || raw.size(2) != layout::kWidth) throw Error("shape-mismatch", "expected [B, N, 536]");
  return (torch::cat({person_block(raw, 0), person_block(raw, 1)}, 0) - mean) / std;
}

torch::Tensor ExtractorImpl::encode(const torch::Tensor& inputs) {
  if (inputs.size(1) % cfg.downsample != 0) throw Error("shape-mismatch", "clip length must divide by the stride");
  return encoder->forward(inputs.transpose(1, 2));
}

torch::Tensor ExtractorImpl::reconstruction_loss(const torch::Tensor& raw) {
  const auto x = person_inputs(raw);
  const auto rec = decoder->forward(encode(x)).transpose(1, 2);
  return torch::mse_loss(rec, x);
}

ClipLatents extract_latents(Extractor& model, std::span<const DuetClip> clips) {
  torch::NoGradGuard guard;
  model->eval();
  const int d = model->cfg.latent;
  ClipLatents out{Eigen::MatrixXd(clips.size(), d), Eigen::MatrixXd(clips.size(), d)};
  for (size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].normalized) throw Error("shape-mismatch", "extractor expects raw clips");
    const auto z = model->encode(model->person_inputs(to_tensor(clips[i].features).unsqueeze(0))).mean(2);
    const auto zd = z.to(torch::kDouble).contiguous();
    for (int k = 0; k < d; ++k) {
      out.person_a(i, k) = zd[0][k].item<double>();
      out.person_b(i, k) = zd[1][k].item<double>();
    }
  }
  return out;
}

void save_extractor(const Extractor& model, const nlohmann::json& extra, Archive& out) {
  out.format = kFormatExtractor;
  out.metadata["config"] = model->cfg;
  for (auto it = extra.begin(); it != extra.end(); ++it) out.metadata[it.key()] = it.value();
  save_module(*model, "model/", out);
}

Extractor load_extractor(const Archive& in) {
  if (in.format != kFormatExtractor) throw Error("unsupported-format", in.format);
  Extractor model(in.metadata.at("config").get<ExtractorConfig>());
  load_module(*model, "model/", in);
  model->eval();
  return model;
}

}  // namespace duet::nn
