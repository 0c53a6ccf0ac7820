#include "duet/nn/masked.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include "duet/error.hpp"
#include "duet/music.hpp"
#include "duet/nn/checkpoint.hpp"

namespace duet::nn {

double mask_ratio(double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error("bad-tau", "tau must lie in [0, 1]");
  if (tau == 1.0) return 0.0;
  return std::cos(std::numbers::pi * tau / 2.0);
}

int64_t mask_count(double tau, int64_t n) {
  // The small slack keeps rational cases such as cos(pi/3) * n from rounding up.
  return static_cast<int64_t>(std::ceil(mask_ratio(tau) * static_cast<double>(n) - 1e-9));
}

MaskedSeq apply_training_mask(const std::vector<int64_t>& ids, int64_t k, Rng& rng, double tau) {
  for (int64_t v : ids) {
    if (v < 0 || v >= k) throw Error("bad-token", "training ids must lie in [0, K)");
  }
  const int64_t n = static_cast<int64_t>(ids.size());
  const int64_t count = mask_count(tau, n);
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `count` entries are a uniform subset.
  for (int64_t i = 0; i < count; ++i) std::swap(order[i], order[i + static_cast<int64_t>(rng.below(n - i))]);
  MaskedSeq out{ids, std::vector<bool>(n, false)};
  for (int64_t i = 0; i < count; ++i) {
    const int64_t p = order[i];
    out.flags[p] = true;
    const double r = rng.uniform();
    if (r < 0.8) {
      out.ids[p] = k;
    } else if (r < 0.9) {
      out.ids[p] = static_cast<int64_t>(rng.below(k));
    }
  }
  return out;
}

void MaskedConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error("bad-config", m); };
  if (codebook_size < 2) bad("codebook_size");
  if (width < 1 || heads < 1 || width % heads != 0) bad("width must divide by heads");
  if (layers < 1 || ff_width < 1 || music_width < 1) bad("layer sizes");
  if (downsample < 1 || !std::has_single_bit(static_cast<unsigned>(downsample))) bad("downsample must be a power of two");
  if (top_upsample < 0) bad("top_upsample");
  if (!(dropout >= 0.0 && dropout < 1.0)) bad("dropout");
  if (max_len < 1) bad("max_len");
}

void to_json(nlohmann::json& j, const MaskedConfig& c) {
  j = {{"codebook_size", c.codebook_size}, {"width", c.width},     {"layers", c.layers},
       {"heads", c.heads},                 {"ff_width", c.ff_width}, {"music_width", c.music_width},
       {"dropout", c.dropout},             {"downsample", c.downsample}, {"top_upsample", c.top_upsample},
       {"max_len", c.max_len}};
}

void from_json(const nlohmann::json& j, MaskedConfig& c) {
  MaskedConfig d;
  c.codebook_size = j.value("codebook_size", d.codebook_size);
  c.width = j.value("width", d.width);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.ff_width = j.value("ff_width", d.ff_width);
  c.music_width = j.value("music_width", d.music_width);
  c.dropout = j.value("dropout", d.dropout);
  c.downsample = j.value("downsample", d.downsample);
  c.top_upsample = j.value("top_upsample", d.top_upsample);
  c.max_len = j.value("max_len", d.max_len);
}

void GenConfig::validate() const {
  if (top_iters < 1 || bot_iters < 1) throw Error("bad-config", "iterations must be >= 1");
  if (!(guidance_scale >= 0.0)) throw Error("bad-config", "guidance scale must be >= 0");
  if (!(temperature >= 0.0) || !(gumbel_scale >= 0.0)) throw Error("bad-config", "temperature/gumbel scale");
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw Error("bad-config", "cond_dropout");
}

void to_json(nlohmann::json& j, const GenConfig& c) {
  j = {{"top_iters", c.top_iters},     {"bot_iters", c.bot_iters},     {"guidance_scale", c.guidance_scale},
       {"temperature", c.temperature}, {"gumbel_scale", c.gumbel_scale}, {"cond_dropout", c.cond_dropout},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GenConfig& c) {
  GenConfig d;
  c.top_iters = j.value("top_iters", d.top_iters);
  c.bot_iters = j.value("bot_iters", d.bot_iters);
  c.guidance_scale = j.value("guidance_scale", d.guidance_scale);
  c.temperature = j.value("temperature", d.temperature);
  c.gumbel_scale = j.value("gumbel_scale", d.gumbel_scale);
  c.cond_dropout = j.value("cond_dropout", d.cond_dropout);
  c.seed = j.value("seed", d.seed);
}

TokenTransformerImpl::TokenTransformerImpl(const MaskedConfig& c) : cfg(c) {
  cfg.validate();
  const int m = cfg.music_width;
  torch::nn::Sequential me;
  me->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(kMusicWidth, m, 3).padding(1)));
  me->push_back(torch::nn::ReLU());
  for (int s = 1; s < cfg.downsample; s *= 2) {
    me->push_back(torch::nn::Conv1d(torch::nn::Conv1dOptions(m, m, 4).stride(2).padding(1)));
    me->push_back(torch::nn::ReLU());
  }
  music_enc = register_module("music_enc", me);
  tokens = register_module("tokens", torch::nn::Embedding(cfg.codebook_size + 1, cfg.width));
  int in = cfg.width + m;
  if (cfg.conditioned_on_top()) {
    top_tokens = register_module("top_tokens", torch::nn::Embedding(cfg.codebook_size, cfg.width));
    in += cfg.width;
  }
  in_proj = register_module("in_proj", torch::nn::Linear(in, cfg.width));
  positions = register_module("positions", torch::nn::Embedding(cfg.max_len, cfg.width));
  encoder = register_module(
      "encoder", torch::nn::TransformerEncoder(torch::nn::TransformerEncoderOptions(
                                                   torch::nn::TransformerEncoderLayerOptions(cfg.width, cfg.heads)
                                                       .dim_feedforward(cfg.ff_width)
                                                       .dropout(cfg.dropout),
                                                   cfg.layers)));
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.width})));
  head = register_module("head", torch::nn::Linear(cfg.width, cfg.codebook_size));
  null_music = register_parameter("null_music", torch::zeros({m}));
}

torch::Tensor TokenTransformerImpl::encode_music(const torch::Tensor& music) {
  if (music.dim() != 3 || music.size(2) != kMusicWidth) throw Error("shape-mismatch", "music must be [B, N, 92]");
  if (music.size(1) % cfg.downsample != 0) throw Error("bad-length", "music frames must divide by the token stride");
  return music_enc->forward(music.transpose(1, 2)).transpose(1, 2);
}

torch::Tensor TokenTransformerImpl::forward(const torch::Tensor& ids, const torch::Tensor& music_emb,
                                            const torch::Tensor& top_ids, const torch::Tensor& drop_music) {
  const int64_t b = ids.size(0), l = ids.size(1);
  if (l > cfg.max_len) throw Error("bad-length", "sequence longer than max_len");
  if (music_emb.size(0) != b || music_emb.size(1) != l) throw Error("misaligned-latents", "music embedding length");
  auto music = music_emb;
  if (drop_music.defined()) {
    const auto mask = drop_music.to(torch::kBool).view({b, 1, 1});
    music = torch::where(mask, null_music.view({1, 1, -1}).expand_as(music_emb), music_emb);
  }
  std::vector<torch::Tensor> parts{tokens(ids), music};
  if (cfg.conditioned_on_top()) {
    if (!top_ids.defined() || top_ids.size(1) * cfg.top_upsample != l)
      throw Error("misaligned-latents", "top tokens do not cover the bottom sequence");
    parts.push_back(top_tokens(top_ids).repeat_interleave(cfg.top_upsample, 1));
  }
  auto h = in_proj(torch::cat(parts, 2)) + positions(torch::arange(l, torch::kLong)).unsqueeze(0);
  h = encoder(h.transpose(0, 1)).transpose(0, 1);
  return head(norm(h));
}

torch::Tensor masked_nll(const torch::Tensor& logits, const torch::Tensor& targets, const torch::Tensor& flags) {
  const auto f = flags.to(torch::kBool);
  if (!f.any().item<bool>()) throw Error("empty-mask", "no flagged positions");
  const auto logp = torch::log_softmax(logits, -1);
  const auto picked = logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1);
  return -picked.masked_select(f).mean();
}

MaskedBatch corrupt_batch(const torch::Tensor& targets, int64_t k, Rng& rng) {
  const auto t = targets.to(torch::kLong).contiguous();
  const int64_t b = t.size(0), l = t.size(1);
  auto ids = torch::empty_like(t);
  auto flags = torch::zeros({b, l}, torch::kBool);
  for (int64_t r = 0; r < b; ++r) {
    const int64_t* row = t.data_ptr<int64_t>() + r * l;
    const auto m = apply_training_mask({row, row + l}, k, rng, rng.uniform());
    for (int64_t i = 0; i < l; ++i) {
      ids[r][i] = m.ids[i];
      flags[r][i] = static_cast<bool>(m.flags[i]);
    }
  }
  return {ids, flags, t};
}

torch::Tensor top_loss(TokenTransformer& model, const MaskedBatch& batch, const torch::Tensor& music,
                       const torch::Tensor& drop_music) {
  const auto logits = model->forward(batch.ids, model->encode_music(music), {}, drop_music);
  return masked_nll(logits, batch.targets, batch.flags);
}

torch::Tensor bottom_loss(TokenTransformer& model, const MaskedBatch& batch, const torch::Tensor& music,
                          const torch::Tensor& top_ids, const torch::Tensor& drop_music) {
  if (!top_ids.defined() || (top_ids >= model->cfg.codebook_size).any().item<bool>())
    throw Error("incomplete-top", "top tokens contain MASK");
  const auto logits = model->forward(batch.ids, model->encode_music(music), top_ids, drop_music);
  return masked_nll(logits, batch.targets, batch.flags);
}

torch::Tensor cfg_combine(const torch::Tensor& cond, const torch::Tensor& uncond, double scale) {
  if (cond.sizes() != uncond.sizes()) throw Error("shape-mismatch", "guidance logits differ in shape");
  return uncond + scale * (cond - uncond);
}

std::vector<int64_t> generate_tokens(TokenTransformer& model, const torch::Tensor& music, int64_t n,
                                     const torch::Tensor& top_ids, int iters, const GenConfig& cfg, Rng& rng,
                                     GenerationTrace* trace) {
  cfg.validate();
  if (n < 1) throw Error("bad-length", "sequence length must be >= 1");
  if (iters < 1) throw Error("bad-config", "iterations must be >= 1");
  torch::NoGradGuard guard;
  model->eval();
  const int64_t k = model->cfg.codebook_size;
  const auto emb = model->encode_music(music);
  if (emb.size(1) != n) throw Error("misaligned-latents", "music length does not match token count");
  const auto keep = torch::zeros({1}, torch::kBool);
  const auto drop = torch::ones({1}, torch::kBool);

  std::vector<int64_t> ids(n, k);
  for (int l = 1; l <= iters; ++l) {
    std::vector<int64_t> open;
    for (int64_t p = 0; p < n; ++p) {
      if (ids[p] == k) open.push_back(p);
    }
    const auto t = torch::tensor(ids, torch::kLong).unsqueeze(0);
    auto logits = model->forward(t, emb, top_ids, keep);
    if (cfg.guidance_scale != 1.0) logits = cfg_combine(logits, model->forward(t, emb, top_ids, drop), cfg.guidance_scale);
    auto lg = logits[0].to(torch::kDouble);
    if (cfg.temperature > 0.0) lg = lg / cfg.temperature;
    const auto logp = torch::log_softmax(lg, -1).contiguous();
    const double* lp = logp.data_ptr<double>();
    const double gscale = iters > 1 ? cfg.gumbel_scale * (iters - l) / static_cast<double>(iters - 1) : 0.0;

    std::vector<std::pair<double, int64_t>> conf;
    for (int64_t p : open) {
      const double* row = lp + p * k;
      int64_t pick = 0;
      if (cfg.temperature > 0.0) {
        const double u = rng.uniform();
        double acc = 0.0;
        pick = k - 1;
        for (int64_t c = 0; c < k; ++c) {
          acc += std::exp(row[c]);
          if (u < acc) {
            pick = c;
            break;
          }
        }
      } else {
        pick = std::max_element(row, row + k) - row;
      }
      double g = 0.0;
      if (gscale > 0.0) {
        double u;
        do {
          u = rng.uniform();
        } while (u <= 0.0);
        g = -std::log(-std::log(u));
      }
      ids[p] = pick;
      conf.emplace_back(row[pick] + gscale * g, p);
    }
    const int64_t remask = std::min<int64_t>(mask_count(static_cast<double>(l) / iters, n),
                                             static_cast<int64_t>(conf.size()));
    std::stable_sort(conf.begin(), conf.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (int64_t i = 0; i < remask; ++i) ids[conf[i].second] = k;
    if (trace) {
      trace->remask_counts.push_back(remask);
      trace->states.push_back(ids);
    }
  }
  return ids;
}

std::vector<int64_t> generate_top(TokenTransformer& model, const torch::Tensor& music, int64_t n,
                                  const GenConfig& cfg, GenerationTrace* trace) {
  if (model->cfg.conditioned_on_top()) throw Error("bad-config", "expected a top-level model");
  Rng rng(cfg.seed);
  return generate_tokens(model, music, n, {}, cfg.top_iters, cfg, rng, trace);
}

std::vector<int64_t> generate_bottom(TokenTransformer& model, const torch::Tensor& music,
                                     const std::vector<int64_t>& top, const GenConfig& cfg, GenerationTrace* trace) {
  if (!model->cfg.conditioned_on_top()) throw Error("bad-config", "expected a bottom-level model");
  for (int64_t v : top) {
    if (v < 0 || v >= model->cfg.codebook_size) throw Error("incomplete-top", "top tokens contain MASK");
  }
  Rng rng(cfg.seed ^ 0xB0770Dull);
  const auto t = torch::tensor(top, torch::kLong).unsqueeze(0);
  return generate_tokens(model, music, static_cast<int64_t>(top.size()) * model->cfg.top_upsample, t,
                         cfg.bot_iters, cfg, rng, trace);
}

void save_transformer(const TokenTransformer& model, const std::string& prefix, Archive& out) {
  out.metadata[prefix + "config"] = model->cfg;
  save_module(*model, prefix, out);
}

TokenTransformer load_transformer(const Archive& in, const std::string& prefix) {
  if (!in.metadata.contains(prefix + "config")) throw Error("corrupt-archive", "missing " + prefix + "config");
  TokenTransformer model(in.metadata.at(prefix + "config").get<MaskedConfig>());
  load_module(*model, prefix, in);
  model->eval();
  return model;
}

}  // namespace duet::nn
