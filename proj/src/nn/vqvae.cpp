#include "duet/nn/vqvae.hpp"

#include <bit>
#include <cmath>

#include "duet/error.hpp"
#include "duet/music.hpp"
#include "duet/nn/checkpoint.hpp"
#include "duet/nn/kinematics.hpp"

namespace duet::nn {

namespace {

bool power_of_two(int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); }
int log2i(int v) { return std::countr_zero(static_cast<unsigned>(v)); }

struct ResUnitImpl : torch::nn::Module {
  ResUnitImpl(int width, int dilation) {
    conv1 = register_module("conv1", torch::nn::Conv1d(torch::nn::Conv1dOptions(width, width, 3)
                                                           .padding(dilation)
                                                           .dilation(dilation)));
    conv2 = register_module("conv2", torch::nn::Conv1d(torch::nn::Conv1dOptions(width, width, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    return x + conv2(torch::relu(conv1(torch::relu(x))));
  }
  torch::nn::Conv1d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResUnit);

torch::nn::Conv1d conv(int in, int out, int k, int stride = 1) {
  const int pad = k == 4 ? 1 : k / 2;
  return torch::nn::Conv1d(torch::nn::Conv1dOptions(in, out, k).stride(stride).padding(pad));
}

void add_res_stack(torch::nn::Sequential& seq, int width, int units) {
  int d = 1;
  for (int i = 0; i < units; ++i, d *= 3) seq->push_back(ResUnit(width, d));
}

torch::nn::Upsample upsample2() {
  return torch::nn::Upsample(
      torch::nn::UpsampleOptions().scale_factor(std::vector<double>{2.0}).mode(torch::kNearest));
}

// [B, L, C] <-> [B, C, L]
torch::Tensor chan(const torch::Tensor& x) { return x.transpose(1, 2); }

void check_width(const torch::Tensor& t, int64_t width, const char* what) {
  if (t.dim() != 3 || t.size(2) != width)
    throw Error("shape-mismatch", std::string(what) + " must be [B, N, " + std::to_string(width) + "]");
}

}  // namespace

void VqConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error("bad-config", m); };
  if (!(eta_top > eta_bot && eta_bot > 1)) bad("eta_top > eta_bot > 1 required");
  if (eta_top % eta_bot != 0) bad("eta_top must be divisible by eta_bot");
  if (!power_of_two(eta_bot) || !power_of_two(eta_top)) bad("downscales must be powers of two");
  if (codebook_size < 2) bad("codebook_size must be >= 2");
  if (code_dim_top < 1 || code_dim_bot < 1 || width < 1 || res_units < 0 || music_width < 0) bad("bad widths");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) bad("ema_decay must lie in (0, 1)");
  if (reset_patience < 1) bad("reset_patience must be >= 1");
}

void to_json(nlohmann::json& j, const VqConfig& c) {
  j = {{"eta_bot", c.eta_bot},         {"eta_top", c.eta_top},
       {"codebook_size", c.codebook_size}, {"code_dim_top", c.code_dim_top},
       {"code_dim_bot", c.code_dim_bot}, {"width", c.width},
       {"res_units", c.res_units},     {"music_width", c.music_width},
       {"beta_top", c.beta_top},       {"beta_bot", c.beta_bot},
       {"lambda_r", c.lambda_r},       {"lambda_v", c.lambda_v},
       {"lambda_com", c.lambda_com},   {"lambda_fk", c.lambda_fk},
       {"lambda_rel", c.lambda_rel},   {"end_effector_weight", c.end_effector_weight},
       {"ema_decay", c.ema_decay},     {"reset_fraction", c.reset_fraction},
       {"reset_patience", c.reset_patience}, {"single_level", c.single_level}};
}

void from_json(const nlohmann::json& j, VqConfig& c) {
  VqConfig d;
  c.eta_bot = j.value("eta_bot", d.eta_bot);
  c.eta_top = j.value("eta_top", d.eta_top);
  c.codebook_size = j.value("codebook_size", d.codebook_size);
  c.code_dim_top = j.value("code_dim_top", d.code_dim_top);
  c.code_dim_bot = j.value("code_dim_bot", d.code_dim_bot);
  c.width = j.value("width", d.width);
  c.res_units = j.value("res_units", d.res_units);
  c.music_width = j.value("music_width", d.music_width);
  c.beta_top = j.value("beta_top", d.beta_top);
  c.beta_bot = j.value("beta_bot", d.beta_bot);
  c.lambda_r = j.value("lambda_r", d.lambda_r);
  c.lambda_v = j.value("lambda_v", d.lambda_v);
  c.lambda_com = j.value("lambda_com", d.lambda_com);
  c.lambda_fk = j.value("lambda_fk", d.lambda_fk);
  c.lambda_rel = j.value("lambda_rel", d.lambda_rel);
  c.end_effector_weight = j.value("end_effector_weight", d.end_effector_weight);
  c.ema_decay = j.value("ema_decay", d.ema_decay);
  c.reset_fraction = j.value("reset_fraction", d.reset_fraction);
  c.reset_patience = j.value("reset_patience", d.reset_patience);
  c.single_level = j.value("single_level", d.single_level);
}

Quantized quantize_nearest(const torch::Tensor& codebook, const torch::Tensor& latents) {
  if (latents.dim() != 2 || codebook.dim() != 2 || latents.size(1) != codebook.size(1))
    throw Error("shape-mismatch", "latent width differs from codebook");
  const auto x = latents.detach();
  const auto d = x.pow(2).sum(1, true) - 2.0 * torch::matmul(x, codebook.t()) + codebook.pow(2).sum(1).unsqueeze(0);
  const auto ids = std::get<1>(d.min(1));  // first minimum on ties
  return {codebook.index_select(0, ids), ids};
}

CodebookImpl::CodebookImpl(int size, int dim) {
  codes = register_buffer("codes", torch::zeros({size, dim}));
  ema_counts = register_buffer("ema_counts", torch::zeros({size}));
  ema_sums = register_buffer("ema_sums", torch::zeros({size, dim}));
  stale_steps = register_buffer("stale_steps", torch::zeros({size}, torch::kLong));
  initialized = register_buffer("initialized", torch::zeros({}, torch::kLong));
}

void CodebookImpl::init_from(const torch::Tensor& latents, Rng& rng, double initial_count) {
  torch::NoGradGuard guard;
  const auto x = latents.detach().to(codes.scalar_type());
  const int64_t n = x.size(0);
  if (n == 0) throw Error("empty-batch");
  for (int k = 0; k < size(); ++k) codes[k].copy_(x[static_cast<int64_t>(rng.below(n))]);
  ema_counts.fill_(initial_count);
  ema_sums.copy_(codes * initial_count);
  stale_steps.zero_();
  initialized.fill_(1);
}

int CodebookImpl::update(const torch::Tensor& latents, const torch::Tensor& ids, double decay,
                         double reset_fraction, int patience, Rng& rng) {
  torch::NoGradGuard guard;
  const auto x = latents.detach().to(codes.scalar_type());
  const int64_t n = x.size(0);
  if (n == 0) throw Error("empty-batch");
  if (x.dim() != 2 || x.size(1) != dim() || ids.numel() != n) throw Error("shape-mismatch", "latents/ids");
  const auto counts = torch::zeros({size()}, codes.options()).index_add_(0, ids, torch::ones({n}, codes.options()));
  const auto sums = torch::zeros_like(codes).index_add_(0, ids, x);
  ema_counts.mul_(decay).add_(counts, 1.0 - decay);
  ema_sums.mul_(decay).add_(sums, 1.0 - decay);
  codes.copy_(ema_sums / (ema_counts + 1e-6).unsqueeze(1));

  const double threshold = reset_fraction * static_cast<double>(n) / size();
  const auto stale = ema_counts < threshold;
  stale_steps.copy_(torch::where(stale, stale_steps + 1, torch::zeros_like(stale_steps)));
  int resets = 0;
  const auto* steps = stale_steps.data_ptr<int64_t>();
  for (int k = 0; k < size(); ++k) {
    if (steps[k] < patience) continue;
    const auto pick = x[static_cast<int64_t>(rng.below(n))];
    codes[k].copy_(pick);
    ema_sums[k].copy_(pick * threshold);
    ema_counts[k].fill_(threshold);
    stale_steps[k].fill_(0);
    ++resets;
  }
  return resets;
}

HierVqImpl::HierVqImpl(const VqConfig& c) : cfg(c) {
  cfg.validate();
  const int w = cfg.width;
  const int bot_steps = log2i(cfg.eta_bot);
  const int top_steps = log2i(cfg.eta_top / cfg.eta_bot);

  torch::nn::Sequential eb;
  eb->push_back(conv(layout::kWidth, w, 3));
  eb->push_back(torch::nn::ReLU());
  for (int s = 0; s < bot_steps; ++s) {
    eb->push_back(conv(w, w, 4, 2));
    add_res_stack(eb, w, cfg.res_units);
  }
  enc_bot = register_module("enc_bot", eb);

  if (!cfg.single_level) {
    torch::nn::Sequential et;
    for (int s = 0; s < top_steps; ++s) {
      et->push_back(conv(w, w, 4, 2));
      add_res_stack(et, w, cfg.res_units);
    }
    et->push_back(conv(w, cfg.code_dim_top, 3));
    enc_top = register_module("enc_top", et);

    torch::nn::Sequential dt;
    dt->push_back(conv(cfg.code_dim_top, w, 3));
    dt->push_back(torch::nn::ReLU());
    for (int s = 0; s < top_steps; ++s) {
      add_res_stack(dt, w, cfg.res_units);
      dt->push_back(upsample2());
      dt->push_back(conv(w, w, 3));
    }
    dec_top = register_module("dec_top", dt);
    top = register_module("top", Codebook(cfg.codebook_size, cfg.code_dim_top));
  }
  pre_bot = register_module("pre_bot", torch::nn::Conv1d(torch::nn::Conv1dOptions(
                                           cfg.single_level ? w : 2 * w, cfg.code_dim_bot, 1)));
  bot = register_module("bot", Codebook(cfg.codebook_size, cfg.code_dim_bot));

  if (cfg.music_conditioned()) {
    const int m = cfg.music_width;
    torch::nn::Sequential me;
    me->push_back(conv(kMusicWidth, m, 3));
    me->push_back(torch::nn::ReLU());
    for (int s = 0; s < bot_steps; ++s) {
      me->push_back(conv(m, m, 4, 2));
      me->push_back(torch::nn::ReLU());
    }
    music_enc = register_module("music_enc", me);
  }

  const int dec_in = (cfg.single_level ? 0 : w) + cfg.code_dim_bot + cfg.music_width;
  torch::nn::Sequential d;
  d->push_back(conv(dec_in, w, 3));
  d->push_back(torch::nn::ReLU());
  for (int s = 0; s < bot_steps; ++s) {
    add_res_stack(d, w, cfg.res_units);
    d->push_back(upsample2());
    d->push_back(conv(w, w, 3));
  }
  d->push_back(torch::nn::ReLU());
  d->push_back(conv(w, layout::kWidth, 3));
  decoder = register_module("decoder", d);
}

torch::Tensor HierVqImpl::encode_music(const torch::Tensor& music) {
  if (!cfg.music_conditioned()) return {};
  check_width(music, kMusicWidth, "music");
  if (music.size(1) % cfg.eta_bot != 0) throw Error("bad-length", "music frames not divisible by eta_bot");
  return chan(music_enc->forward(chan(music)));
}

VqOutput HierVqImpl::forward(const torch::Tensor& x, const torch::Tensor& music) {
  check_width(x, layout::kWidth, "motion");
  const int64_t n = x.size(1);
  const int divisor = cfg.single_level ? cfg.eta_bot : cfg.eta_top;
  if (n % divisor != 0) throw Error("bad-length", "frames must be divisible by " + std::to_string(divisor));
  if (cfg.music_conditioned() && music.size(1) != n) throw Error("misaligned-latents", "music and motion lengths differ");

  VqOutput out;
  const auto eb = enc_bot->forward(chan(x));
  torch::Tensor dt;
  if (!cfg.single_level) {
    out.z_top_pre = chan(enc_top->forward(eb));
    const int64_t b = out.z_top_pre.size(0), lt = out.z_top_pre.size(1);
    const auto q = top->quantize(out.z_top_pre.reshape({b * lt, -1}));
    out.ids_top = q.ids.reshape({b, lt});
    out.z_top = q.codes.reshape({b, lt, -1});
    const auto st = bypass_quantizer ? out.z_top_pre : out.z_top_pre + (out.z_top - out.z_top_pre).detach();
    dt = dec_top->forward(chan(st));
    out.z_bot_pre = chan(pre_bot->forward(torch::cat({eb, dt}, 1)));
  } else {
    out.z_bot_pre = chan(pre_bot->forward(eb));
  }
  const int64_t b = out.z_bot_pre.size(0), lb = out.z_bot_pre.size(1);
  const auto q = bot->quantize(out.z_bot_pre.reshape({b * lb, -1}));
  out.ids_bot = q.ids.reshape({b, lb});
  out.z_bot = q.codes.reshape({b, lb, -1});
  const auto sb = bypass_quantizer ? out.z_bot_pre : out.z_bot_pre + (out.z_bot - out.z_bot_pre).detach();

  std::vector<torch::Tensor> parts;
  if (dt.defined()) parts.push_back(dt);
  parts.push_back(chan(sb));
  if (cfg.music_conditioned()) parts.push_back(chan(encode_music(music)));
  out.recon = chan(decoder->forward(torch::cat(parts, 1)));
  return out;
}

torch::Tensor HierVqImpl::decode(const torch::Tensor& z_top, const torch::Tensor& z_bot, const torch::Tensor& z_m) {
  check_width(z_bot, cfg.code_dim_bot, "z_bot");
  std::vector<torch::Tensor> parts;
  if (!cfg.single_level) {
    check_width(z_top, cfg.code_dim_top, "z_top");
    if (z_top.size(1) * (cfg.eta_top / cfg.eta_bot) != z_bot.size(1))
      throw Error("misaligned-latents", "top/bottom lengths disagree");
    parts.push_back(dec_top->forward(chan(z_top)));
  }
  parts.push_back(chan(z_bot));
  if (cfg.music_conditioned()) {
    if (!z_m.defined() || z_m.size(1) != z_bot.size(1)) throw Error("misaligned-latents", "music embedding length");
    check_width(z_m, cfg.music_width, "z_m");
    parts.push_back(chan(z_m));
  }
  return chan(decoder->forward(torch::cat(parts, 1)));
}

std::pair<torch::Tensor, torch::Tensor> HierVqImpl::tokenize(const torch::Tensor& x, const torch::Tensor& music) {
  torch::NoGradGuard guard;
  const auto out = forward(x, music);
  return {out.ids_top, out.ids_bot};
}

torch::Tensor HierVqImpl::detokenize(const torch::Tensor& ids_top, const torch::Tensor& ids_bot,
                                     const torch::Tensor& music) {
  torch::NoGradGuard guard;
  auto check = [&](const torch::Tensor& ids) {
    if (ids.numel() == 0) return;
    if (ids.min().item<int64_t>() < 0 || ids.max().item<int64_t>() >= cfg.codebook_size)
      throw Error("bad-token", "id outside [0, K)");
  };
  check(ids_bot);
  torch::Tensor zt;
  if (!cfg.single_level) {
    check(ids_top);
    zt = top->codes.index_select(0, ids_top.reshape(-1)).reshape({ids_top.size(0), ids_top.size(1), -1});
  }
  const auto zb = bot->codes.index_select(0, ids_bot.reshape(-1)).reshape({ids_bot.size(0), ids_bot.size(1), -1});
  torch::Tensor zm;
  if (cfg.music_conditioned()) {
    if (music.size(1) != ids_bot.size(1) * cfg.eta_bot) throw Error("misaligned-latents", "music length");
    zm = encode_music(music);
  }
  return decode(zt, zb, zm);
}

int64_t HierVqImpl::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  for (const auto& b : named_buffers()) {
    if (b.key().ends_with("codes")) n += b.value().numel();
  }
  return n;
}

int matched_single_level_width(const VqConfig& cfg) {
  VqConfig h = cfg;
  h.single_level = false;
  const int64_t target = HierVq(h)->parameter_count();
  int best = cfg.width;
  int64_t best_gap = INT64_MAX;
  for (int w = cfg.width; w <= 4 * cfg.width; w += 2) {
    VqConfig s = cfg;
    s.single_level = true;
    s.width = w;
    const int64_t gap = std::llabs(HierVq(s)->parameter_count() - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    } else if (gap > best_gap) {
      break;
    }
  }
  return best;
}

MotionScale MotionScale::from(const FeatureStats& s) {
  if (s.mean.size() != layout::kWidth || s.std.size() != layout::kWidth) throw Error("missing-stats");
  return {to_tensor(s.mean), to_tensor(s.std)};
}

torch::Tensor commitment_loss(const torch::Tensor& z_pre, const torch::Tensor& z_q, double beta) {
  if (z_pre.sizes() != z_q.sizes()) throw Error("shape-mismatch", "commitment operands");
  return beta * (z_pre - z_q.detach()).pow(2).sum();
}

torch::Tensor fk_loss(const torch::Tensor& gt_a, const torch::Tensor& gt_b, const torch::Tensor& pred_a,
                      const torch::Tensor& pred_b) {
  if (gt_a.sizes() != pred_a.sizes() || gt_b.sizes() != pred_b.sizes()) throw Error("shape-mismatch", "fk operands");
  return (gt_a - pred_a).norm(2, -1).mean() + (gt_b - pred_b).norm(2, -1).mean();
}

torch::Tensor relative_loss(const torch::Tensor& gt_a, const torch::Tensor& gt_b, const torch::Tensor& pred_a,
                            const torch::Tensor& pred_b, const torch::Tensor& weights) {
  if (gt_a.sizes() != pred_a.sizes() || gt_b.sizes() != pred_b.sizes()) throw Error("shape-mismatch", "rel operands");
  // [..., J, 1, 3] - [..., 1, J, 3]
  auto pair_dist = [](const torch::Tensor& a, const torch::Tensor& b) {
    return (a.unsqueeze(-2) - b.unsqueeze(-3)).pow(2).sum(-1).clamp_min(1e-12).sqrt();
  };
  const auto d = pair_dist(gt_a, gt_b).detach();
  const auto dh = pair_dist(pred_a, pred_b);
  const int64_t j = gt_a.size(-2);
  const auto per_joint = (torch::exp(-d) * (d - dh).abs()).sum(-1);  // [..., J]
  return (per_joint * weights).sum(-1).mean() / static_cast<double>(j);
}

torch::Tensor joint_weights(double end_effector_weight, torch::ScalarType dtype) {
  auto w = torch::ones({kJointCount}, dtype);
  for (int j : kEndEffectors) w[j] = end_effector_weight;
  return w;
}

VqLossTerms vq_losses(const VqConfig& cfg, const torch::Tensor& x, const VqOutput& out, const MotionScale& scale,
                      const Skeleton& skel) {
  if (x.sizes() != out.recon.sizes()) throw Error("shape-mismatch", "x and x_hat differ");
  VqLossTerms t;
  t.recon = torch::mse_loss(out.recon, x);
  const auto dx = x.narrow(1, 1, x.size(1) - 1) - x.narrow(1, 0, x.size(1) - 1);
  const auto dxh = out.recon.narrow(1, 1, x.size(1) - 1) - out.recon.narrow(1, 0, x.size(1) - 1);
  t.velocity = torch::mse_loss(dxh, dx);

  // Element mean, so beta does not scale with the code width.
  t.commit = commitment_loss(out.z_bot_pre, out.z_bot, cfg.beta_bot) / static_cast<double>(out.z_bot_pre.numel());
  if (out.z_top_pre.defined())
    t.commit = t.commit + commitment_loss(out.z_top_pre, out.z_top, cfg.beta_top) / static_cast<double>(out.z_top_pre.numel());

  const auto s = MotionScale{scale.mean.to(x.dtype()), scale.std.to(x.dtype())};
  const auto gt = features_to_world(s.denormalize(x), skel);
  const auto pr = features_to_world(s.denormalize(out.recon), skel);
  t.fk = fk_loss(gt.a.detach(), gt.b.detach(), pr.a, pr.b);
  t.rel = relative_loss(gt.a.detach(), gt.b.detach(), pr.a, pr.b, joint_weights(cfg.end_effector_weight, x.scalar_type()));
  t.total = cfg.lambda_r * t.recon + cfg.lambda_v * t.velocity + cfg.lambda_com * t.commit + cfg.lambda_fk * t.fk +
            cfg.lambda_rel * t.rel;
  return t;
}

void save_vq(const HierVq& model, const FeatureStats& motion, const FeatureStats& music, const nlohmann::json& extra,
             Archive& out) {
  out.format = kFormatVq;
  out.metadata["config"] = model->cfg;
  for (auto it = extra.begin(); it != extra.end(); ++it) out.metadata[it.key()] = it.value();
  save_module(*model, "model/", out);
  const auto& mm = motion.mean;
  out.add(ArrayEntry::from_f64("stats/motion/mean", {mm.size()}, {mm.data(), static_cast<size_t>(mm.size())}));
  out.add(ArrayEntry::from_f64("stats/motion/std", {motion.std.size()},
                               {motion.std.data(), static_cast<size_t>(motion.std.size())}));
  out.add(ArrayEntry::from_f64("stats/music/mean", {music.mean.size()},
                               {music.mean.data(), static_cast<size_t>(music.mean.size())}));
  out.add(ArrayEntry::from_f64("stats/music/std", {music.std.size()},
                               {music.std.data(), static_cast<size_t>(music.std.size())}));
}

HierVq load_vq(const Archive& in, FeatureStats* motion, FeatureStats* music) {
  if (in.format != kFormatVq) throw Error("unsupported-format", in.format);
  HierVq model(in.metadata.at("config").get<VqConfig>());
  load_module(*model, "model/", in);
  auto vec = [&](const std::string& name) {
    const auto v = in.at(name).to_f64();
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  if (motion) *motion = {vec("stats/motion/mean"), vec("stats/motion/std")};
  if (music) *music = {vec("stats/music/mean"), vec("stats/music/std")};
  model->eval();
  return model;
}

}  // namespace duet::nn
