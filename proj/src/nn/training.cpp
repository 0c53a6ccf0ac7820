#include "duet/nn/training.hpp"

#include <numeric>

#include "duet/error.hpp"
#include "duet/nn/checkpoint.hpp"

namespace duet::nn {

void to_json(nlohmann::json& j, const OptimConfig& c) {
  j = {{"lr", c.lr},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"decay_every", c.decay_every},
       {"decay", c.decay},
       {"grad_clip", c.grad_clip},
       {"crop_frames", c.crop_frames},
       {"warmup_steps", c.warmup_steps}};
}

void from_json(const nlohmann::json& j, OptimConfig& c) {
  OptimConfig d;
  c.lr = j.value("lr", d.lr);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.decay_every = j.value("decay_every", d.decay_every);
  c.decay = j.value("decay", d.decay);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.crop_frames = j.value("crop_frames", d.crop_frames);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  if (c.batch_size < 1 || c.epochs < 0 || !(c.lr > 0)) throw Error("bad-config", "optimizer settings");
}

TensorSet make_tensor_set(std::span<const DatasetItem> items, const FeatureStats& motion, const FeatureStats& music) {
  if (items.empty()) throw Error("empty-dataset");
  std::vector<torch::Tensor> xs, ms;
  const auto mm = to_tensor(music.mean), ms_ = to_tensor(music.std);
  for (const auto& it : items) {
    const DuetClip c = it.clip.normalized ? it.clip : normalize(it.clip, motion);
    xs.push_back(to_tensor(c.features));
    if (it.music.rows() != it.clip.frames()) throw Error("shape-mismatch", "music rows differ from motion frames");
    ms.push_back((to_tensor(FeatureMatrix(it.music.frames)) - mm) / ms_);
  }
  return {torch::stack(xs), torch::stack(ms)};
}

Batcher::Batcher(int64_t n, int bs, uint64_t seed) : count(n), batch_size(bs), rng(seed) {}

std::vector<std::vector<int64_t>> Batcher::epoch() {
  std::vector<int64_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int64_t i = count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::vector<std::vector<int64_t>> out;
  for (int64_t s = 0; s < count; s += batch_size)
    out.emplace_back(order.begin() + s, order.begin() + std::min<int64_t>(count, s + batch_size));
  return out;
}

int64_t Batcher::crop_start(int64_t frames, int crop, int multiple) {
  if (crop <= 0 || crop >= frames) return 0;
  return static_cast<int64_t>(rng.below(static_cast<uint64_t>((frames - crop) / multiple + 1))) * multiple;
}

namespace {

torch::Tensor gather(const torch::Tensor& t, const std::vector<int64_t>& idx) {
  return t.index_select(0, torch::tensor(idx, torch::kLong));
}

void set_lr(torch::optim::Adam& adam, double lr) {
  for (auto& g : adam.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

double epoch_lr(const OptimConfig& opt, int epoch) {
  if (opt.decay_every <= 0) return opt.lr;
  return opt.lr * std::pow(opt.decay, epoch / opt.decay_every);
}

}  // namespace

torch::Tensor anchored_crop(const torch::Tensor& x, int64_t start, int64_t length, const MotionScale& scale) {
  auto crop = x.narrow(1, start, length);
  if (start == 0) return crop;
  // Zero horizontal step on the new first frame; the height channel is absolute already.
  auto first = crop.narrow(1, 0, 1).clone();
  for (int c : {0, 2}) {
    const auto k = layout::kRootTrans + c;
    first.select(2, k).fill_(-scale.mean[k].item<double>() / scale.std[k].item<double>());
  }
  return torch::cat({first, crop.narrow(1, 1, length - 1)}, 1);
}

nlohmann::json train_vq(HierVq& model, const TensorSet& data, const FeatureStats& motion_stats, const Skeleton& skel,
                        const OptimConfig& opt, uint64_t seed, const ProgressFn& progress) {
  torch::manual_seed(seed);
  Rng code_rng(seed ^ 0x51ED27ULL);
  Batcher batcher(data.size(), opt.batch_size, seed);
  const auto scale = MotionScale::from(motion_stats);
  torch::optim::Adam adam(model->parameters(), torch::optim::AdamOptions(opt.lr));
  nlohmann::json log = {{"epochs", nlohmann::json::array()}, {"resets", 0}};
  int64_t resets = 0;
  int64_t step = 0;
  model->train();

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    set_lr(adam, epoch_lr(opt, epoch));
    double sum = 0.0, rec = 0.0, fk = 0.0, rel = 0.0;
    int steps = 0;
    for (const auto& idx : batcher.epoch()) {
      auto x = gather(data.motion, idx);
      auto m = gather(data.music, idx);
      if (opt.crop_frames > 0 && opt.crop_frames < x.size(1)) {
        if (opt.crop_frames % model->cfg.eta_top != 0) throw Error("bad-config", "crop must divide by eta_top");
        const int64_t s0 = batcher.crop_start(x.size(1), opt.crop_frames, 1);
        x = anchored_crop(x, s0, opt.crop_frames, scale);
        m = m.narrow(1, s0, opt.crop_frames);
      }
      const bool warming = step < opt.warmup_steps && !model->bot->initialized.item<int64_t>();
      model->bypass_quantizer = warming;
      if (!warming && !model->bot->initialized.item<int64_t>()) {
        torch::NoGradGuard guard;
        if (!model->cfg.single_level) {
          const auto o = model->forward(x, m);
          const auto z = o.z_top_pre.reshape({-1, o.z_top_pre.size(-1)});
          model->top->init_from(z, code_rng, model->cfg.reset_fraction * z.size(0) / model->cfg.codebook_size);
        }
        const auto o = model->forward(x, m);
        const auto z = o.z_bot_pre.reshape({-1, o.z_bot_pre.size(-1)});
        model->bot->init_from(z, code_rng, model->cfg.reset_fraction * z.size(0) / model->cfg.codebook_size);
      }
      const auto out = model->forward(x, m);
      auto terms = vq_losses(model->cfg, x, out, scale, skel);
      if (warming) terms.total = terms.total - model->cfg.lambda_com * terms.commit;
      adam.zero_grad();
      terms.total.backward();
      if (opt.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), opt.grad_clip);
      adam.step();
      ++step;
      if (warming) {
        sum += terms.total.item<double>();
        rec += terms.recon.item<double>();
        fk += terms.fk.item<double>();
        rel += terms.rel.item<double>();
        ++steps;
        continue;
      }
      const auto& c = model->cfg;
      if (!c.single_level)
        resets += model->top->update(out.z_top_pre.reshape({-1, out.z_top_pre.size(-1)}), out.ids_top.reshape(-1),
                                     c.ema_decay, c.reset_fraction, c.reset_patience, code_rng);
      resets += model->bot->update(out.z_bot_pre.reshape({-1, out.z_bot_pre.size(-1)}), out.ids_bot.reshape(-1),
                                   c.ema_decay, c.reset_fraction, c.reset_patience, code_rng);
      sum += terms.total.item<double>();
      rec += terms.recon.item<double>();
      fk += terms.fk.item<double>();
      rel += terms.rel.item<double>();
      ++steps;
    }
    EpochRecord r{epoch, sum / steps, {{"recon", rec / steps}, {"fk", fk / steps}, {"rel", rel / steps}}};
    log["epochs"].push_back({{"epoch", epoch}, {"loss", r.loss}, {"terms", r.terms}});
    if (progress) progress(r);
  }
  log["resets"] = resets;
  model->bypass_quantizer = false;
  model->eval();
  return log;
}

double codebook_utilization(HierVq& model, const TensorSet& data, bool top_level) {
  torch::NoGradGuard guard;
  model->eval();
  if (top_level && model->cfg.single_level) return 0.0;
  const int k = model->cfg.codebook_size;
  std::vector<char> used(k, 0);
  for (int64_t s = 0; s < data.size(); s += 16) {
    const int64_t e = std::min<int64_t>(data.size(), s + 16);
    const auto [top, bot] = model->tokenize(data.motion.slice(0, s, e), data.music.slice(0, s, e));
    const auto ids = (top_level ? top : bot).reshape(-1).contiguous();
    for (int64_t i = 0; i < ids.numel(); ++i) used[ids.data_ptr<int64_t>()[i]] = 1;
  }
  return std::accumulate(used.begin(), used.end(), 0.0) / k;
}

TokenSet tokenize_set(HierVq& model, const TensorSet& data) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> tops, bots;
  for (int64_t s = 0; s < data.size(); s += 16) {
    const int64_t e = std::min<int64_t>(data.size(), s + 16);
    auto [top, bot] = model->tokenize(data.motion.slice(0, s, e), data.music.slice(0, s, e));
    if (top.defined()) tops.push_back(top);
    bots.push_back(bot);
  }
  return {tops.empty() ? torch::Tensor() : torch::cat(tops), torch::cat(bots)};
}

namespace {

torch::Tensor drop_mask(int64_t n, double p, Rng& rng) {
  auto d = torch::zeros({n}, torch::kBool);
  for (int64_t i = 0; i < n; ++i) d[i] = rng.uniform() < p;
  return d;
}

}  // namespace

nlohmann::json train_masked(TokenTransformer& model, const torch::Tensor& ids, const torch::Tensor& music,
                            const torch::Tensor& top_ids, const OptimConfig& opt, double cond_dropout, uint64_t seed,
                            const ProgressFn& progress) {
  if (ids.size(0) != music.size(0)) throw Error("shape-mismatch", "token and music sets differ in size");
  const bool bottom = model->cfg.conditioned_on_top();
  if (bottom != top_ids.defined()) throw Error("bad-config", "top tokens must be given exactly for the bottom model");
  torch::manual_seed(seed);
  Rng rng(seed ^ 0x3A5CEDULL);
  Batcher batcher(ids.size(0), opt.batch_size, seed);
  torch::optim::Adam adam(model->parameters(), torch::optim::AdamOptions(opt.lr));
  nlohmann::json log = {{"epochs", nlohmann::json::array()}};
  model->train();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    set_lr(adam, epoch_lr(opt, epoch));
    double sum = 0.0;
    int steps = 0;
    for (const auto& idx : batcher.epoch()) {
      const auto batch = corrupt_batch(gather(ids, idx), model->cfg.codebook_size, rng);
      const auto m = gather(music, idx);
      const auto drop = drop_mask(static_cast<int64_t>(idx.size()), cond_dropout, rng);
      const auto loss = bottom ? bottom_loss(model, batch, m, gather(top_ids, idx), drop) : top_loss(model, batch, m, drop);
      adam.zero_grad();
      loss.backward();
      if (opt.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), opt.grad_clip);
      adam.step();
      sum += loss.item<double>();
      ++steps;
    }
    EpochRecord r{epoch, sum / steps, nlohmann::json::object()};
    log["epochs"].push_back({{"epoch", epoch}, {"loss", r.loss}});
    if (progress) progress(r);
  }
  model->eval();
  return log;
}

double masked_eval_loss(TokenTransformer& model, const torch::Tensor& ids, const torch::Tensor& music,
                        const torch::Tensor& top_ids, uint64_t seed) {
  torch::NoGradGuard guard;
  model->eval();
  Rng rng(seed);
  const auto batch = corrupt_batch(ids, model->cfg.codebook_size, rng);
  const auto keep = torch::zeros({ids.size(0)}, torch::kBool);
  return (top_ids.defined() ? bottom_loss(model, batch, music, top_ids, keep) : top_loss(model, batch, music, keep))
      .item<double>();
}

nlohmann::json train_refiner(Refiner& model, const TensorSet& data, const FeatureStats& motion_stats,
                             const OptimConfig& opt, uint64_t seed, const ProgressFn& progress) {
  torch::manual_seed(seed);
  Batcher batcher(data.size(), opt.batch_size, seed);
  const auto scale = MotionScale::from(motion_stats);
  model->set_stats(motion_stats);
  torch::optim::Adam adam(model->parameters(), torch::optim::AdamOptions(opt.lr));
  nlohmann::json log = {{"epochs", nlohmann::json::array()}};
  model->train();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    set_lr(adam, epoch_lr(opt, epoch));
    double sum = 0.0;
    int steps = 0;
    for (const auto& idx : batcher.epoch()) {
      auto x = gather(data.motion, idx);
      if (opt.crop_frames > 0 && opt.crop_frames < x.size(1)) {
        const int64_t s0 = batcher.crop_start(x.size(1), opt.crop_frames, 1);
        x = x.narrow(1, s0, opt.crop_frames);
      }
      const auto raw = scale.denormalize(x);
      const auto pred = model->forward(extract_local(raw));
      const auto loss = refine_loss(pred, extract_traj(raw)) / static_cast<double>(x.size(0) * x.size(1));
      adam.zero_grad();
      loss.backward();
      if (opt.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), opt.grad_clip);
      adam.step();
      sum += loss.item<double>();
      ++steps;
    }
    EpochRecord r{epoch, sum / steps, nlohmann::json::object()};
    log["epochs"].push_back({{"epoch", epoch}, {"loss", r.loss}});
    if (progress) progress(r);
  }
  model->trained.fill_(1);
  model->eval();
  return log;
}

double extractor_loss(Extractor& model, const TensorSet& data, const FeatureStats& motion_stats) {
  torch::NoGradGuard guard;
  model->eval();
  const auto scale = MotionScale::from(motion_stats);
  double sum = 0.0;
  for (int64_t s = 0; s < data.size(); s += 16) {
    const int64_t e = std::min<int64_t>(data.size(), s + 16);
    sum += model->reconstruction_loss(scale.denormalize(data.motion.slice(0, s, e))).item<double>() * (e - s);
  }
  return sum / static_cast<double>(data.size());
}

nlohmann::json train_extractor(Extractor& model, const TensorSet& data, const FeatureStats& motion_stats,
                               const OptimConfig& opt, uint64_t seed, const ProgressFn& progress) {
  torch::manual_seed(seed);
  Batcher batcher(data.size(), opt.batch_size, seed);
  const auto scale = MotionScale::from(motion_stats);
  model->set_stats(motion_stats);
  torch::optim::Adam adam(model->parameters(), torch::optim::AdamOptions(opt.lr));
  nlohmann::json log = {{"epochs", nlohmann::json::array()}};
  model->train();
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    set_lr(adam, epoch_lr(opt, epoch));
    double sum = 0.0;
    int steps = 0;
    for (const auto& idx : batcher.epoch()) {
      auto x = gather(data.motion, idx);
      if (opt.crop_frames > 0 && opt.crop_frames < x.size(1)) {
        const int64_t s0 = batcher.crop_start(x.size(1), opt.crop_frames, 1);
        x = x.narrow(1, s0, opt.crop_frames);
      }
      const auto loss = model->reconstruction_loss(scale.denormalize(x));
      adam.zero_grad();
      loss.backward();
      if (opt.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), opt.grad_clip);
      adam.step();
      sum += loss.item<double>();
      ++steps;
    }
    EpochRecord r{epoch, sum / steps, nlohmann::json::object()};
    log["epochs"].push_back({{"epoch", epoch}, {"loss", r.loss}});
    if (progress) progress(r);
  }
  const double final_loss = extractor_loss(model, data, motion_stats);
  model->final_loss.fill_(final_loss);
  log["final_loss"] = final_loss;
  model->eval();
  return log;
}

}  // namespace duet::nn
