#include "duet/nn/refiner.hpp"

#include "duet/error.hpp"
#include "duet/nn/checkpoint.hpp"
#include "duet/nn/kinematics.hpp"

namespace duet::nn {

namespace {

constexpr int kB = layout::kPersonWidth;

void check_width(int64_t w) {
  if (w != layout::kWidth) throw Error("shape-mismatch", "expected 536 feature channels");
}

}  // namespace

FeatureMatrix extract_local(const FeatureMatrix& f) {
  check_width(f.cols());
  FeatureMatrix out(f.rows(), layout::kLocalWidth);
  out.leftCols(kB - 3) = f.middleCols(3, kB - 3);
  out.rightCols(kB - 3) = f.middleCols(kB + 3, kB - 3);
  return out;
}

FeatureMatrix extract_traj(const FeatureMatrix& f) {
  check_width(f.cols());
  FeatureMatrix out(f.rows(), kTrajWidth);
  out.leftCols(3) = f.leftCols(3);
  out.rightCols(3) = f.middleCols(kB, 3);
  return out;
}

FeatureMatrix merge_local_traj(const FeatureMatrix& local, const FeatureMatrix& traj) {
  if (local.cols() != layout::kLocalWidth || traj.cols() != kTrajWidth || local.rows() != traj.rows())
    throw Error("shape-mismatch", "local/trajectory blocks do not fit together");
  FeatureMatrix f(local.rows(), layout::kWidth);
  f.leftCols(3) = traj.leftCols(3);
  f.middleCols(3, kB - 3) = local.leftCols(kB - 3);
  f.middleCols(kB, 3) = traj.rightCols(3);
  f.middleCols(kB + 3, kB - 3) = local.rightCols(kB - 3);
  return f;
}

torch::Tensor extract_local(const torch::Tensor& x) {
  check_width(x.size(-1));
  return torch::cat({x.narrow(-1, 3, kB - 3), x.narrow(-1, kB + 3, kB - 3)}, -1);
}

torch::Tensor extract_traj(const torch::Tensor& x) {
  check_width(x.size(-1));
  return torch::cat({x.narrow(-1, 0, 3), x.narrow(-1, kB, 3)}, -1);
}

void RefinerConfig::validate() const {
  if (width < 1 || blocks < 0 || kernel < 1 || kernel % 2 == 0) throw Error("bad-config", "refiner sizes");
}

void to_json(nlohmann::json& j, const RefinerConfig& c) {
  j = {{"width", c.width}, {"blocks", c.blocks}, {"kernel", c.kernel}};
}

void from_json(const nlohmann::json& j, RefinerConfig& c) {
  RefinerConfig d;
  c.width = j.value("width", d.width);
  c.blocks = j.value("blocks", d.blocks);
  c.kernel = j.value("kernel", d.kernel);
  c.validate();
}

RefinerImpl::RefinerImpl(const RefinerConfig& c) : cfg(c) {
  cfg.validate();
  const int w = cfg.width, pad = cfg.kernel / 2;
  in = register_module("in", torch::nn::Conv1d(torch::nn::Conv1dOptions(layout::kLocalWidth, w, cfg.kernel).padding(pad)));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int i = 0; i < cfg.blocks; ++i) {
    torch::nn::Sequential b(torch::nn::ReLU(),
                            torch::nn::Conv1d(torch::nn::Conv1dOptions(w, w, cfg.kernel).padding(pad)),
                            torch::nn::ReLU(), torch::nn::Conv1d(torch::nn::Conv1dOptions(w, w, 1)));
    blocks->push_back(b);
  }
  out = register_module("out", torch::nn::Conv1d(torch::nn::Conv1dOptions(w, kTrajWidth, 1)));
  local_mean = register_buffer("local_mean", torch::zeros({layout::kLocalWidth}));
  local_std = register_buffer("local_std", torch::ones({layout::kLocalWidth}));
  traj_mean = register_buffer("traj_mean", torch::zeros({kTrajWidth}));
  traj_std = register_buffer("traj_std", torch::ones({kTrajWidth}));
  trained = register_buffer("trained", torch::zeros({}, torch::kLong));
}

void RefinerImpl::set_stats(const FeatureStats& motion) {
  const auto mean = to_tensor(motion.mean), std = to_tensor(motion.std);
  local_mean.copy_(extract_local(mean));
  local_std.copy_(extract_local(std));
  traj_mean.copy_(extract_traj(mean));
  traj_std.copy_(extract_traj(std));
}

torch::Tensor RefinerImpl::forward(const torch::Tensor& local_raw) {
  if (local_raw.size(-1) != layout::kLocalWidth) throw Error("shape-mismatch", "expected 530 local channels");
  auto h = in(((local_raw - local_mean) / local_std).transpose(1, 2));
  for (const auto& b : *blocks) h = h + b->as<torch::nn::Sequential>()->forward(h);
  return out(torch::relu(h)).transpose(1, 2) * traj_std + traj_mean;
}

FeatureMatrix predict_traj(Refiner& model, const FeatureMatrix& local) {
  if (!model->trained.item<int64_t>()) throw Error("untrained", "trajectory refiner has no trained weights");
  torch::NoGradGuard guard;
  model->eval();
  return to_matrix(model->forward(to_tensor(local).unsqueeze(0))[0]);
}

DuetClip refine_clip(Refiner& model, const DuetClip& clip, const FeatureStats* stats) {
  DuetClip raw = clip;
  if (clip.normalized) {
    if (!stats) throw Error("missing-stats", "normalized clip needs its statistics");
    raw = denormalize(clip, *stats);
  }
  const FeatureMatrix local = extract_local(raw.features);
  FeatureMatrix traj = predict_traj(model, local);
  traj.row(0).head(3) = raw.features.row(0).head(3);
  raw.features = merge_local_traj(local, traj);
  return raw;
}

torch::Tensor refine_loss(const torch::Tensor& pred, const torch::Tensor& gt) {
  if (pred.sizes() != gt.sizes() || pred.size(-1) != kTrajWidth) throw Error("shape-mismatch", "trajectory shapes");
  const auto diff = pred - gt;
  const auto pos = root_path(diff.narrow(-1, 0, 3));
  return pos.norm(2, -1).sum() + diff.norm(2, -1).sum();
}

void save_refiner(const Refiner& model, const nlohmann::json& extra, Archive& out) {
  out.format = kFormatRefiner;
  out.metadata["config"] = model->cfg;
  for (auto it = extra.begin(); it != extra.end(); ++it) out.metadata[it.key()] = it.value();
  save_module(*model, "model/", out);
}

Refiner load_refiner(const Archive& in) {
  if (in.format != kFormatRefiner) throw Error("unsupported-format", in.format);
  Refiner model(in.metadata.at("config").get<RefinerConfig>());
  load_module(*model, "model/", in);
  model->eval();
  return model;
}

}  // namespace duet::nn
