#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/duet_repr.hpp"

namespace duet::nn {

inline constexpr int kTrajWidth = 6;  // A's root delta, then B's offset from A

// Drops A's root delta (0..2) and B's root offset (268..270), keeping order.
// Throws Error("shape-mismatch") unless the clip is 536 wide.
FeatureMatrix extract_local(const FeatureMatrix& features);
FeatureMatrix extract_traj(const FeatureMatrix& features);
// Inverse splice of the two above.
FeatureMatrix merge_local_traj(const FeatureMatrix& local, const FeatureMatrix& traj);

// Torch versions over the last dimension.
torch::Tensor extract_local(const torch::Tensor& x);
torch::Tensor extract_traj(const torch::Tensor& x);

struct RefinerConfig {
  int width = 256;
  int blocks = 3;
  int kernel = 5;
  void validate() const;
};

void to_json(nlohmann::json& j, const RefinerConfig& c);
void from_json(const nlohmann::json& j, RefinerConfig& c);

// Full-resolution 1-D conv regressor from local features to trajectory
// channels, working in normalized units. Holds the normalization it was
// trained with.
struct RefinerImpl : torch::nn::Module {
  explicit RefinerImpl(const RefinerConfig& cfg);

  RefinerConfig cfg;
  torch::nn::Conv1d in{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Conv1d out{nullptr};
  torch::Tensor local_mean, local_std;  // [530]
  torch::Tensor traj_mean, traj_std;    // [6]
  torch::Tensor trained;                // scalar int64

  void set_stats(const FeatureStats& motion);
  // Raw local features [B, N, 530] -> raw trajectory [B, N, 6].
  torch::Tensor forward(const torch::Tensor& local_raw);
};
TORCH_MODULE(Refiner);

// Throws Error("untrained") before training or loading.
FeatureMatrix predict_traj(Refiner& model, const FeatureMatrix& local);

// Replaces the trajectory channels with predictions, keeping A's frame-0 root
// row (zero step, starting height). Local channels are copied bit for bit.
DuetClip refine_clip(Refiner& model, const DuetClip& clip, const FeatureStats* stats = nullptr);

// sum_n |path(pred)_n - path(gt)_n| + sum_n |pred_n - gt_n|, where path
// integrates the x/z steps and keeps the height,
// summed over leading batch dims. Inputs [..., N, 6] raw.
torch::Tensor refine_loss(const torch::Tensor& pred, const torch::Tensor& gt);

void save_refiner(const Refiner& model, const nlohmann::json& extra, Archive& out);
Refiner load_refiner(const Archive& in);

}  // namespace duet::nn
