#pragma once

#include <torch/torch.h>

#include "duet/duet_repr.hpp"
#include "duet/skeleton.hpp"

namespace duet::nn {

// [..., 6] -> [..., 3, 3] via Gram-Schmidt on the two encoded columns.
torch::Tensor rotation_from_6d(const torch::Tensor& v);

// Batched FK. local: [..., 21, 3, 3], root_rot: [..., 3, 3], root_pos: [..., 3].
// Returns world joint positions [..., 22, 3].
torch::Tensor forward_kinematics(const torch::Tensor& local, const torch::Tensor& root_rot,
                                 const torch::Tensor& root_pos, const Skeleton& skel);

// A's root channels [..., N, 3] (x/z per-frame steps, absolute height) -> positions.
torch::Tensor root_path(const torch::Tensor& t);

struct WorldJoints {
  torch::Tensor a;  // [B, N, 22, 3]
  torch::Tensor b;
};

// Raw (de-normalized) features [B, N, 536] -> world joint positions for both
// persons, integrating A's root path and placing B relative to A.
WorldJoints features_to_world(const torch::Tensor& raw, const Skeleton& skel);

}  // namespace duet::nn
