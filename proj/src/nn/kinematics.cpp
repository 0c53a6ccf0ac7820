#include "duet/nn/kinematics.hpp"

#include <vector>

namespace duet::nn {

namespace {

torch::Tensor normalize_last(const torch::Tensor& v) {
  return v / v.norm(2, -1, true).clamp_min(1e-12);
}

}  // namespace

torch::Tensor rotation_from_6d(const torch::Tensor& v) {
  const auto a = v.narrow(-1, 0, 3);
  const auto b = v.narrow(-1, 3, 3);
  const auto c0 = normalize_last(a);
  const auto c1 = normalize_last(b - (c0 * b).sum(-1, true) * c0);
  const auto c2 = torch::linalg_cross(c0, c1, -1);
  return torch::stack({c0, c1, c2}, -1);  // columns
}

torch::Tensor forward_kinematics(const torch::Tensor& local, const torch::Tensor& root_rot,
                                 const torch::Tensor& root_pos, const Skeleton& skel) {
  const auto opts = local.options();
  std::vector<torch::Tensor> global(kJointCount), pos(kJointCount);
  global[0] = root_rot;
  pos[0] = root_pos;
  for (int j = 1; j < kJointCount; ++j) {
    const int p = skel.parents[j];
    const auto& o = skel.rest_offsets[j];
    const auto offset = torch::tensor({o.x(), o.y(), o.z()}, opts);
    pos[j] = pos[p] + torch::matmul(global[p], offset);
    global[j] = torch::matmul(global[p], local.select(-3, j - 1));
  }
  return torch::stack(pos, -2);
}

torch::Tensor root_path(const torch::Tensor& t) {
  const auto xz = torch::cumsum(t, -2);
  return torch::stack({xz.select(-1, 0), t.select(-1, 1), xz.select(-1, 2)}, -1);
}

WorldJoints features_to_world(const torch::Tensor& raw, const Skeleton& skel) {
  const auto a_root = root_path(raw.narrow(-1, layout::kRootTrans, 3));
  const auto b_root = a_root + raw.narrow(-1, layout::kPersonWidth + layout::kRootTrans, 3);
  auto person = [&](int p, const torch::Tensor& root) {
    const int base = layout::person_base(p);
    const auto root_rot = rotation_from_6d(raw.narrow(-1, base + layout::kRootRot, 6));
    auto shape = raw.sizes().vec();
    shape.back() = kLocalJointCount;
    shape.push_back(6);
    const auto local = rotation_from_6d(raw.narrow(-1, base + layout::kJointRot, 6 * kLocalJointCount).reshape(shape));
    return forward_kinematics(local, root_rot, root, skel);
  };
  return {person(0, a_root), person(1, b_root)};
}

}  // namespace duet::nn
