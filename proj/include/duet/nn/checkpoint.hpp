#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "duet/archive.hpp"
#include "duet/duet_repr.hpp"

namespace duet::nn {

// Parameters and buffers go in as f32 entries named "<prefix><dotted.name>".
void save_module(const torch::nn::Module& module, const std::string& prefix, Archive& out);
// Throws Error("corrupt-archive") when an entry is missing or its shape differs.
void load_module(torch::nn::Module& module, const std::string& prefix, const Archive& in);

void save_tensor(const std::string& name, const torch::Tensor& t, Archive& out);
torch::Tensor load_tensor(const std::string& name, const Archive& in);

// 64-bit FNV-1a over entry names, shapes, dtypes and payloads, as hex.
std::string archive_hash(const Archive& archive);

// Row-major double matrix <-> float tensor.
torch::Tensor to_tensor(const FeatureMatrix& m);
FeatureMatrix to_matrix(const torch::Tensor& t);
torch::Tensor to_tensor(const Eigen::VectorXd& v);

// Single global switch for reproducible CPU runs.
void set_deterministic(bool on);

}  // namespace duet::nn
