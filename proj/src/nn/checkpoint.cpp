#include "duet/nn/checkpoint.hpp"

#include <cstdio>

#include "duet/error.hpp"

namespace duet::nn {

void save_tensor(const std::string& name, const torch::Tensor& t, Archive& out) {
  const auto c = t.detach().to(torch::kCPU).contiguous();
  const auto shape = c.sizes().vec();
  if (c.scalar_type() == torch::kLong) {
    out.add(ArrayEntry::from_i64(name, shape, {c.data_ptr<int64_t>(), static_cast<size_t>(c.numel())}));
  } else if (c.scalar_type() == torch::kDouble) {
    out.add(ArrayEntry::from_f64(name, shape, {c.data_ptr<double>(), static_cast<size_t>(c.numel())}));
  } else {
    const auto f = c.to(torch::kFloat).contiguous();
    out.add(ArrayEntry::from_f32(name, shape, {f.data_ptr<float>(), static_cast<size_t>(f.numel())}));
  }
}

torch::Tensor load_tensor(const std::string& name, const Archive& in) {
  const auto* e = in.find(name);
  if (!e) throw Error("corrupt-archive", "missing tensor " + name);
  switch (e->dtype) {
    case DType::kI64:
    case DType::kI32:
    case DType::kU8: {
      auto v = e->to_i64();
      return torch::from_blob(v.data(), e->shape, torch::kLong).clone();
    }
    case DType::kF64: {
      auto v = e->to_f64();
      return torch::from_blob(v.data(), e->shape, torch::kDouble).clone();
    }
    case DType::kF32: {
      auto v = e->to_f32();
      return torch::from_blob(v.data(), e->shape, torch::kFloat).clone();
    }
  }
  throw Error("corrupt-archive", "bad dtype for " + name);
}

void save_module(const torch::nn::Module& module, const std::string& prefix, Archive& out) {
  for (const auto& p : module.named_parameters(true)) save_tensor(prefix + p.key(), p.value(), out);
  for (const auto& b : module.named_buffers(true)) save_tensor(prefix + b.key(), b.value(), out);
}

void load_module(torch::nn::Module& module, const std::string& prefix, const Archive& in) {
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& dst) {
    auto src = load_tensor(prefix + name, in);
    if (src.sizes() != dst.sizes()) throw Error("corrupt-archive", "shape mismatch for " + prefix + name);
    dst.copy_(src.to(dst.scalar_type()));
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
}

std::string archive_hash(const Archive& archive) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, size_t n) {
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& e : archive.entries) {
    mix(e.name.data(), e.name.size());
    for (int64_t d : e.shape) mix(&d, sizeof d);
    const int t = static_cast<int>(e.dtype);
    mix(&t, sizeof t);
    mix(e.bytes.data(), e.bytes.size());
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

torch::Tensor to_tensor(const FeatureMatrix& m) {
  auto t = torch::empty({m.rows(), m.cols()}, torch::kFloat);
  auto* dst = t.data_ptr<float>();
  for (Eigen::Index i = 0; i < m.size(); ++i) dst[i] = static_cast<float>(m.data()[i]);
  return t;
}

FeatureMatrix to_matrix(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kDouble).contiguous();
  if (c.dim() != 2) throw Error("shape-mismatch", "expected a 2-D tensor");
  FeatureMatrix m(c.size(0), c.size(1));
  std::copy(c.data_ptr<double>(), c.data_ptr<double>() + c.numel(), m.data());
  return m;
}

torch::Tensor to_tensor(const Eigen::VectorXd& v) {
  auto t = torch::empty({v.size()}, torch::kFloat);
  for (Eigen::Index i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

void set_deterministic(bool on) {
  if (on) {
    torch::set_num_threads(1);
    at::globalContext().setDeterministicAlgorithms(true, false);
  }
}

}  // namespace duet::nn
