#pragma once

#include <functional>

#include <torch/torch.h>

#include "duet/rng.hpp"

namespace duet::test {

struct GradCheck {
  double rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|) over the probed coordinates
  int probes = 0;
};

// Central differences on `probes` random coordinates of a double tensor.
inline GradCheck grad_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, torch::Tensor x,
                            int probes, uint64_t seed, double step = 1e-4) {
  x = x.detach().to(torch::kDouble).contiguous().requires_grad_(true);
  const auto y = f(x);
  const auto analytic = torch::autograd::grad({y}, {x})[0].contiguous();
  Rng rng(seed);
  const int64_t n = x.numel();
  std::vector<double> a, num;
  torch::NoGradGuard guard;
  for (int i = 0; i < probes; ++i) {
    const int64_t k = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
    auto xp = x.detach().clone();
    auto xm = x.detach().clone();
    xp.view(-1)[k] += step;
    xm.view(-1)[k] -= step;
    num.push_back((f(xp).item<double>() - f(xm).item<double>()) / (2 * step));
    a.push_back(analytic.view(-1)[k].item<double>());
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - num[i]) * (a[i] - num[i]);
    na += a[i] * a[i];
    nn += num[i] * num[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
  return {std::sqrt(diff) / scale, probes};
}

}  // namespace duet::test
