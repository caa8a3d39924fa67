#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace gradcheck {

struct Entry {
  std::string param;
  int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct Report {
  std::vector<Entry> entries;
  double max_rel_error = 0.0;
  bool ok(double tol) const { return entries.size() >= 10 && max_rel_error < tol; }
};

// Central differences on `count` parameter entries drawn from the named
// parameters (every parameter when `only` is empty). Entries whose analytic
// gradient is below `floor` relative to the largest one are skipped so the
// comparison is not dominated by rounding.
inline Report check(torch::nn::Module& module, const std::function<torch::Tensor()>& loss, int count,
                    unsigned seed, const std::vector<std::string>& only = {}, double h = 1e-6,
                    double floor = 1e-4) {
  module.zero_grad();
  auto l = loss();
  l.backward();

  struct Candidate {
    std::string name;
    torch::Tensor param;
    int64_t index;
    double grad;
  };
  std::vector<Candidate> all;
  double gmax = 0.0;
  for (auto& p : module.named_parameters()) {
    if (!only.empty() && std::none_of(only.begin(), only.end(),
                                      [&](const std::string& s) { return p.key().find(s) != std::string::npos; })) {
      continue;
    }
    if (!p.value().grad().defined()) continue;
    auto g = p.value().grad().reshape({-1});
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double gi = g[i].item<double>();
      gmax = std::max(gmax, std::abs(gi));
      all.push_back({p.key(), p.value(), i, gi});
    }
  }
  std::vector<Candidate> usable;
  for (auto& c : all)
    if (std::abs(c.grad) > floor * gmax) usable.push_back(c);
  std::mt19937 rng(seed);
  std::shuffle(usable.begin(), usable.end(), rng);
  if (static_cast<int>(usable.size()) > count) usable.resize(static_cast<std::size_t>(count));

  Report r;
  torch::NoGradGuard guard;
  for (auto& c : usable) {
    auto flat = c.param.view({-1});
    const double orig = flat[c.index].item<double>();
    flat[c.index] = orig + h;
    const double up = loss().item<double>();
    flat[c.index] = orig - h;
    const double down = loss().item<double>();
    flat[c.index] = orig;
    const double num = (up - down) / (2.0 * h);
    const double rel = std::abs(num - c.grad) / std::max({std::abs(num), std::abs(c.grad), 1e-12});
    r.entries.push_back({c.name, c.index, c.grad, num, rel});
    r.max_rel_error = std::max(r.max_rel_error, rel);
  }
  return r;
}

}  // namespace gradcheck
