#include "ecgcmr/batching.hpp"

#include <cmath>
#include <numeric>

#include <ATen/CPUGeneratorImpl.h>

#include "ecgcmr/error.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr {

torch::Tensor ecg_to_tensor(const EcgRecord& rec) {
  auto t = torch::empty({kLeads, static_cast<int64_t>(rec.length)}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < rec.samples.size(); ++i) p[i] = static_cast<float>(rec.samples[i]);
  return t;
}

torch::Tensor clip_to_tensor(const CmrClip& clip) {
  return torch::from_blob(const_cast<float*>(clip.pixels.data()), {clip.frames, clip.height, clip.width},
                          torch::kFloat32)
      .clone();
}

CmrClip tensor_to_clip(const torch::Tensor& t, View view) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  CmrClip clip(static_cast<int>(c.size(0)), static_cast<int>(c.size(1)), static_cast<int>(c.size(2)), view);
  std::copy(c.data_ptr<float>(), c.data_ptr<float>() + c.numel(), clip.pixels.begin());
  return clip;
}

torch::Tensor covariate_tensor(const cohort::CovariateVector& cov, const std::vector<std::string>& names,
                               const cohort::CovariateStats& stats) {
  auto t = torch::empty({static_cast<int64_t>(names.size())}, torch::kFloat32);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto v = cov.get(names[i]);
    if (!v) throw ConfigError("missing required covariate '" + names[i] + "'");
    double mean = 0.0, sd = 1.0;
    for (std::size_t k = 0; k < stats.names.size(); ++k) {
      if (stats.names[k] == names[i]) {
        mean = stats.mean[k];
        sd = stats.stddev[k] > 0.0 ? stats.stddev[k] : 1.0;
      }
    }
    t[static_cast<int64_t>(i)] = static_cast<float>((*v - mean) / sd);
  }
  return t;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch, bool shuffle) {
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(derive_seed(derive_seed(seed, "batches"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

void set_learning_rate(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) group.options().set_lr(lr);
}

void require_finite(const torch::Tensor& value, const std::string& what) {
  if (!torch::isfinite(value).all().item<bool>()) {
    throw NumericError(what + " is not finite (training diverged)");
  }
}

at::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

std::uint64_t augment_seed(std::uint64_t seed, int epoch, int id) {
  return derive_seed(derive_seed(derive_seed(seed, "augment"), static_cast<std::uint64_t>(epoch)),
                     static_cast<std::uint64_t>(id));
}

}  // namespace ecgcmr
