#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "ecgcmr/cohort.hpp"
#include "ecgcmr/types.hpp"

namespace ecgcmr {

using SampleRefs = std::vector<const cohort::PairedSample*>;

torch::Tensor ecg_to_tensor(const EcgRecord& rec);  // [12, L]
torch::Tensor clip_to_tensor(const CmrClip& clip);  // [T, H, W]
CmrClip tensor_to_clip(const torch::Tensor& t, View view);

/// Standardized covariates in the given order, [K].
torch::Tensor covariate_tensor(const cohort::CovariateVector& cov, const std::vector<std::string>& names,
                               const cohort::CovariateStats& stats);

/// Index batches for one epoch; the order is a pure function of (seed, epoch).
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    int epoch, bool shuffle = true);

void set_learning_rate(torch::optim::Optimizer& opt, double lr);

/// Throws NumericError naming `what` when the value is NaN or infinite.
void require_finite(const torch::Tensor& value, const std::string& what);

at::Generator make_generator(std::uint64_t seed);

/// Seed for the augmentation of sample `id` in `epoch`.
std::uint64_t augment_seed(std::uint64_t seed, int epoch, int id);

}  // namespace ecgcmr
