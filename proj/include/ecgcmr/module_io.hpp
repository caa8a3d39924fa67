#pragma once

#include <string>

#include <torch/torch.h>

#include "ecgcmr/checkpoint.hpp"

namespace ecgcmr {

/// Append every parameter and floating buffer of `module` under `prefix`.
void append_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix);

/// Copy arrays named `prefix + name` into the module. Any missing,
/// unexpected or differently shaped entry aborts the load with a FormatError
/// that lists the offending blocks; nothing is copied in that case.
void load_module(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix);

/// Adam moments of every parameter of `module`, stored as "<prefix>exp_avg/<name>" etc.
void append_adam_state(Checkpoint& ckpt, torch::optim::AdamW& opt, const torch::nn::Module& module,
                       const std::string& prefix);

/// SHA-256 over the names and values of the module's parameters.
std::string parameters_hash(const torch::nn::Module& module);

}  // namespace ecgcmr
