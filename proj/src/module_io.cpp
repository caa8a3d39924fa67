#include "ecgcmr/module_io.hpp"

#include <map>
#include <set>
#include <sstream>

#include "ecgcmr/error.hpp"
#include "ecgcmr/hash.hpp"

namespace ecgcmr {

namespace {

NamedArray to_array(const std::string& name, const torch::Tensor& t) {
  NamedArray a;
  a.name = name;
  a.shape.assign(t.sizes().begin(), t.sizes().end());
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  a.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return a;
}

std::string shape_str(c10::IntArrayRef s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::string block_of(const std::string& name) {
  const auto dot = name.find('.');
  return dot == std::string::npos ? name : name.substr(0, dot);
}

std::map<std::string, torch::Tensor> state_of(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value();
  for (const auto& b : module.named_buffers(true)) {
    if (b.value().is_floating_point()) out[b.key()] = b.value();
  }
  return out;
}

}  // namespace

void append_module(Checkpoint& ckpt, const torch::nn::Module& module, const std::string& prefix) {
  for (const auto& [name, t] : state_of(module)) ckpt.arrays.push_back(to_array(prefix + name, t));
}

void load_module(torch::nn::Module& module, const Checkpoint& ckpt, const std::string& prefix) {
  const auto state = state_of(module);
  std::map<std::string, const NamedArray*> stored;
  for (const auto& a : ckpt.arrays) {
    if (a.name.rfind(prefix, 0) == 0 && a.name.find('/', prefix.size()) == std::string::npos) {
      stored[a.name.substr(prefix.size())] = &a;
    }
  }
  std::vector<std::string> problems;
  std::set<std::string> blocks;
  for (const auto& [name, t] : state) {
    auto it = stored.find(name);
    if (it == stored.end()) {
      problems.push_back("missing " + name + " " + shape_str(t.sizes()));
      blocks.insert(block_of(name));
      continue;
    }
    if (c10::IntArrayRef(it->second->shape) != t.sizes()) {
      problems.push_back("shape " + name + ": checkpoint " + shape_str(it->second->shape) + " vs model " +
                         shape_str(t.sizes()));
      blocks.insert(block_of(name));
    }
  }
  for (const auto& [name, a] : stored) {
    if (!state.count(name)) {
      problems.push_back("unexpected " + name + " " + shape_str(a->shape));
      blocks.insert(block_of(name));
    }
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "checkpoint (" << ckpt.kind << ") does not fit the model; mismatched blocks:";
    for (const auto& b : blocks) os << ' ' << b;
    for (const auto& p : problems) os << "\n  " << p;
    throw FormatError(os.str());
  }
  torch::NoGradGuard guard;
  for (const auto& [name, t] : state) {
    const auto* a = stored.at(name);
    auto src = torch::from_blob(const_cast<float*>(a->data.data()), t.sizes(), torch::kFloat32);
    t.copy_(src.to(t.scalar_type()));
  }
}

void append_adam_state(Checkpoint& ckpt, torch::optim::AdamW& opt, const torch::nn::Module& module,
                       const std::string& prefix) {
  auto& states = opt.state();
  std::int64_t step = 0;
  for (const auto& p : module.named_parameters(true)) {
    auto it = states.find(p.value().unsafeGetTensorImpl());
    if (it == states.end()) continue;
    auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
    ckpt.arrays.push_back(to_array(prefix + "exp_avg/" + p.key(), s.exp_avg()));
    ckpt.arrays.push_back(to_array(prefix + "exp_avg_sq/" + p.key(), s.exp_avg_sq()));
    step = std::max<std::int64_t>(step, s.step());
  }
  ckpt.meta["optimizer"] = {{"kind", "adamw"}, {"step", step}, {"prefix", prefix}};
}

std::string parameters_hash(const torch::nn::Module& module) {
  Sha256 h;
  for (const auto& p : module.named_parameters(true)) {
    auto c = p.value().detach().to(torch::kCPU).contiguous();
    h.update(p.key());
    h.update(std::string(c.dtype().name()));
    h.update(std::span<const std::uint8_t>(static_cast<const std::uint8_t*>(c.data_ptr()), c.nbytes()));
  }
  return to_hex(h.finish());
}

}  // namespace ecgcmr
