#include "ecgcmr/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ecgcmr/error.hpp"

namespace ecgcmr {

double LrSchedule::at(double epoch) const {
  if (epoch < 0.0) epoch = 0.0;
  if (kind == Kind::constant) return peak;
  if (warmup_epochs > 0.0 && epoch < warmup_epochs) return peak * epoch / warmup_epochs;
  if (kind == Kind::warmup_constant) return peak;
  const double span = total_epochs - warmup_epochs;
  if (span <= 0.0) return peak;
  const double progress = std::clamp((epoch - warmup_epochs) / span, 0.0, 1.0);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void LrSchedule::validate() const {
  if (!(peak >= 0.0) || !std::isfinite(peak)) throw ConfigError("learning rate must be finite and >= 0");
  if (warmup_epochs < 0.0) throw ConfigError("warm-up epochs must be >= 0");
  if (kind == Kind::warmup_cosine && !(total_epochs > warmup_epochs)) {
    throw ConfigError("cosine schedule needs total epochs beyond the warm-up");
  }
}

std::string to_string(LrSchedule::Kind k) {
  switch (k) {
    case LrSchedule::Kind::constant: return "constant";
    case LrSchedule::Kind::warmup_constant: return "warmup_constant";
    case LrSchedule::Kind::warmup_cosine: return "warmup_cosine";
  }
  return "?";
}

LrSchedule::Kind lr_kind_from_string(const std::string& s) {
  if (s == "constant") return LrSchedule::Kind::constant;
  if (s == "warmup_constant") return LrSchedule::Kind::warmup_constant;
  if (s == "warmup_cosine") return LrSchedule::Kind::warmup_cosine;
  throw ConfigError("unknown learning-rate schedule '" + s + "'");
}

NoiseSchedule linear_beta_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("noise schedule needs T >= 2");
  if (!(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0)) {
    throw ConfigError("noise schedule needs 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  const auto n = static_cast<std::size_t>(steps);
  s.beta.resize(n);
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  s.beta_tilde.resize(n);
  s.coef_z0.resize(n);
  s.coef_zt.resize(n);
  double prod = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    s.beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(n - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double ab = s.alpha_bar[i];
    const double ab_prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
    s.beta_tilde[i] = (1.0 - ab_prev) / (1.0 - ab) * s.beta[i];
    s.coef_z0[i] = std::sqrt(ab_prev) * s.beta[i] / (1.0 - ab);
    s.coef_zt[i] = std::sqrt(s.alpha[i]) * (1.0 - ab_prev) / (1.0 - ab);
  }
  return s;
}

namespace {
void check_step(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.steps) throw ConfigError("timestep " + std::to_string(t) + " outside [1, T]");
}
}  // namespace

std::vector<double> q_sample(std::span<const double> z0, int t, std::span<const double> eps,
                             const NoiseSchedule& s) {
  check_step(s, t);
  if (z0.size() != eps.size()) throw ConfigError("q_sample: noise and latent differ in shape");
  const double ab = s.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Posterior posterior_params(std::span<const double> z_t, std::span<const double> z0, int t, const NoiseSchedule& s) {
  check_step(s, t);
  if (z0.size() != z_t.size()) throw ConfigError("posterior_params: latents differ in shape");
  Posterior p;
  p.mean.resize(z0.size());
  if (t == 1) {
    std::copy(z0.begin(), z0.end(), p.mean.begin());
    return p;
  }
  const auto i = static_cast<std::size_t>(t - 1);
  for (std::size_t k = 0; k < z0.size(); ++k) p.mean[k] = s.coef_z0[i] * z0[k] + s.coef_zt[i] * z_t[k];
  p.variance = s.beta_tilde[i];
  return p;
}

std::vector<int> ddim_timesteps(int steps, int n_steps) {
  if (n_steps < 1 || n_steps > steps) throw ConfigError("DDIM needs 1 <= n_steps <= T");
  std::vector<int> ts(static_cast<std::size_t>(n_steps));
  for (int i = 1; i <= n_steps; ++i) {
    ts[static_cast<std::size_t>(i - 1)] =
        static_cast<int>((static_cast<long long>(i) * steps) / n_steps);
  }
  return ts;
}

DdimStep ddim_step(const NoiseSchedule& s, int t, int t_prev, double eta) {
  check_step(s, t);
  if (t_prev < 0 || t_prev >= t) throw ConfigError("DDIM step must move to an earlier timestep");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("DDIM eta must lie in [0, 1]");
  DdimStep d;
  d.alpha_bar_t = s.alpha_bar_at(t);
  d.alpha_bar_prev = s.alpha_bar_at(t_prev);
  const double var = (1.0 - d.alpha_bar_prev) / (1.0 - d.alpha_bar_t) * (1.0 - d.alpha_bar_t / d.alpha_bar_prev);
  d.sigma = eta * std::sqrt(std::max(0.0, var));
  d.dir = std::sqrt(std::max(0.0, 1.0 - d.alpha_bar_prev - d.sigma * d.sigma));
  return d;
}

}  // namespace ecgcmr
