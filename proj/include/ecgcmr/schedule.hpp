#pragma once

#include <span>
#include <string>
#include <vector>

namespace ecgcmr {

/// Learning-rate curve as a pure function of (fractional) epoch.
struct LrSchedule {
  enum class Kind { constant, warmup_constant, warmup_cosine };

  Kind kind = Kind::warmup_constant;
  double peak = 1e-4;
  double warmup_epochs = 0.0;
  double total_epochs = 1.0;  // cosine endpoint

  double at(double epoch) const;
  void validate() const;
};

std::string to_string(LrSchedule::Kind k);
LrSchedule::Kind lr_kind_from_string(const std::string& s);

/// Linear beta schedule and the closed-form tables of the forward and
/// posterior processes. Vectors are indexed by t - 1 for t in [1, T].
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> beta_tilde;    // posterior variance; 0 at t = 1
  std::vector<double> coef_z0;       // posterior mean weight on z0
  std::vector<double> coef_zt;       // posterior mean weight on z_t

  double beta_at(int t) const { return beta.at(static_cast<std::size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<std::size_t>(t - 1)); }
  /// alpha_bar_0 = 1 by convention.
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar.at(static_cast<std::size_t>(t - 1)); }
};

NoiseSchedule linear_beta_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.
std::vector<double> q_sample(std::span<const double> z0, int t, std::span<const double> eps,
                             const NoiseSchedule& s);

struct Posterior {
  std::vector<double> mean;
  double variance = 0.0;
};

/// Mean and variance of q(z_{t-1} | z_t, z0). At t = 1 the posterior collapses onto z0.
Posterior posterior_params(std::span<const double> z_t, std::span<const double> z0, int t, const NoiseSchedule& s);

/// Evenly spaced DDIM timesteps floor(i T / n) for i = 1..n, ascending; ends at T.
std::vector<int> ddim_timesteps(int steps, int n_steps);

struct DdimStep {
  double alpha_bar_t = 0.0;
  double alpha_bar_prev = 1.0;
  double sigma = 0.0;
  double dir = 0.0;  // weight on eps_hat: sqrt(1 - ab_prev - sigma^2)
};

/// Coefficients for moving from t to t_prev (t_prev = 0 lands on the clean sample).
DdimStep ddim_step(const NoiseSchedule& s, int t, int t_prev, double eta);

}  // namespace ecgcmr
