#pragma once

// Reference computations written from first principles, kept separate from
// the library so tests compare two independent routes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

inline double auc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

inline double kernel(double pos, double neg) { return pos > neg ? 1.0 : (pos == neg ? 0.5 : 0.0); }

struct DelongOracle {
  double auc_a, auc_b, var_a, var_b, cov;
};

// Structural components: placement values V10 (per positive) and V01 (per
// negative), then S = sample covariance of the placements.
inline DelongOracle delong_structural(const std::vector<double>& a, const std::vector<double>& b,
                                      const std::vector<int>& y) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] == 1 ? pos : neg).push_back(i);
  const double m = static_cast<double>(pos.size()), n = static_cast<double>(neg.size());
  auto placements = [&](const std::vector<double>& s, std::vector<double>& v10, std::vector<double>& v01) {
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i)
      for (std::size_t j = 0; j < neg.size(); ++j) {
        const double k = kernel(s[pos[i]], s[neg[j]]);
        v10[i] += k / n;
        v01[j] += k / m;
      }
  };
  std::vector<double> a10, a01, b10, b01;
  placements(a, a10, a01);
  placements(b, b10, b01);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto cov = [&](const std::vector<double>& u, const std::vector<double>& v) {
    const double mu = mean(u), mv = mean(v);
    double c = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) c += (u[i] - mu) * (v[i] - mv);
    return c / (static_cast<double>(u.size()) - 1.0);
  };
  DelongOracle r{};
  r.auc_a = mean(a10);
  r.auc_b = mean(b10);
  r.var_a = cov(a10, a10) / m + cov(a01, a01) / n;
  r.var_b = cov(b10, b10) / m + cov(b01, b01) / n;
  r.cov = cov(a10, b10) / m + cov(a01, b01) / n;
  return r;
}

// Roots of (1 + z^2/n) p^2 - (2 phat + z^2/n) p + phat^2 = 0.
inline std::pair<double, double> wilson_quadratic(std::size_t k, std::size_t n, double z) {
  const double nn = static_cast<double>(n), ph = static_cast<double>(k) / nn, z2 = z * z;
  const double qa = 1.0 + z2 / nn, qb = -(2.0 * ph + z2 / nn), qc = ph * ph;
  const double disc = std::sqrt(std::max(0.0, qb * qb - 4.0 * qa * qc));
  return {(-qb - disc) / (2.0 * qa), (-qb + disc) / (2.0 * qa)};
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Dense Gaussian elimination with partial pivoting.
inline std::vector<double> solve(std::vector<std::vector<double>> a, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
    std::swap(a[c], a[p]);
    std::swap(b[c], b[p]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= a[i][k] * x[k];
    x[i] = s / a[i][i];
  }
  return x;
}

// Weight of each window sample in the least-squares polynomial value at the
// center: row 0 of (A^T A)^{-1} A^T, column by column.
inline std::vector<double> savgol_center_weights(int window, int order) {
  const int half = window / 2;
  std::vector<std::vector<double>> ata(order + 1, std::vector<double>(order + 1, 0.0));
  for (int i = -half; i <= half; ++i)
    for (int r = 0; r <= order; ++r)
      for (int c = 0; c <= order; ++c) ata[r][c] += std::pow(i, r) * std::pow(i, c);
  std::vector<double> w;
  for (int j = -half; j <= half; ++j) {
    std::vector<double> rhs(order + 1);
    for (int r = 0; r <= order; ++r) rhs[r] = std::pow(j, r);
    w.push_back(solve(ata, rhs)[0]);
  }
  return w;
}

// Half-pixel-center bilinear sample of an h x w image at output pixel
// (oy, ox) of an out_h x out_w grid, edges clamped.
inline double bilinear_at(const std::vector<double>& img, int h, int w, int out_h, int out_w, int oy, int ox) {
  const double sy = std::clamp((oy + 0.5) * h / out_h - 0.5, 0.0, h - 1.0);
  const double sx = std::clamp((ox + 0.5) * w / out_w - 0.5, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * img[y0 * w + x0] + fx * img[y0 * w + x1]) +
         fy * ((1 - fx) * img[y1 * w + x0] + fx * img[y1 * w + x1]);
}

inline std::vector<double> linear_betas(int steps, double lo, double hi) {
  std::vector<double> b(steps);
  for (int i = 0; i < steps; ++i) b[i] = steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1.0);
  return b;
}

inline double alpha_bar(const std::vector<double>& betas, int t) {
  double p = 1.0;
  for (int i = 0; i < t; ++i) p *= 1.0 - betas[i];
  return p;
}

// Var(z_t | z_0) by composing single noising steps: v <- alpha v + beta.
inline double propagated_variance(const std::vector<double>& betas, int t) {
  double v = 0.0;
  for (int i = 0; i < t; ++i) v = (1.0 - betas[i]) * v + betas[i];
  return v;
}

struct Gaussian {
  double mean, var;
};

// q(z_{t-1} | z_t, z_0) by conditioning the scalar joint Gaussian:
// prior z_{t-1} ~ N(sqrt(ab_{t-1}) z0, 1 - ab_{t-1}), likelihood z_t ~ N(sqrt(a_t) z_{t-1}, b_t).
inline Gaussian bayes_posterior(const std::vector<double>& betas, int t, double z_t, double z0) {
  const double ab_prev = alpha_bar(betas, t - 1), beta = betas[t - 1], alpha = 1.0 - beta;
  const double prior_mean = std::sqrt(ab_prev) * z0, prior_var = 1.0 - ab_prev;
  if (prior_var == 0.0) return {prior_mean, 0.0};
  const double precision = 1.0 / prior_var + alpha / beta;
  const double var = 1.0 / precision;
  return {var * (prior_mean / prior_var + std::sqrt(alpha) * z_t / beta), var};
}

// Label rule evaluated independently of the generator.
inline int disease_class(double lvm, double rvedv, double hyp = 0.72, double dil = 0.75, double restr_lvm = 0.55,
                         double restr_rvedv = 0.30) {
  if (lvm >= hyp) return 2;
  if (rvedv >= dil) return 1;
  if (lvm >= restr_lvm && rvedv < restr_rvedv) return 3;
  return 0;
}

inline double softmax_ce_row(const std::vector<double>& logits, std::size_t target) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return -(logits[target] - mx - std::log(z));
}

// Symmetric InfoNCE on unit rows: mean over rows and columns of the
// softmax cross-entropy against the diagonal, averaged over directions.
inline double info_nce(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                       double tau) {
  const std::size_t n = a.size();
  if (n == 1) return 0.0;
  std::vector<std::vector<double>> s(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0;
      for (std::size_t k = 0; k < a[i].size(); ++k) d += a[i][k] * b[j][k];
      s[i][j] = d / tau;
    }
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rows += softmax_ce_row(s[i], i);
    std::vector<double> col(n);
    for (std::size_t j = 0; j < n; ++j) col[j] = s[j][i];
    cols += softmax_ce_row(col, i);
  }
  return 0.5 * (rows / n + cols / n);
}

}  // namespace oracle
