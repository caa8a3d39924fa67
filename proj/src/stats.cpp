#include "ecgcmr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "ecgcmr/error.hpp"
#include "ecgcmr/log.hpp"
#include "ecgcmr/random.hpp"

namespace ecgcmr::stats {

namespace {

void check_binary(std::span<const int> labels, std::size_t n, const char* what) {
  if (labels.size() != n) throw ConfigError(std::string(what) + ": scores and labels differ in length");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError(std::string(what) + ": labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == n) throw ConfigError(std::string(what) + ": both classes must be present");
}

// 1-based midranks.
std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = mid;
    i = j + 1;
  }
  return r;
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_binary(labels, scores.size(), "roc_auc");
  const auto r = midranks(scores);
  double rank_sum = 0.0;
  double n1 = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    if (labels[i] == 1) {
      rank_sum += r[i];
      n1 += 1.0;
    }
  }
  const double n0 = static_cast<double>(r.size()) - n1;
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
  Confusion c{tp, fp, tn, fn, {}, {}, {}, {}, {}};
  auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  c.accuracy = ratio(tp + tn, tp + fp + tn + fn);
  c.sensitivity = ratio(tp, tp + fn);
  c.specificity = ratio(tn, tn + fp);
  c.ppv = ratio(tp, tp + fp);
  c.npv = ratio(tn, tn + fn);
  return c;
}

Confusion confusion_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  if (!std::isfinite(threshold)) throw ConfigError("confusion_metrics: threshold must be finite");
  if (scores.size() != labels.size()) throw ConfigError("confusion_metrics: scores and labels differ in length");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = labels[i] != 0;
    if (pred && truth) ++tp;
    else if (pred) ++fp;
    else if (truth) ++fn;
    else ++tn;
  }
  return confusion_from_counts(tp, fp, tn, fn);
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("pearson_r: inputs differ in length");
  if (x.size() < 2) throw ConfigError("pearson_r: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw NumericError("pearson_r: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double z_for_confidence(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + confidence / 2.0);
}

Interval wilson_interval(std::size_t k, std::size_t n, double confidence) {
  if (n == 0 || k > n) throw ConfigError("wilson_interval: need 0 <= k <= n and n >= 1");
  const double z = z_for_confidence(confidence);
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  Interval out{center - half, center + half};
  if (k == 0) out.lo = 0.0;
  if (k == n) out.hi = 1.0;
  out.lo = std::max(0.0, out.lo);
  out.hi = std::min(1.0, out.hi);
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

BootstrapResult bootstrap_ci(const IndexStatistic& stat, std::size_t n, std::size_t resamples, std::uint64_t seed,
                             double confidence, unsigned threads) {
  if (resamples < 100) throw ConfigError("bootstrap_ci: need at least 100 resamples");
  if (n == 0) throw ConfigError("bootstrap_ci: empty data");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("confidence must lie in (0, 1)");
  constexpr std::size_t kMaxRedraws = 1000;
  std::vector<double> values(resamples);
  std::vector<std::size_t> redraws(resamples, 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(n);
    for (std::size_t b = begin; b < end; ++b) {
      Rng rng(derive_seed(seed, b));
      for (;;) {
        for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
        if (auto v = stat(idx)) {
          values[b] = *v;
          break;
        }
        if (++redraws[b] > kMaxRedraws) throw NumericError("bootstrap_ci: statistic undefined on every redraw");
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(resamples)));
  if (threads == 1) {
    work(0, resamples);
  } else {
    std::vector<std::jthread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (resamples + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t * chunk, std::min(resamples, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    pool.clear();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  BootstrapResult out;
  out.redraws = std::accumulate(redraws.begin(), redraws.end(), std::size_t{0});
  if (out.redraws > 0) log::info("bootstrap_ci: redrew ", out.redraws, " resamples with an undefined statistic");
  const double alpha = 1.0 - confidence;
  out.ci = {quantile(values, alpha / 2.0), quantile(values, 1.0 - alpha / 2.0)};
  return out;
}

BootstrapResult bootstrap_ci(const std::function<std::optional<double>(std::span<const double>)>& stat,
                             std::span<const double> data, std::size_t resamples, std::uint64_t seed,
                             double confidence) {
  std::vector<double> buf(data.size());
  return bootstrap_ci(
      [&](std::span<const std::size_t> idx) {
        for (std::size_t i = 0; i < idx.size(); ++i) buf[i] = data[idx[i]];
        return stat(buf);
      },
      data.size(), resamples, seed, confidence, 1);
}

DelongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels) {
  if (scores_a.size() != scores_b.size()) throw ConfigError("delong_test: score vectors differ in length");
  check_binary(labels, scores_a.size(), "delong_test");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());

  // Placement values: V10 over positives, V01 over negatives.
  auto placements = [&](std::span<const double> s, std::vector<double>& v10, std::vector<double>& v01) {
    v10.assign(pos.size(), 0.0);
    v01.assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      for (std::size_t j = 0; j < neg.size(); ++j) {
        const double x = s[pos[i]], y = s[neg[j]];
        const double psi = x > y ? 1.0 : (x == y ? 0.5 : 0.0);
        v10[i] += psi;
        v01[j] += psi;
      }
    }
    for (auto& v : v10) v /= n;
    for (auto& v : v01) v /= m;
  };
  std::vector<double> a10, a01, b10, b01;
  placements(scores_a, a10, a01);
  placements(scores_b, b10, b01);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto cov = [&](const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() < 2) return 0.0;
    const double mu = mean(u), mv = mean(v);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += (u[i] - mu) * (v[i] - mv);
    return s / static_cast<double>(u.size() - 1);
  };

  DelongResult r;
  r.auc_a = mean(a10);
  r.auc_b = mean(b10);
  r.var_a = cov(a10, a10) / m + cov(a01, a01) / n;
  r.var_b = cov(b10, b10) / m + cov(b01, b01) / n;
  r.cov_ab = cov(a10, b10) / m + cov(a01, b01) / n;

  if (std::equal(scores_a.begin(), scores_a.end(), scores_b.begin())) {
    r.z = 0.0;
    r.p = 1.0;
    return r;
  }
  const double var_diff = r.var_a + r.var_b - 2.0 * r.cov_ab;
  const double diff = r.auc_a - r.auc_b;
  if (!(var_diff > 1e-15)) {
    if (diff == 0.0) {
      r.z = 0.0;
      r.p = 1.0;
    } else {
      r.diagnostic = "variance of the AUC difference is zero";
      log::warn("delong_test: ", r.diagnostic);
    }
    return r;
  }
  r.z = diff / std::sqrt(var_diff);
  r.p = std::clamp(2.0 * (1.0 - normal_cdf(std::abs(r.z))), 0.0, 1.0);
  return r;
}

ZTest two_sided_z_test(double est_a, double est_b, double se_a, double se_b) {
  if (!(se_a > 0.0) || !(se_b > 0.0)) throw ConfigError("two_sided_z_test: standard errors must be positive");
  ZTest t;
  t.z = (est_a - est_b) / std::sqrt(se_a * se_a + se_b * se_b);
  t.p = std::clamp(2.0 * (1.0 - normal_cdf(std::abs(t.z))), 0.0, 1.0);
  return t;
}

std::vector<std::vector<int>> one_vs_rest(std::span<const int> labels, int num_classes) {
  if (num_classes < 2) throw ConfigError("one_vs_rest: need at least two classes");
  std::vector<std::vector<int>> out(static_cast<std::size_t>(num_classes), std::vector<int>(labels.size(), 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ConfigError("one_vs_rest: label out of range");
    out[static_cast<std::size_t>(labels[i])][i] = 1;
  }
  return out;
}

std::vector<int> nested_subset(std::span<const int> ids, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");
  std::vector<int> perm(ids.begin(), ids.end());
  std::sort(perm.begin(), perm.end());
  Rng rng(derive_seed(seed, "label_fraction"));
  rng.shuffle(perm);
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(perm.size()) - 1e-9));
  perm.resize(std::max<std::size_t>(1, std::min(k, perm.size())));
  return perm;
}

const MetricEntry* MetricsReport::find(const std::string& name) const {
  for (const auto& m : metrics) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

void MetricsReport::validate() const {
  for (const auto& m : metrics) {
    if (m.ci && !(m.ci->lo <= m.value && m.value <= m.ci->hi)) {
      throw NumericError("metric " + m.name + " lies outside its interval");
    }
  }
  for (const auto& t : tests) {
    if (t.p && !(*t.p >= 0.0 && *t.p <= 1.0)) throw NumericError("p-value of " + t.name + " outside [0, 1]");
  }
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["task_id"] = task_id;
  j["n"] = n;
  j["metrics"] = nlohmann::json::array();
  for (const auto& m : metrics) {
    nlohmann::json e = {{"name", m.name}, {"value", m.value}};
    if (m.ci) e["ci"] = {{"lo", m.ci->lo}, {"hi", m.ci->hi}, {"method", m.ci_method}};
    j["metrics"].push_back(e);
  }
  j["tests"] = nlohmann::json::array();
  for (const auto& t : tests) {
    nlohmann::json e = {{"name", t.name}, {"statistic", t.statistic}, {"method", t.method}};
    e["p"] = t.p ? nlohmann::json(*t.p) : nlohmann::json(nullptr);
    j["tests"].push_back(e);
  }
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.task_id = j.at("task_id").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  for (const auto& e : j.at("metrics")) {
    MetricEntry m;
    m.name = e.at("name").get<std::string>();
    m.value = e.at("value").get<double>();
    if (e.contains("ci")) {
      m.ci = Interval{e["ci"].at("lo").get<double>(), e["ci"].at("hi").get<double>()};
      m.ci_method = e["ci"].at("method").get<std::string>();
    }
    r.metrics.push_back(m);
  }
  for (const auto& e : j.at("tests")) {
    PairedTest t;
    t.name = e.at("name").get<std::string>();
    t.statistic = e.at("statistic").get<double>();
    t.method = e.at("method").get<std::string>();
    if (!e.at("p").is_null()) t.p = e.at("p").get<double>();
    r.tests.push_back(t);
  }
  return r;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "task_id,kind,name,value,ci_lo,ci_hi,method\n";
  for (const auto& m : metrics) {
    os << task_id << ",metric," << m.name << ',' << m.value << ',' << fmt_opt(m.ci ? std::optional(m.ci->lo) : std::nullopt)
       << ',' << fmt_opt(m.ci ? std::optional(m.ci->hi) : std::nullopt) << ',' << m.ci_method << '\n';
  }
  for (const auto& t : tests) {
    os << task_id << ",test," << t.name << ',' << t.statistic << ",," << fmt_opt(t.p) << ',' << t.method << '\n';
  }
  return os.str();
}

MetricsReport binary_report(const std::string& task_id, std::span<const double> scores, std::span<const int> labels,
                            double threshold, std::size_t resamples, std::uint64_t seed) {
  MetricsReport r;
  r.task_id = task_id;
  r.n = scores.size();
  const double auc = roc_auc(scores, labels);
  std::vector<double> s(scores.size());
  std::vector<int> y(labels.size());
  const auto boot = bootstrap_ci(
      [&](std::span<const std::size_t> idx) -> std::optional<double> {
        int pos = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          s[i] = scores[idx[i]];
          y[i] = labels[idx[i]];
          pos += y[i];
        }
        if (pos == 0 || pos == static_cast<int>(idx.size())) return std::nullopt;
        return roc_auc(s, y);
      },
      scores.size(), resamples, seed);
  r.metrics.push_back({"auc", auc, Interval{std::min(boot.ci.lo, auc), std::max(boot.ci.hi, auc)}, "bootstrap"});

  const auto c = confusion_metrics(scores, labels, threshold);
  auto add = [&](const std::string& name, const std::optional<double>& v, std::size_t k, std::size_t n) {
    if (!v) return;
    r.metrics.push_back({name, *v, wilson_interval(k, n), "wilson"});
  };
  add("accuracy", c.accuracy, c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  add("sensitivity", c.sensitivity, c.tp, c.tp + c.fn);
  add("specificity", c.specificity, c.tn, c.tn + c.fp);
  add("ppv", c.ppv, c.tp, c.tp + c.fp);
  add("npv", c.npv, c.tn, c.tn + c.fn);
  r.validate();
  return r;
}

MetricsReport regression_report(const std::string& task_id, std::span<const double> pred,
                                std::span<const double> truth, std::size_t targets,
                                const std::vector<std::string>& names, std::size_t resamples, std::uint64_t seed) {
  if (targets == 0 || pred.size() != truth.size() || pred.size() % targets != 0) {
    throw ConfigError("regression_report: prediction/truth shape mismatch");
  }
  MetricsReport r;
  r.task_id = task_id;
  r.n = pred.size() / targets;
  std::vector<double> x(r.n), y(r.n), bx(r.n), by(r.n);
  for (std::size_t t = 0; t < targets; ++t) {
    for (std::size_t i = 0; i < r.n; ++i) {
      x[i] = pred[i * targets + t];
      y[i] = truth[i * targets + t];
    }
    const std::string name = t < names.size() ? names[t] : "target_" + std::to_string(t);
    double mse = 0.0;
    for (std::size_t i = 0; i < r.n; ++i) mse += (x[i] - y[i]) * (x[i] - y[i]);
    mse /= static_cast<double>(r.n);
    const auto mse_ci = bootstrap_ci(
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
          double s = 0.0;
          for (auto i : idx) s += (x[i] - y[i]) * (x[i] - y[i]);
          return s / static_cast<double>(idx.size());
        },
        r.n, resamples, derive_seed(seed, 2 * t));
    r.metrics.push_back({"mse_" + name, mse, Interval{std::min(mse_ci.ci.lo, mse), std::max(mse_ci.ci.hi, mse)},
                         "bootstrap"});
    try {
      const double rr = pearson_r(x, y);
      const auto r_ci = bootstrap_ci(
          [&](std::span<const std::size_t> idx) -> std::optional<double> {
            for (std::size_t i = 0; i < idx.size(); ++i) {
              bx[i] = x[idx[i]];
              by[i] = y[idx[i]];
            }
            try {
              return pearson_r(bx, by);
            } catch (const NumericError&) {
              return std::nullopt;
            }
          },
          r.n, resamples, derive_seed(seed, 2 * t + 1));
      r.metrics.push_back({"r_" + name, rr, Interval{std::min(r_ci.ci.lo, rr), std::max(r_ci.ci.hi, rr)},
                           "bootstrap"});
    } catch (const NumericError&) {
      log::warn("regression_report: r undefined for constant ", name);
    }
  }
  r.validate();
  return r;
}

std::vector<EfficiencyRow> label_efficiency_curve(std::span<const double> fractions,
                                                  std::span<const std::uint64_t> seeds,
                                                  const std::function<double(double, std::uint64_t)>& trainer,
                                                  std::size_t resamples, std::uint64_t ci_seed) {
  if (seeds.empty()) throw ConfigError("label_efficiency_curve: no seeds");
  std::vector<EfficiencyRow> rows;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label_efficiency_curve: fraction outside (0, 1]");
    EfficiencyRow row;
    row.fraction = f;
    for (auto s : seeds) {
      try {
        row.per_seed.push_back(trainer(f, s));
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "label-efficiency cell (fraction " << f << ", seed " << s << ") failed: " << e.what();
        const auto* err = dynamic_cast<const Error*>(&e);
        throw Error(os.str(), err ? err->code() : ExitCode::failure);
      }
    }
    row.median = median(row.per_seed);
    const auto& v = row.per_seed;
    std::vector<double> buf(v.size());
    const auto boot = bootstrap_ci(
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
          for (std::size_t i = 0; i < idx.size(); ++i) buf[i] = v[idx[i]];
          return median(buf);
        },
        v.size(), std::max<std::size_t>(100, resamples), derive_seed(ci_seed, rows.size()));
    row.ci = {std::min(boot.ci.lo, row.median), std::max(boot.ci.hi, row.median)};
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string efficiency_csv(const std::vector<EfficiencyRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "fraction,median,ci_lo,ci_hi,per_seed\n";
  for (const auto& r : rows) {
    os << r.fraction << ',' << r.median << ',' << r.ci.lo << ',' << r.ci.hi << ',';
    for (std::size_t i = 0; i < r.per_seed.size(); ++i) os << (i ? ";" : "") << r.per_seed[i];
    os << '\n';
  }
  return os.str();
}

std::vector<Correlation> gen_vs_real_correlation(const std::vector<std::vector<double>>& real_readouts,
                                                 const std::vector<std::vector<double>>& generated_readouts,
                                                 std::size_t resamples, std::uint64_t seed) {
  if (real_readouts.size() != generated_readouts.size() || real_readouts.empty()) {
    throw ConfigError("gen_vs_real_correlation: real and generated sets must be paired and nonempty");
  }
  const std::size_t width = real_readouts.front().size();
  for (std::size_t i = 0; i < real_readouts.size(); ++i) {
    if (real_readouts[i].size() != width || generated_readouts[i].size() != width) {
      throw ConfigError("gen_vs_real_correlation: readout widths differ");
    }
  }
  const std::size_t n = real_readouts.size();
  std::vector<Correlation> out;
  std::vector<double> x(n), y(n), bx(n), by(n);
  for (std::size_t k = 0; k < width; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = real_readouts[i][k];
      y[i] = generated_readouts[i][k];
    }
    Correlation c;
    c.r = pearson_r(x, y);
    const auto boot = bootstrap_ci(
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
          for (std::size_t i = 0; i < idx.size(); ++i) {
            bx[i] = x[idx[i]];
            by[i] = y[idx[i]];
          }
          try {
            return pearson_r(bx, by);
          } catch (const NumericError&) {
            return std::nullopt;
          }
        },
        n, resamples, derive_seed(seed, k));
    c.ci = {std::min(boot.ci.lo, c.r), std::max(boot.ci.hi, c.r)};
    out.push_back(c);
  }
  return out;
}

}  // namespace ecgcmr::stats
