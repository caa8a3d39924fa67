#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace ecgcmr::stats {

/// Mann-Whitney AUC; ties count one half. Labels are 0/1.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  // Absent when the denominator is zero.
  std::optional<double> accuracy, sensitivity, specificity, ppv, npv;
};

Confusion confusion_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
/// Positive prediction when score >= threshold.
Confusion confusion_metrics(std::span<const double> scores, std::span<const int> labels, double threshold);

double pearson_r(std::span<const double> x, std::span<const double> y);

double normal_cdf(double z);
/// Two-sided critical value, e.g. 1.959964 at 0.95.
double z_for_confidence(double confidence);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval wilson_interval(std::size_t k, std::size_t n, double confidence = 0.95);

struct BootstrapResult {
  Interval ci;
  std::size_t redraws = 0;  // resamples on which the statistic was undefined
};

/// Statistic over a resample given as indices into the original data;
/// nullopt marks it undefined for that resample.
using IndexStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Percentile bootstrap. Resample b draws from its own substream of `seed`,
/// so the interval does not depend on `threads`.
BootstrapResult bootstrap_ci(const IndexStatistic& stat, std::size_t n, std::size_t resamples, std::uint64_t seed,
                             double confidence = 0.95, unsigned threads = 1);

BootstrapResult bootstrap_ci(const std::function<std::optional<double>(std::span<const double>)>& stat,
                             std::span<const double> data, std::size_t resamples, std::uint64_t seed,
                             double confidence = 0.95);

/// Linear-interpolation quantile of unsorted values.
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double var_a = 0.0;
  double var_b = 0.0;
  double cov_ab = 0.0;
  double z = 0.0;
  std::optional<double> p;  // absent when the variance of the difference degenerates
  std::string diagnostic;
};

DelongResult delong_test(std::span<const double> scores_a, std::span<const double> scores_b,
                         std::span<const int> labels);

struct ZTest {
  double z = 0.0;
  double p = 1.0;
};

ZTest two_sided_z_test(double est_a, double est_b, double se_a, double se_b);

/// K indicator vectors, one per class.
std::vector<std::vector<int>> one_vs_rest(std::span<const int> labels, int num_classes);

/// First ceil(fraction * n) entries of a seeded permutation of `ids`, so
/// subsets for the same seed are nested across fractions.
std::vector<int> nested_subset(std::span<const int> ids, double fraction, std::uint64_t seed);

struct MetricEntry {
  std::string name;
  double value = 0.0;
  std::optional<Interval> ci;
  std::string ci_method;  // "wilson" | "bootstrap"
};

struct PairedTest {
  std::string name;
  double statistic = 0.0;
  std::optional<double> p;
  std::string method;  // "delong" | "z_test"
};

struct MetricsReport {
  std::string task_id;
  std::size_t n = 0;
  std::vector<MetricEntry> metrics;
  std::vector<PairedTest> tests;

  const MetricEntry* find(const std::string& name) const;
  void validate() const;
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

/// Binary classification report: AUC (bootstrap CI) plus the confusion
/// ratios (Wilson CIs) at `threshold`.
MetricsReport binary_report(const std::string& task_id, std::span<const double> scores, std::span<const int> labels,
                            double threshold, std::size_t resamples, std::uint64_t seed);

/// Regression report: per-target Pearson r and MSE with bootstrap CIs.
/// `pred` and `truth` are row-major n x targets.
MetricsReport regression_report(const std::string& task_id, std::span<const double> pred,
                                std::span<const double> truth, std::size_t targets,
                                const std::vector<std::string>& names, std::size_t resamples, std::uint64_t seed);

struct EfficiencyRow {
  double fraction = 0.0;
  std::vector<double> per_seed;
  double median = 0.0;
  Interval ci;
};

/// Runs `trainer(fraction, seed)` for every cell and aggregates the median
/// across seeds with a bootstrap CI. Failures are rethrown naming the cell.
std::vector<EfficiencyRow> label_efficiency_curve(std::span<const double> fractions,
                                                  std::span<const std::uint64_t> seeds,
                                                  const std::function<double(double, std::uint64_t)>& trainer,
                                                  std::size_t resamples = 1000, std::uint64_t ci_seed = 0);

std::string efficiency_csv(const std::vector<EfficiencyRow>& rows);

struct Correlation {
  double r = 0.0;
  Interval ci;
};

/// Pearson r between readouts of real and generated items, per readout
/// dimension, with bootstrap CIs over subjects. Both inputs are n rows of
/// equal width.
std::vector<Correlation> gen_vs_real_correlation(const std::vector<std::vector<double>>& real_readouts,
                                                 const std::vector<std::vector<double>>& generated_readouts,
                                                 std::size_t resamples, std::uint64_t seed);

}  // namespace ecgcmr::stats
