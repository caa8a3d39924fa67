#include "criteria.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <torch/torch.h>

#include "ecgcmr/alignment.hpp"
#include "ecgcmr/cmr.hpp"
#include "ecgcmr/cohort.hpp"
#include "ecgcmr/diffusion.hpp"
#include "ecgcmr/downstream.hpp"
#include "ecgcmr/ecg.hpp"
#include "ecgcmr/module_io.hpp"
#include "ecgcmr/pipeline.hpp"
#include "ecgcmr/schedule.hpp"
#include "ecgcmr/ssl.hpp"
#include "ecgcmr/stats.hpp"
#include "ecgcmr/wavelet.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace ecgcmr;

namespace criteria {
namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Snapshot {
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  explicit Snapshot(torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) tensors.emplace_back(p.key(), p.value().detach().clone());
    for (const auto& b : m.named_buffers()) tensors.emplace_back(b.key(), b.value().detach().clone());
  }

  // Names of tensors whose bytes changed.
  std::vector<std::string> changed(torch::nn::Module& m) const {
    std::map<std::string, torch::Tensor> now;
    for (const auto& p : m.named_parameters()) now[p.key()] = p.value().detach().contiguous();
    for (const auto& b : m.named_buffers()) now[b.key()] = b.value().detach().contiguous();
    std::vector<std::string> out;
    for (const auto& [name, before] : tensors) {
      auto it = now.find(name);
      if (it == now.end() || it->second.sizes() != before.sizes() ||
          std::memcmp(it->second.data_ptr(), before.contiguous().data_ptr(), before.nbytes()) != 0) {
        out.push_back(name);
      }
    }
    return out;
  }
};

bool bytes_equal(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.contiguous(), y = b.contiguous();
  return x.sizes() == y.sizes() && x.scalar_type() == y.scalar_type() &&
         std::memcmp(x.data_ptr(), y.data_ptr(), x.nbytes()) == 0;
}

}  // namespace

Outcome diffusion_algebra() {
  const auto t0 = Clock::now();
  double ab_err = 0.0, var_err = 0.0, mean_err = 0.0, post_var_err = 0.0, qs_err = 0.0;
  bool monotone = true;
  const std::vector<double> z_grid = {-2.5, -0.3, 0.4, 1.7};
  for (int steps : {10, 1000}) {
    const auto s = linear_beta_schedule(steps);
    const auto betas = oracle::linear_betas(steps, 1e-4, 0.02);
    double prev = 1.0;
    for (int t = 1; t <= steps; ++t) {
      const double ab = s.alpha_bar_at(t);
      monotone = monotone && ab < prev && ab > 0.0;
      prev = ab;
      const double ref = oracle::alpha_bar(betas, t);
      ab_err = std::max(ab_err, std::abs(ab - ref) / ref);
      var_err = std::max(var_err, std::abs(oracle::propagated_variance(betas, t) - (1.0 - ab)));
      const std::vector<double> zero = {0.0}, one = {1.0};
      const double scale = q_sample(zero, t, one, s)[0];
      qs_err = std::max(qs_err, std::abs(scale * scale - (1.0 - ab)));
      if (steps == 1000 && t % 7 != 1 && t != steps) continue;
      for (double z0 : z_grid)
        for (double zt : z_grid) {
          const std::vector<double> a = {zt}, b = {z0};
          const auto lib = posterior_params(a, b, t, s);
          const auto ref_post = oracle::bayes_posterior(betas, t, zt, z0);
          mean_err = std::max(mean_err, std::abs(lib.mean[0] - ref_post.mean));
          post_var_err = std::max(post_var_err, std::abs(lib.variance - ref_post.var));
        }
    }
  }
  Outcome o;
  o.seconds = since(t0);
  std::ostringstream d;
  d << "monotone=" << monotone << " ab_rel=" << ab_err << " var_identity=" << var_err << " q_sample_var=" << qs_err
    << " posterior_mean=" << mean_err << " posterior_var=" << post_var_err;
  o.detail = d.str();
  o.pass = monotone && ab_err < 1e-12 && var_err < 1e-12 && qs_err < 1e-12 && mean_err < 1e-10 &&
           post_var_err < 1e-10 && o.seconds < 1.0;
  return o;
}

Outcome loss_gradients() {
  const auto t0 = Clock::now();
  torch::manual_seed(0);
  const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
  std::ostringstream d;
  bool ok = true;
  auto record = [&](const std::string& what, const gradcheck::Report& r) {
    d << what << ": n=" << r.entries.size() << " max_rel=" << r.max_rel_error << "; ";
    ok = ok && r.ok(1e-3);
  };

  {
    nn::UNetConfig uc;
    uc.latent_channels = 2;
    uc.latent_size = 4;
    uc.frames = 2;
    uc.width = 8;
    uc.heads = 2;
    uc.context_dim = 8;
    nn::CondUNet unet(uc);
    unet->to(torch::kFloat64);
    const auto s = linear_beta_schedule(100);
    auto z0 = torch::randn({2, 2, 2, 4, 4}, f64);
    auto ctx = torch::randn({2, 3, 8}, f64);
    const auto draw = diffusion::draw_noise(z0, s.steps, 5);
    auto eps_fn = diffusion::predictor(unet);
    record("ldm_loss", gradcheck::check(*unet, [&] { return diffusion::ldm_loss(eps_fn, z0, ctx, draw, s); }, 16, 1));
  }
  {
    ssl::SslConfig sc;
    for (auto* v : {&sc.la, &sc.sa}) {
      v->image_size = 16;
      v->in_channels = 2;
      v->patch_size = 4;
      v->window_size = 2;
      v->depths = {1, 1};
      v->heads = {2, 2};
      v->dims = {8, 16};
    }
    sc.mask_ratio = 0.5;
    sc.proj_dim = 8;
    sc.decoder_hidden = 16;
    sc.tau = 0.5;
    ssl::SslModel model(sc);
    model->to(torch::kFloat64);
    auto la = torch::randn({3, 2, 16, 16}, f64), sa = torch::randn({3, 2, 16, 16}, f64);
    std::vector<nn::MaskPlan> pl, ps;
    for (int b = 0; b < 3; ++b) {
      pl.push_back(nn::make_mask_plan(sc.la.total_units(), sc.mask_ratio, 10 + b));
      ps.push_back(nn::make_mask_plan(sc.sa.total_units(), sc.mask_ratio, 20 + b));
    }
    record("ssl_loss", gradcheck::check(*model, [&] { return ssl::ssl_loss(model, la, sa, pl, ps).total; }, 16, 2));
  }
  nn::EcgVitConfig vit;
  vit.length = 40;
  vit.patch_width = 10;
  vit.dim = 8;
  vit.depth = 1;
  vit.heads = 2;
  {
    align::AlignConfig ac;
    ac.vit = vit;
    ac.proj_dim = 8;
    ac.tau = 0.2;
    align::AlignModel model(ac, 16, 12);
    model->to(torch::kFloat64);
    auto ecg = torch::randn({4, 12, 40}, f64);
    auto fla = torch::randn({4, 16}, f64), fsa = torch::randn({4, 12}, f64);
    record("align_loss", gradcheck::check(*model, [&] {
      return align::align_loss({model->embed_ecg(ecg), model->embed_cmr(View::long_axis, fla),
                                model->embed_cmr(View::short_axis, fsa), ac.tau})
          .total;
    }, 16, 3));
  }
  for (auto kind : {downstream::TaskKind::binary, downstream::TaskKind::multiclass, downstream::TaskKind::regression}) {
    downstream::TaskSpec task;
    task.kind = kind;
    task.covariates = {"age", "sex"};
    task.phenotypes = {0, 3};
    downstream::DownstreamModel model(vit, task, 4);
    model->to(torch::kFloat64);
    {
      torch::NoGradGuard ng;
      model->film()->last()->weight.normal_(0.0, 0.2);
      model->film()->last()->bias.normal_(0.0, 0.2);
    }
    auto ecg = torch::randn({6, 12, 40}, f64), cov = torch::randn({6, 2}, f64);
    torch::Tensor targets;
    if (kind == downstream::TaskKind::binary) targets = torch::tensor({0, 1, 1, 0, 1, 0}, f64);
    if (kind == downstream::TaskKind::multiclass) targets = torch::tensor({0, 3, 1, 2, 1, 0}, torch::kLong);
    if (kind == downstream::TaskKind::regression) targets = torch::randn({6, 2}, f64);
    record("downstream_" + downstream::to_string(kind), gradcheck::check(*model, [&] {
      return downstream::task_loss(kind, model->forward(ecg, cov).logits, targets);
    }, 16, 4));
  }
  Outcome o;
  o.seconds = since(t0);
  o.detail = d.str();
  o.pass = ok && o.seconds < 120.0;
  return o;
}

Outcome ddim_sampler() {
  const auto t0 = Clock::now();
  std::ostringstream d;

  torch::manual_seed(1);
  nn::UNetConfig uc;
  uc.latent_channels = 2;
  uc.latent_size = 4;
  uc.frames = 2;
  uc.width = 8;
  uc.heads = 2;
  uc.context_dim = 8;
  nn::CondUNet unet(uc);
  unet->eval();
  const auto sched = linear_beta_schedule(50);
  auto ctx = torch::randn({2, 3, 8});
  torch::Tensor first, second;
  {
    torch::NoGradGuard ng;
    first = diffusion::ddim_sample_latent(diffusion::predictor(unet), {2, 2, 2, 4, 4}, ctx, sched, 10, 0.0, 7);
    second = diffusion::ddim_sample_latent(diffusion::predictor(unet), {2, 2, 2, 4, 4}, ctx, sched, 10, 0.0, 7);
  }
  const bool deterministic = bytes_equal(first, second);
  d << "eta0_byte_equal=" << deterministic;

  const auto big = linear_beta_schedule(1000);
  auto z0 = torch::randn({256}, torch::kFloat64), eps = torch::randn({256}, torch::kFloat64);
  double inv_err = 0.0;
  for (int t : {1, 10, 250, 500, 999, 1000}) {
    auto tt = torch::full({256}, t, torch::kLong);
    auto zt = diffusion::q_sample(z0, tt, eps, big);
    auto back = diffusion::predict_z0(zt, eps, big.alpha_bar_at(t));
    inv_err = std::max(inv_err, (back - z0).abs().max().item<double>());
  }
  d << " z0_inversion=" << inv_err;

  // 1-D latents with an exact noise oracle for a point-mass z0 = c.
  const int steps = 10;
  const int64_t n = 10000;
  const double c = 0.8;
  const auto s = linear_beta_schedule(steps);
  const auto betas = oracle::linear_betas(steps, 1e-4, 0.02);
  std::vector<std::pair<int, torch::Tensor>> visits;
  diffusion::EpsPredictor eps_oracle = [&](const torch::Tensor& z_t, const torch::Tensor& t, const torch::Tensor&) {
    const int tv = static_cast<int>(t[0].item<int64_t>());
    visits.emplace_back(tv, z_t.clone());
    const double ab = oracle::alpha_bar(betas, tv);
    return (z_t - std::sqrt(ab) * c) / std::sqrt(1.0 - ab);
  };
  auto final_z = diffusion::ddim_sample_latent(eps_oracle, {n, 1}, torch::zeros({n, 1, 1}, torch::kFloat64), s,
                                               steps, 1.0, 11, torch::kFloat64);
  visits.emplace_back(0, final_z);
  bool visits_ok = static_cast<int>(visits.size()) == steps + 1;
  for (int k = 0; visits_ok && k <= steps; ++k) visits_ok = visits[k].first == steps - k;

  const double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
  const double se_var = std::sqrt(2.0 / (n - 1.0));
  double worst_mean = 0.0, worst_var = 0.0, final_err = 0.0;
  double worst_marg_mean = 0.0, worst_marg_var = 0.0;
  if (visits_ok) {
    // Transition residuals against the Bayes posterior.
    for (int k = 0; k < steps; ++k) {
      const int t = visits[k].first;
      auto zt = visits[k].second.reshape({-1});
      auto next = visits[k + 1].second.reshape({-1});
      auto zt_a = zt.accessor<double, 1>();
      auto nx_a = next.accessor<double, 1>();
      if (t == 1) {
        for (int64_t i = 0; i < n; ++i) final_err = std::max(final_err, std::abs(nx_a[i] - c));
        continue;
      }
      double sum = 0.0, sq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const auto post = oracle::bayes_posterior(betas, t, zt_a[i], c);
        const double r = (nx_a[i] - post.mean) / std::sqrt(post.var);
        sum += r;
        sq += r * r;
      }
      const double m = sum / n, v = (sq - n * m * m) / (n - 1.0);
      worst_mean = std::max(worst_mean, std::abs(m) / se_mean);
      worst_var = std::max(worst_var, std::abs(v - 1.0) / se_var);
    }
    // Marginals against an independently simulated ancestral chain.
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> nd;
    std::vector<double> chain(n);
    for (auto& v : chain) v = nd(rng);
    for (int k = 0; k <= steps; ++k) {
      const int t = steps - k;
      auto z = visits[k].second.reshape({-1});
      auto za = z.accessor<double, 1>();
      double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        m1 += za[i];
        m2 += chain[i];
      }
      m1 /= n;
      m2 /= n;
      for (int64_t i = 0; i < n; ++i) {
        v1 += (za[i] - m1) * (za[i] - m1);
        v2 += (chain[i] - m2) * (chain[i] - m2);
      }
      v1 /= n - 1.0;
      v2 /= n - 1.0;
      if (v1 + v2 > 0.0) {
        worst_marg_mean = std::max(worst_marg_mean, std::abs(m1 - m2) / std::sqrt((v1 + v2) / n));
        worst_marg_var = std::max(worst_marg_var, std::abs(v1 - v2) / std::sqrt(2.0 * (v1 * v1 + v2 * v2) / (n - 1.0)));
      } else {
        final_err = std::max(final_err, std::abs(m1 - m2));
      }
      if (t == 0) break;
      for (auto& v : chain) {
        const auto post = oracle::bayes_posterior(betas, t, v, c);
        v = post.mean + std::sqrt(post.var) * nd(rng);
      }
    }
  }
  d << " visits_ok=" << visits_ok << " transition_mean_se=" << worst_mean << " transition_var_se=" << worst_var
    << " marginal_mean_se=" << worst_marg_mean << " marginal_var_se=" << worst_marg_var << " final=" << final_err;

  Outcome o;
  o.seconds = since(t0);
  o.detail = d.str();
  o.pass = deterministic && inv_err < 1e-6 && visits_ok && worst_mean < 3.0 && worst_var < 3.0 &&
           worst_marg_mean < 3.0 && worst_marg_var < 3.0 && final_err < 1e-12 && o.seconds < 120.0;
  return o;
}

Outcome statistics_oracles() {
  const auto t0 = Clock::now();
  std::ostringstream d;

  // Every label vector with both classes against every score pattern over {0, 1, 2}.
  double auc_err = 0.0;
  std::size_t auc_cases = 0;
  for (int n = 2; n <= 8; ++n) {
    int patterns = 1;
    for (int i = 0; i < n; ++i) patterns *= 3;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int lm = 1; lm < (1 << n) - 1; ++lm) {
      for (int i = 0; i < n; ++i) y[i] = (lm >> i) & 1;
      for (int p = 0; p < patterns; ++p) {
        int q = p;
        for (int i = 0; i < n; ++i, q /= 3) s[i] = q % 3;
        auc_err = std::max(auc_err, std::abs(stats::roc_auc(s, y) - oracle::auc_pairs(s, y)));
        ++auc_cases;
      }
    }
  }
  d << "auc_cases=" << auc_cases << " auc_err=" << auc_err;

  double delong_err = 0.0;
  {
    const std::vector<double> a = {0.12, 0.55, 0.31, 0.80, 0.55, 0.67, 0.05, 0.91};
    const std::vector<double> b = {0.40, 0.22, 0.35, 0.70, 0.61, 0.58, 0.10, 0.88};
    const std::vector<int> y = {0, 1, 0, 1, 0, 1, 0, 1};
    std::vector<std::tuple<std::vector<double>, std::vector<double>, std::vector<int>>> cases = {{a, b, y}};
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    for (int k = 0; k < 200; ++k) {
      const int n = 6 + k % 40;
      std::vector<double> sa(n), sb(n);
      std::vector<int> yy(n);
      for (int i = 0; i < n; ++i) {
        yy[i] = i < 2 ? i : static_cast<int>(rng() % 2);
        sa[i] = std::round((nd(rng) + yy[i]) * 4.0) / 4.0;
        sb[i] = 0.5 * sa[i] + 0.5 * nd(rng);
      }
      cases.emplace_back(sa, sb, yy);
    }
    for (const auto& [sa, sb, yy] : cases) {
      const auto r = stats::delong_test(sa, sb, yy);
      const auto o = oracle::delong_structural(sa, sb, yy);
      for (double e : {r.auc_a - o.auc_a, r.auc_b - o.auc_b, r.var_a - o.var_a, r.var_b - o.var_b, r.cov_ab - o.cov})
        delong_err = std::max(delong_err, std::abs(e));
    }
  }
  d << " delong_err=" << delong_err;

  double wilson_err = 0.0;
  const std::vector<std::pair<double, double>> levels = {
      {0.90, 1.6448536269514722}, {0.95, 1.959963984540054}, {0.99, 2.5758293035489004}};
  for (const auto& [conf, z] : levels)
    for (std::size_t n = 1; n <= 60; ++n)
      for (std::size_t k = 0; k <= n; ++k) {
        const auto lib = stats::wilson_interval(k, n, conf);
        const auto [lo, hi] = oracle::wilson_quadratic(k, n, z);
        wilson_err = std::max({wilson_err, std::abs(lib.lo - lo), std::abs(lib.hi - hi)});
      }
  d << " wilson_err=" << wilson_err;

  int covered = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    std::mt19937_64 rng(1000 + r);
    std::bernoulli_distribution coin(0.5);
    std::vector<double> x(100);
    for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
    const auto ci = stats::bootstrap_ci(
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
          double s = 0.0;
          for (auto i : idx) s += x[i];
          return s / idx.size();
        },
        x.size(), 2000, 5000 + r);
    covered += ci.ci.lo <= 0.5 && 0.5 <= ci.ci.hi;
  }
  const double coverage = static_cast<double>(covered) / reps;
  d << " bootstrap_coverage=" << coverage;

  Outcome o;
  o.seconds = since(t0);
  o.detail = d.str();
  o.pass = auc_err < 1e-12 && delong_err < 1e-9 && wilson_err < 1e-9 && coverage >= 0.93 && coverage <= 0.97 &&
           o.seconds < 300.0;
  return o;
}

Outcome preprocessing_identities() {
  const auto t0 = Clock::now();
  std::ostringstream d;
  std::mt19937_64 rng(31);
  std::normal_distribution<double> nd;

  double sg_err = 0.0;
  for (auto [w, p] : std::vector<std::pair<int, int>>{{5, 2}, {7, 3}, {11, 3}, {9, 4}, {15, 2}}) {
    std::vector<std::vector<double>> coef(ecgcmr::kLeads, std::vector<double>(p + 1));
    for (auto& row : coef)
      for (auto& v : row) v = nd(rng);
    EcgRecord r(400, 500.0);
    for (int l = 0; l < ecgcmr::kLeads; ++l)
      for (std::size_t i = 0; i < r.length; ++i) {
        const double t = (static_cast<double>(i) - 200.0) / 200.0;
        double v = 0.0;
        for (int k = p; k >= 0; --k) v = v * t + coef[l][k];
        r.at(l, i) = v;
      }
    const auto y = ecg::savgol_smooth(r, w, p);
    for (int l = 0; l < ecgcmr::kLeads; ++l)
      for (std::size_t i = w / 2; i + w / 2 < r.length; ++i) sg_err = std::max(sg_err, std::abs(y.at(l, i) - r.at(l, i)));
  }
  d << "savgol_err=" << sg_err;

  double wt_rel = 0.0;
  for (std::size_t len : {1000u, 777u, 5000u}) {
    EcgRecord r(len, 500.0);
    for (auto& v : r.samples) v = nd(rng);
    ecg::PreprocessConfig cfg;
    cfg.threshold_rule = ecg::ThresholdRule::fixed;
    cfg.fixed_threshold = 0.0;
    const auto out = ecg::wavelet_denoise(r, cfg);
    double err = 0.0, mx = 0.0;
    for (std::size_t k = 0; k < r.samples.size(); ++k) {
      err = std::max(err, std::abs(out.samples[k] - r.samples[k]));
      mx = std::max(mx, std::abs(r.samples[k]));
    }
    wt_rel = std::max(wt_rel, err / mx);
  }
  d << " wavelet_roundtrip_rel=" << wt_rel;

  bool range_exact = true;
  {
    EcgRecord r(500, 500.0);
    std::uniform_real_distribution<double> u(-40.0, 90.0);
    for (auto& v : r.samples) v = u(rng);
    for (std::size_t i = 0; i < r.length; ++i) r.at(4, i) = -2.5;
    std::vector<int> constant;
    const auto y = ecg::minmax_scale(r, &constant);
    for (int l = 0; l < ecgcmr::kLeads; ++l) {
      const auto lead = y.lead(l);
      const auto [mn, mx] = std::minmax_element(lead.begin(), lead.end());
      if (l == 4) {
        range_exact = range_exact && *mn == 0.0 && *mx == 0.0;
      } else {
        range_exact = range_exact && *mn == -1.0 && *mx == 1.0;
      }
    }
    range_exact = range_exact && constant == std::vector<int>{4};
  }
  d << " minmax_exact=" << range_exact;

  bool pure = true;
  {
    cohort::GeneratorConfig g;
    const auto samples = cohort::generate_samples(4, 9, g);
    ecg::AugmentPolicy ep;
    ep.time_flip_prob = ep.sign_flip_prob = 1.0;
    ep.crop_scale_min = 0.5;
    cmr::AugmentPolicy cp;
    cp.hflip_prob = cp.vflip_prob = 1.0;
    cp.max_rotation_deg = 30.0;
    SampleRefs refs;
    for (const auto& s : samples) refs.push_back(&s);
    for (std::uint64_t seed : {0u, 1u, 77u}) {
      for (const auto& s : samples) {
        pure = pure && ecg::prepare_for_model(s.ecg, ecg::Mode::eval, seed, ep).samples == ecg::minmax_scale(s.ecg).samples;
        pure = pure && cmr::prepare_for_model(s.cmr_sa, cmr::Mode::eval, seed, cp, 32).pixels ==
                           cmr::normalize_resize(s.cmr_sa, 32).pixels;
        pure = pure && cmr::prepare_for_model(s.cmr_la, cmr::Mode::eval, seed, cp, 48).pixels ==
                           cmr::normalize_resize(s.cmr_la, 48).pixels;
      }
      const std::vector<std::size_t> idx = {0, 1, 2, 3};
      auto eb = align::ecg_batch(refs, idx, ecg::Mode::eval, 3, seed, ep);
      auto cb = ssl::clip_batch(refs, idx, View::short_axis, cmr::Mode::eval, 3, seed, cp, 32);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto ref_e = ecg::minmax_scale(samples[i].ecg);
        auto ref_et = torch::tensor(ref_e.samples, torch::kFloat64).reshape({static_cast<int64_t>(ecgcmr::kLeads), -1}).to(eb.scalar_type());
        pure = pure && bytes_equal(eb[static_cast<int64_t>(i)], ref_et);
        const auto ref_c = cmr::normalize_resize(samples[i].cmr_sa, 32);
        auto ref_ct = torch::tensor(ref_c.pixels).reshape({ref_c.frames, 32, 32}).to(cb.scalar_type());
        pure = pure && bytes_equal(cb[static_cast<int64_t>(i)], ref_ct);
      }
    }
  }
  d << " eval_path_pure=" << pure;

  Outcome o;
  o.seconds = since(t0);
  o.detail = d.str();
  o.pass = sg_err < 1e-9 && wt_rel < 1e-6 && range_exact && pure && o.seconds < 30.0;
  return o;
}

Outcome freeze_contracts() {
  const auto t0 = Clock::now();
  std::ostringstream d;
  torch::manual_seed(3);
  cohort::GeneratorConfig g;
  const auto samples = cohort::generate_samples(24, 5, g);
  SampleRefs train, val;
  for (std::size_t i = 0; i < samples.size(); ++i) (i < 16 ? train : val).push_back(&samples[i]);

  Config cfg;
  cfg.set("align.depth", 1);
  cfg.set("align.dim", 16);
  cfg.set("align.heads", 2);
  cfg.set("align.patch_width", 100);
  ssl::SslModel cmr_model(pipeline::ssl_config(cfg, g.frames));
  auto acfg = pipeline::align_config(cfg, static_cast<int>(g.ecg_length));
  auto atc = pipeline::align_train_config(cfg);
  atc.epochs = 1;
  atc.batch_size = 8;

  const Snapshot cmr_before(*cmr_model);
  const auto aligned = align::train_alignment(train, val, cmr_model, acfg, atc);
  const auto cmr_changed = cmr_before.changed(*cmr_model);
  const bool cmr_frozen = cmr_changed.empty() && aligned.frozen_hash_before == aligned.frozen_hash_after;
  d << "cmr_encoder_changed=" << cmr_changed.size() << " of " << cmr_before.tensors.size();

  const int sa = atc.sa_size;
  std::vector<std::size_t> ti(train.size()), vi(val.size());
  std::iota(ti.begin(), ti.end(), 0);
  std::iota(vi.begin(), vi.end(), 0);
  const cmr::AugmentPolicy cp;
  const ecg::AugmentPolicy ep;
  auto train_clips = ssl::clip_batch(train, ti, View::short_axis, cmr::Mode::eval, 0, 0, cp, sa);
  auto val_clips = ssl::clip_batch(val, vi, View::short_axis, cmr::Mode::eval, 0, 0, cp, sa);
  auto train_ecg = align::ecg_batch(train, ti, ecg::Mode::eval, 0, 0, ep);
  auto val_ecg = align::ecg_batch(val, vi, ecg::Mode::eval, 0, 0, ep);

  nn::AutoencoderConfig aec;
  aec.width = 8;
  diffusion::AutoencoderTrainConfig aetc;
  aetc.epochs = 1;
  aetc.batch_size = 8;
  auto ae = diffusion::train_autoencoder(train_clips, val_clips, aec, aetc).model;
  align::AlignModel aligned_model = aligned.model;
  nn::EcgVit encoder = aligned_model->encoder();
  nn::UNetConfig uc;
  uc.latent_channels = aec.latent_channels;
  uc.latent_size = sa / aec.downsample;
  uc.frames = g.frames;
  uc.width = 8;
  uc.heads = 2;
  uc.context_dim = acfg.vit.dim;
  diffusion::DiffusionTrainConfig dtc;
  dtc.epochs = 1;
  dtc.batch_size = 8;

  const Snapshot ae_before(*ae), enc_before(*encoder);
  const auto diff = diffusion::train_diffusion(ae, encoder, train_clips, train_ecg, val_clips, val_ecg, uc,
                                               linear_beta_schedule(100), dtc);
  const auto ae_changed = ae_before.changed(*ae), enc_changed = enc_before.changed(*encoder);
  const bool diff_frozen = ae_changed.empty() && enc_changed.empty() && diff.ae_hash_before == diff.ae_hash_after &&
                           diff.encoder_hash_before == diff.encoder_hash_after;
  d << " autoencoder_changed=" << ae_changed.size() << " of " << ae_before.tensors.size()
    << " ecg_encoder_changed=" << enc_changed.size() << " of " << enc_before.tensors.size();

  Outcome o;
  o.seconds = since(t0);
  o.detail = d.str();
  o.pass = cmr_frozen && diff_frozen && !cmr_before.tensors.empty() && !ae_before.tensors.empty() &&
           !enc_before.tensors.empty();
  return o;
}

}  // namespace criteria
