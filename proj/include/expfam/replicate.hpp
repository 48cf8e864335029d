#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "expfam/base_measure.hpp"
#include "expfam/inference.hpp"
#include "expfam/model_io.hpp"
#include "expfam/refine.hpp"
#include "expfam/scan.hpp"
#include "expfam/sim.hpp"
#include "expfam/spectral.hpp"
#include "expfam/util.hpp"

namespace expfam {

// Signed log1p: equals log(1+x) on positive data and extends it oddly to
// the whole line, so the comparison statistic is defined for location
// families as well.
inline double signed_log1p(double x) {
  return x < 0.0 ? -std::log1p(-x) : std::log1p(x);
}

namespace detail {

inline void write_csv_rows(const std::string& path, const std::string& header,
                           const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  require(out.good(), errc::io_error, "cannot write " + path);
  out << header << '\n';
  char buf[64];
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

inline void write_scree_csv(const FittedFamily& fit, const std::string& path) {
  std::vector<std::vector<double>> rows;
  auto ev = scree(fit);
  for (std::size_t i = 0; i < ev.size(); ++i)
    rows.push_back({static_cast<double>(i + 1), ev[i]});
  detail::write_csv_rows(path, "component,eigenvalue", rows);
}

inline void write_tcurve_csv(const FittedFamily& fit, const std::string& path,
                             int points = 401) {
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < points; ++i) {
    double x = fit.basis.lower +
               (fit.basis.upper - fit.basis.lower) * i / (points - 1);
    rows.push_back({x, eval_T(fit, x, 0)});
  }
  detail::write_csv_rows(path, "x,t", rows);
}

inline void write_base_measure_csv(const BaseMeasure& bm,
                                   const std::string& path) {
  std::vector<std::vector<double>> rows;
  for (std::size_t b = 0; b < bm.x.size(); ++b)
    rows.push_back({bm.x[b], bm.zeta[b]});
  detail::write_csv_rows(path, "x_b,zeta_b", rows);
}

inline void write_pcdf_csv(std::vector<double> pvals, const std::string& path) {
  std::sort(pvals.begin(), pvals.end());
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < pvals.size(); ++i)
    rows.push_back({pvals[i], (i + 1.0) / static_cast<double>(pvals.size())});
  detail::write_csv_rows(path, "p,ecdf", rows);
}

struct LaplaceStudy {
  double rho2 = 0.0;  // corr^2(T, sgn) on pooled data
  int groups = 0;
  int coverage_misses = 0;
  double mean_width = 0.0;
  double mean_t_width = 0.0;
  double re_identity = 0.0;  // efficiency relative to the fitted statistic
  double re_log1p = 0.0;
  double re_true = 0.0;
  double lambda1 = 0.0, lambda2 = 0.0;
  double seconds = 0.0;
};

struct LoggammaStudy {
  double rho2 = 0.0;  // corr^2(T, true score) on pooled data
  int groups = 0;
  int mu_covered = 0;
  double mean_mu_width = 0.0;
  double mean_t_width = 0.0;
  double width_ratio = 0.0;  // t-interval / fitted-interval mean widths
  double re_identity = 0.0;
  double re_log1p = 0.0;
  double re_true = 0.0;
  double seconds = 0.0;
};

struct HeavyTailStudy {
  int experiments = 0;
  int rej_fitted = 0;
  int rej_identity = 0;
  double mcnemar_p = 1.0;
  double seconds = 0.0;
};

// Laplace location replication: m=5000 groups of n=100, theta ~ N(0, 0.1^2),
// natural spline with df=11. Reports the pooled squared correlation with
// sgn(x), coverage and width of the 95% theta intervals, one-sample
// t-interval widths, and the relative-efficiency row for X, log1p and the
// true score (each measured against the fitted statistic).
inline LaplaceStudy run_laplace_study(std::uint64_t seed, int workers = 1,
                                      const std::string& outdir = "") {
  auto t0 = std::chrono::steady_clock::now();
  SimConfig cfg;
  cfg.family = SimFamily::laplace;
  cfg.m = 5000;
  cfg.n_per_group = 100;
  cfg.theta_mean = 0.0;
  cfg.theta_sd = 0.1;
  cfg.seed = seed;
  SimData sim = gen_laplace(cfg, workers);

  std::vector<double> pooled = sim.data.pooled_values();
  BasisSpec spec = make_spline_basis(11, pooled);
  MomentSummary ms = scan_dataset(sim.data, spec, workers);
  BinnedCounts binned = bin_data(sim.data, 100);
  FittedFamily fit =
      refine_fit(fit_sufficient_statistic(ms, 1), binned, ms, 2);

  std::vector<double> tvals(pooled.size()), svals(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    tvals[i] = eval_T(fit, pooled[i], 0);
    svals[i] = true_score(SimFamily::laplace, pooled[i]);
  }
  LaplaceStudy out;
  out.rho2 = corr2(tvals, svals);
  out.lambda1 = fit.eigenvalues[0];
  out.lambda2 = fit.eigenvalues.size() > 1 ? fit.eigenvalues[1] : 0.0;

  std::vector<double> log1p_vals(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i)
    log1p_vals[i] = signed_log1p(pooled[i]);
  out.re_identity = corr2(pooled, svals) / out.rho2;
  out.re_log1p = corr2(log1p_vals, svals) / out.rho2;
  out.re_true = 1.0 / out.rho2;

  BaseMeasure bm = fit_base_measure(binned, fit);

  out.groups = cfg.m;
  const double tq = student_t_quantile(0.975, cfg.n_per_group - 1);
  std::vector<std::vector<double>> interval_rows;
  double width_sum = 0.0, t_width_sum = 0.0;
  std::vector<double> widths(static_cast<std::size_t>(cfg.m));
  std::vector<double> t_widths(static_cast<std::size_t>(cfg.m));
  std::vector<unsigned char> covered(static_cast<std::size_t>(cfg.m));
  std::vector<Interval> ivs(static_cast<std::size_t>(cfg.m));
  parallel_for(cfg.m, workers, [&](int i) {
    const Group& g = sim.data.groups[static_cast<std::size_t>(i)];
    Interval iv = theta_interval(g.values, fit, bm, 0.05);
    ivs[static_cast<std::size_t>(i)] = iv;
    double theta = sim.theta_true[static_cast<std::size_t>(i)];
    covered[static_cast<std::size_t>(i)] =
        iv.lower <= theta && theta <= iv.upper;
    widths[static_cast<std::size_t>(i)] = iv.upper - iv.lower;
    double sd = std::sqrt(variance_of(g.values) *
                          static_cast<double>(g.values.size()) /
                          (static_cast<double>(g.values.size()) - 1.0));
    t_widths[static_cast<std::size_t>(i)] =
        2.0 * tq * sd / std::sqrt(static_cast<double>(g.values.size()));
  });
  for (int i = 0; i < cfg.m; ++i) {
    if (!covered[static_cast<std::size_t>(i)]) ++out.coverage_misses;
    width_sum += widths[static_cast<std::size_t>(i)];
    t_width_sum += t_widths[static_cast<std::size_t>(i)];
    interval_rows.push_back({sim.theta_true[static_cast<std::size_t>(i)],
                             ivs[static_cast<std::size_t>(i)].lower,
                             ivs[static_cast<std::size_t>(i)].upper,
                             static_cast<double>(covered[static_cast<std::size_t>(i)])});
  }
  out.mean_width = width_sum / cfg.m;
  out.mean_t_width = t_width_sum / cfg.m;
  out.seconds = detail::elapsed_s(t0);

  if (!outdir.empty()) {
    write_scree_csv(fit, outdir + "/scree.csv");
    write_tcurve_csv(fit, outdir + "/tcurve.csv");
    write_base_measure_csv(bm, outdir + "/base_measure.csv");
    detail::write_csv_rows(outdir + "/intervals.csv",
                           "theta_true,lower,upper,covered", interval_rows);
    nlohmann::json j;
    j["study"] = "laplace";
    j["seed"] = seed;
    j["rho2"] = out.rho2;
    j["coverage_misses"] = out.coverage_misses;
    j["groups"] = out.groups;
    j["mean_width"] = out.mean_width;
    j["mean_t_width"] = out.mean_t_width;
    j["re_identity"] = out.re_identity;
    j["re_log1p"] = out.re_log1p;
    j["re_true"] = out.re_true;
    j["lambda1"] = out.lambda1;
    j["lambda2"] = out.lambda2;
    j["seconds"] = out.seconds;
    std::ofstream m(outdir + "/metrics.json");
    require(m.good(), errc::io_error, "cannot write metrics.json");
    m << j.dump(2) << '\n';
  }
  return out;
}

// Log-gamma replication: m=100 groups of n=5000, theta ~ N(3, 0.5^2),
// df=11. Reports corr^2 with the true score, the relative-efficiency row,
// and 95% intervals for mu = E[X] = 0.6^{-theta} against t-intervals.
inline LoggammaStudy run_loggamma_study(std::uint64_t seed, int workers = 1,
                                        const std::string& outdir = "") {
  auto t0 = std::chrono::steady_clock::now();
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 100;
  cfg.n_per_group = 5000;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.5;
  cfg.seed = seed;
  SimData sim = gen_loggamma(cfg, workers);

  std::vector<double> pooled = sim.data.pooled_values();
  BasisSpec spec = make_spline_basis(11, pooled);
  MomentSummary ms = scan_dataset(sim.data, spec, workers);
  FittedFamily fit = fit_sufficient_statistic(ms, 1);

  std::vector<double> tvals(pooled.size()), svals(pooled.size()),
      lvals(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    tvals[i] = eval_T(fit, pooled[i], 0);
    svals[i] = true_score(SimFamily::loggamma, pooled[i]);
    lvals[i] = std::log1p(pooled[i]);
  }
  LoggammaStudy out;
  out.rho2 = corr2(tvals, svals);
  out.re_identity = corr2(pooled, svals) / out.rho2;
  out.re_log1p = corr2(lvals, svals) / out.rho2;
  out.re_true = 1.0 / out.rho2;

  BaseMeasure bm = fit_base_measure(bin_data(sim.data, 100), fit);

  out.groups = cfg.m;
  const double tq = student_t_quantile(0.975, cfg.n_per_group - 1);
  std::vector<std::vector<double>> interval_rows;
  for (int i = 0; i < cfg.m; ++i) {
    const Group& g = sim.data.groups[static_cast<std::size_t>(i)];
    Interval th = theta_interval(g.values, fit, bm, 0.05);
    Interval mu = mu_interval(th, bm);
    double mu_true =
        std::pow(0.6, -sim.theta_true[static_cast<std::size_t>(i)]);
    bool cov = mu.lower <= mu_true && mu_true <= mu.upper;
    if (cov) ++out.mu_covered;
    out.mean_mu_width += mu.upper - mu.lower;
    double n = static_cast<double>(g.values.size());
    double sd = std::sqrt(variance_of(g.values) * n / (n - 1.0));
    double tw = 2.0 * tq * sd / std::sqrt(n);
    out.mean_t_width += tw;
    interval_rows.push_back(
        {mu_true, mu.lower, mu.upper, static_cast<double>(cov), tw});
  }
  out.mean_mu_width /= cfg.m;
  out.mean_t_width /= cfg.m;
  out.width_ratio = out.mean_t_width / out.mean_mu_width;
  out.seconds = detail::elapsed_s(t0);

  if (!outdir.empty()) {
    write_scree_csv(fit, outdir + "/scree.csv");
    write_tcurve_csv(fit, outdir + "/tcurve.csv");
    write_base_measure_csv(bm, outdir + "/base_measure.csv");
    detail::write_csv_rows(outdir + "/mu_intervals.csv",
                           "mu_true,lower,upper,covered,t_width", interval_rows);
    nlohmann::json j;
    j["study"] = "loggamma";
    j["seed"] = seed;
    j["rho2"] = out.rho2;
    j["mu_covered"] = out.mu_covered;
    j["groups"] = out.groups;
    j["mean_mu_width"] = out.mean_mu_width;
    j["mean_t_width"] = out.mean_t_width;
    j["width_ratio"] = out.width_ratio;
    j["re_identity"] = out.re_identity;
    j["re_log1p"] = out.re_log1p;
    j["re_true"] = out.re_true;
    j["seconds"] = out.seconds;
    std::ofstream m(outdir + "/metrics.json");
    require(m.good(), errc::io_error, "cannot write metrics.json");
    m << j.dump(2) << '\n';
  }
  return out;
}

// Synthetic heavy-tailed paired-experiment study: the statistic is learned
// from one batch of related log-gamma groups; fresh experiment pairs carry a
// planted shape difference. Each experiment is tested twice (fitted
// statistic vs identity) and the paired decisions feed McNemar's test.
inline HeavyTailStudy run_heavytail_study(std::uint64_t seed, int workers = 1,
                                          const std::string& outdir = "",
                                          int experiments = 250,
                                          double effect = 0.15) {
  auto t0 = std::chrono::steady_clock::now();
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 120;
  cfg.n_per_group = 1000;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.4;
  cfg.seed = mix64(seed + 0x7f4a);
  SimData train = gen_loggamma(cfg, workers);
  BasisSpec spec = make_spline_basis(11, train.data.pooled_values());
  FittedFamily fit =
      fit_sufficient_statistic(scan_dataset(train.data, spec, workers), 1);

  const int n_arm = 500;
  HeavyTailStudy out;
  out.experiments = experiments;
  std::vector<unsigned char> rej_f(static_cast<std::size_t>(experiments)),
      rej_i(static_cast<std::size_t>(experiments));
  std::vector<double> p_f(static_cast<std::size_t>(experiments)),
      p_i(static_cast<std::size_t>(experiments));
  std::vector<std::vector<double>> rows;
  Rng master(seed);
  parallel_for(experiments, workers, [&](int e) {
    Rng rng = master.substream(static_cast<std::uint64_t>(e));
    std::vector<double> a(static_cast<std::size_t>(n_arm)),
        b(static_cast<std::size_t>(n_arm));
    for (auto& v : a) v = std::exp(rng.gamma(3.0 + effect, 0.4));
    for (auto& v : b) v = std::exp(rng.gamma(3.0, 0.4));
    auto stat = [&](double x) { return eval_T(fit, x, 0); };
    TestResult rf = z_test(a, b, stat, 0.05);
    TestResult ri = z_test(a, b, [](double x) { return x; }, 0.05);
    rej_f[static_cast<std::size_t>(e)] = rf.reject;
    rej_i[static_cast<std::size_t>(e)] = ri.reject;
    p_f[static_cast<std::size_t>(e)] = rf.p_two;
    p_i[static_cast<std::size_t>(e)] = ri.p_two;
  });
  for (int e = 0; e < experiments; ++e) {
    out.rej_fitted += rej_f[static_cast<std::size_t>(e)];
    out.rej_identity += rej_i[static_cast<std::size_t>(e)];
    rows.push_back({static_cast<double>(e), p_f[static_cast<std::size_t>(e)],
                    p_i[static_cast<std::size_t>(e)],
                    static_cast<double>(rej_f[static_cast<std::size_t>(e)]),
                    static_cast<double>(rej_i[static_cast<std::size_t>(e)])});
  }
  out.mcnemar_p = mcnemar(rej_f, rej_i);
  out.seconds = detail::elapsed_s(t0);

  if (!outdir.empty()) {
    write_scree_csv(fit, outdir + "/scree.csv");
    write_tcurve_csv(fit, outdir + "/tcurve.csv");
    detail::write_csv_rows(outdir + "/experiments.csv",
                           "experiment_id,p_fitted,p_identity,rej_fitted,rej_identity",
                           rows);
    write_pcdf_csv(p_f, outdir + "/pcdf_fitted.csv");
    write_pcdf_csv(p_i, outdir + "/pcdf_identity.csv");
    nlohmann::json j;
    j["study"] = "heavytail";
    j["seed"] = seed;
    j["experiments"] = out.experiments;
    j["rej_fitted"] = out.rej_fitted;
    j["rej_identity"] = out.rej_identity;
    j["mcnemar_p"] = out.mcnemar_p;
    j["seconds"] = out.seconds;
    std::ofstream m(outdir + "/metrics.json");
    require(m.good(), errc::io_error, "cannot write metrics.json");
    m << j.dump(2) << '\n';
  }
  return out;
}

}  // namespace expfam
