#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "expfam/base_measure.hpp"
#include "expfam/error.hpp"
#include "expfam/parallel.hpp"
#include "expfam/rng.hpp"
#include "expfam/util.hpp"

namespace expfam {

enum class TestMethod { permutation, normal };
enum class Alternative { two_sided, greater, less };

struct TestResult {
  double statistic = 0.0;
  TestMethod method = TestMethod::normal;
  Alternative alternative = Alternative::two_sided;
  double p_one = 1.0;  // for the requested side (greater unless stated)
  double p_two = 1.0;
  double alpha = 0.05;
  bool reject = false;
  int nperm = 0;
  std::uint64_t seed = 0;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  enum class Target { theta, mu } target = Target::theta;
  double theta_hat = 0.0;
  bool lower_unbounded = false;
  bool upper_unbounded = false;
  bool mean_outside_range = false;
  bool nonmonotone_fallback = false;
};

namespace detail {

// Delta from per-arm sums of U and U^2; pooled variance with n1+n2-2 df.
inline double delta_from_sums(double s1, double q1, double n1, double s2,
                              double q2, double n2) {
  double mean1 = s1 / n1, mean2 = s2 / n2;
  double ss = (q1 - n1 * mean1 * mean1) + (q2 - n2 * mean2 * mean2);
  double var = ss / (n1 + n2 - 2.0);
  require(var > 0.0, errc::degenerate_variance,
          "DegenerateVariance: all transformed values equal");
  return std::sqrt(n1 * n2 / ((n1 + n2) * var)) * (mean1 - mean2);
}

inline void sums_of(std::span<const double> v, double& s, double& q) {
  s = 0.0;
  q = 0.0;
  for (double x : v) {
    s += x;
    q += x * x;
  }
}

}  // namespace detail

template <class Fn>
std::vector<double> apply_stat(std::span<const double> v, Fn&& u) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = u(v[i]);
  return out;
}

// Standardized two-sample difference of means of U(X):
//   Delta_U = sqrt(n1 n2 / ((n1+n2) sigma^2)) (mean U_1 - mean U_2).
inline double delta_stat(std::span<const double> sample1,
                         std::span<const double> sample2,
                         const std::function<double(double)>& u) {
  require(sample1.size() >= 2 && sample2.size() >= 2, errc::invalid_argument,
          "delta_stat: need at least 2 observations per arm");
  auto u1 = apply_stat(sample1, u);
  auto u2 = apply_stat(sample2, u);
  double s1, q1, s2, q2;
  detail::sums_of(u1, s1, q1);
  detail::sums_of(u2, s2, q2);
  return detail::delta_from_sums(s1, q1, static_cast<double>(u1.size()), s2, q2,
                                 static_cast<double>(u2.size()));
}

// Permutation calibration of Delta_U. p = (1 + #extreme) / (nperm + 1);
// label permutations come from a seeded stream split per replicate, so
// results do not depend on the worker count.
inline TestResult permutation_test(std::span<const double> sample1,
                                   std::span<const double> sample2,
                                   const std::function<double(double)>& u,
                                   int nperm, double alpha, std::uint64_t seed,
                                   Alternative alternative = Alternative::two_sided,
                                   int workers = 1) {
  require(nperm >= 99, errc::invalid_argument, "permutation_test: nperm < 99");
  const std::size_t n1 = sample1.size(), n2 = sample2.size();
  const std::size_t n = n1 + n2;
  std::vector<double> pooled;
  pooled.reserve(n);
  for (double x : sample1) pooled.push_back(u(x));
  for (double x : sample2) pooled.push_back(u(x));
  double s_tot, q_tot;
  detail::sums_of(pooled, s_tot, q_tot);
  // the observed statistic uses the canonical two-sample form
  const double obs = delta_stat(sample1, sample2, u);

  Rng master(seed);
  std::vector<unsigned char> two(static_cast<std::size_t>(nperm)),
      ge(static_cast<std::size_t>(nperm)), le(static_cast<std::size_t>(nperm));
  parallel_for(nperm, workers, [&](int r) {
    Rng rng = master.substream(static_cast<std::uint64_t>(r));
    std::vector<std::uint32_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
    double ps = 0.0, pq = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(idx[i], idx[j]);
      double v = pooled[idx[i]];
      ps += v;
      pq += v * v;
    }
    double delta = detail::delta_from_sums(ps, pq, static_cast<double>(n1),
                                           s_tot - ps, q_tot - pq,
                                           static_cast<double>(n2));
    two[static_cast<std::size_t>(r)] = std::abs(delta) >= std::abs(obs);
    ge[static_cast<std::size_t>(r)] = delta >= obs;
    le[static_cast<std::size_t>(r)] = delta <= obs;
  });
  int c_two = 0, c_ge = 0, c_le = 0;
  for (int r = 0; r < nperm; ++r) {
    c_two += two[static_cast<std::size_t>(r)];
    c_ge += ge[static_cast<std::size_t>(r)];
    c_le += le[static_cast<std::size_t>(r)];
  }

  TestResult res;
  res.statistic = obs;
  res.method = TestMethod::permutation;
  res.alternative = alternative;
  res.alpha = alpha;
  res.nperm = nperm;
  res.seed = seed;
  res.p_two = (1.0 + c_two) / (nperm + 1.0);
  res.p_one = alternative == Alternative::less ? (1.0 + c_le) / (nperm + 1.0)
                                               : (1.0 + c_ge) / (nperm + 1.0);
  res.reject = (alternative == Alternative::two_sided ? res.p_two : res.p_one) <=
               alpha;
  return res;
}

// Normal calibration of Delta_U.
inline TestResult z_test(std::span<const double> sample1,
                         std::span<const double> sample2,
                         const std::function<double(double)>& u, double alpha,
                         Alternative alternative = Alternative::two_sided) {
  TestResult res;
  res.statistic = delta_stat(sample1, sample2, u);
  res.method = TestMethod::normal;
  res.alternative = alternative;
  res.alpha = alpha;
  res.p_two = 2.0 * normal_cdf(-std::abs(res.statistic));
  res.p_one = alternative == Alternative::less ? normal_cdf(res.statistic)
                                               : normal_cdf(-res.statistic);
  res.reject = (alternative == Alternative::two_sided ? res.p_two : res.p_one) <=
               alpha;
  return res;
}

// Pitman efficiency of testing with U relative to V: their squared
// correlation over a reference sample.
inline double relative_efficiency(const std::function<double(double)>& u,
                                  const std::function<double(double)>& v,
                                  std::span<const double> reference) {
  require(!reference.empty(), errc::empty_data, "relative_efficiency");
  auto uu = apply_stat(reference, u);
  auto vv = apply_stat(reference, v);
  return corr2(uu, vv);
}

namespace detail {

inline double mean_map_limit(const BaseMeasure& bm, int direction) {
  double extreme = direction > 0
                       ? *std::max_element(bm.tval.begin(), bm.tval.end())
                       : *std::min_element(bm.tval.begin(), bm.tval.end());
  double wsum = 0.0, xsum = 0.0;
  for (std::size_t b = 0; b < bm.tval.size(); ++b) {
    if (bm.tval[b] == extreme) {
      double w = std::exp(bm.zeta[b]);
      wsum += w;
      xsum += w * bm.x[b];
    }
  }
  return xsum / wsum;
}

}  // namespace detail

// Wald interval for the natural parameter. theta-hat solves the moment
// equation E_theta[T] = mean T(sample) inside the fitted family (monotone,
// bracketed bisection); the spread uses the fitted-family variance of T.
// A sample mean outside the achievable open range yields a one-sided
// interval with mean_outside_range set.
inline Interval theta_interval(std::span<const double> sample,
                               const FittedFamily& fit, const BaseMeasure& bm,
                               double alpha) {
  require(!sample.empty(), errc::empty_data, "theta_interval: empty sample");
  double tbar = 0.0;
  for (double x : sample) tbar += eval_T(fit, x, 0);
  tbar /= static_cast<double>(sample.size());

  const double tmin = *std::min_element(bm.tval.begin(), bm.tval.end());
  const double tmax = *std::max_element(bm.tval.begin(), bm.tval.end());
  require(tmax > tmin, errc::degenerate_variance,
          "theta_interval: fitted statistic constant over the support");

  Interval iv;
  iv.level = 1.0 - alpha;
  iv.target = Interval::Target::theta;
  const double z = normal_quantile(1.0 - alpha / 2.0);
  const double n = static_cast<double>(sample.size());

  bool outside_hi = tbar >= tmax;
  bool outside_lo = tbar <= tmin;
  double target = tbar;
  if (outside_hi || outside_lo) {
    iv.mean_outside_range = true;
    double margin = 1e-9 * (tmax - tmin);
    target = outside_hi ? tmax - margin : tmin + margin;
  }

  double lo = -1.0, hi = 1.0;
  int guard = 0;
  while (tstat_mean(bm, lo) > target && guard++ < 200) lo *= 2.0;
  guard = 0;
  while (tstat_mean(bm, hi) < target && guard++ < 200) hi *= 2.0;
  for (int it = 0; it < 500 && hi - lo > 1e-10 * std::max({1.0, std::abs(lo),
                                                           std::abs(hi)});
       ++it) {
    double mid = 0.5 * (lo + hi);
    if (tstat_mean(bm, mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  double theta_hat = 0.5 * (lo + hi);
  iv.theta_hat = theta_hat;

  double var = tstat_var(bm, theta_hat);
  require(var > 0.0, errc::degenerate_variance,
          "theta_interval: zero variance at theta-hat");
  double half = z / std::sqrt(n * var);
  iv.lower = theta_hat - half;
  iv.upper = theta_hat + half;
  if (outside_hi) {
    iv.upper = std::numeric_limits<double>::infinity();
    iv.upper_unbounded = true;
  }
  if (outside_lo) {
    iv.lower = -std::numeric_limits<double>::infinity();
    iv.lower_unbounded = true;
  }
  return iv;
}

// Maps a theta interval through the fitted mean function. Requires the map
// to be monotone over the interval (slope checked at both ends and the
// midpoint); otherwise falls back to the min/max over a grid, flagged.
inline Interval mu_interval(const Interval& theta_int, const BaseMeasure& bm) {
  Interval iv;
  iv.level = theta_int.level;
  iv.target = Interval::Target::mu;
  iv.theta_hat = theta_int.theta_hat;
  iv.mean_outside_range = theta_int.mean_outside_range;

  auto map_endpoint = [&](double theta, bool unbounded, int dir) {
    return unbounded ? detail::mean_map_limit(bm, dir) : mean_map(bm, theta);
  };
  double lo_eval = theta_int.lower_unbounded ? iv.theta_hat - 1.0 : theta_int.lower;
  double hi_eval = theta_int.upper_unbounded ? iv.theta_hat + 1.0 : theta_int.upper;
  double s_lo = mean_map_slope(bm, lo_eval);
  double s_mid = mean_map_slope(bm, 0.5 * (lo_eval + hi_eval));
  double s_hi = mean_map_slope(bm, hi_eval);

  double a = map_endpoint(theta_int.lower, theta_int.lower_unbounded, -1);
  double b = map_endpoint(theta_int.upper, theta_int.upper_unbounded, +1);
  bool increasing = s_lo > 0 && s_mid > 0 && s_hi > 0;
  bool decreasing = s_lo < 0 && s_mid < 0 && s_hi < 0;
  if (increasing) {
    iv.lower = a;
    iv.upper = b;
    iv.lower_unbounded = theta_int.lower_unbounded;
    iv.upper_unbounded = theta_int.upper_unbounded;
  } else if (decreasing) {
    iv.lower = b;
    iv.upper = a;
    iv.lower_unbounded = theta_int.upper_unbounded;
    iv.upper_unbounded = theta_int.lower_unbounded;
  } else {
    iv.nonmonotone_fallback = true;
    double mn = std::min(a, b), mx = std::max(a, b);
    for (int g = 0; g <= 100; ++g) {
      double th = lo_eval + (hi_eval - lo_eval) * g / 100.0;
      double v = mean_map(bm, th);
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    iv.lower = mn;
    iv.upper = mx;
  }
  return iv;
}

// Exact binomial McNemar test on the discordant pairs (two-sided,
// equal-tails doubling capped at 1). No discordant pairs gives p = 1.
inline double mcnemar(std::span<const unsigned char> rejections_a,
                      std::span<const unsigned char> rejections_b) {
  require(rejections_a.size() == rejections_b.size(), errc::invalid_argument,
          "mcnemar: length mismatch");
  long a_only = 0, b_only = 0;
  for (std::size_t i = 0; i < rejections_a.size(); ++i) {
    if (rejections_a[i] && !rejections_b[i]) ++a_only;
    if (!rejections_a[i] && rejections_b[i]) ++b_only;
  }
  long n = a_only + b_only;
  if (n == 0) return 1.0;
  long kmin = std::min(a_only, b_only);
  double tail = 0.0;
  for (long j = 0; j <= kmin; ++j) {
    double logp = std::lgamma(static_cast<double>(n) + 1.0) -
                  std::lgamma(static_cast<double>(j) + 1.0) -
                  std::lgamma(static_cast<double>(n - j) + 1.0) -
                  static_cast<double>(n) * std::log(2.0);
    tail += std::exp(logp);
  }
  return std::min(1.0, 2.0 * tail);
}

}  // namespace expfam
