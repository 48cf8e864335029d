#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "expfam/error.hpp"
#include "expfam/util.hpp"

namespace expfam {

enum class BasisKind { natural_spline, piecewise };

// A fixed, bounded d-dimensional function basis S(x). Evaluation clamps x to
// [lower, upper], so every basis function is constant outside the clamp
// interval and hence bounded on the whole line. Immutable after
// construction; evaluation is pure and thread-safe.
struct BasisSpec {
  BasisKind kind = BasisKind::natural_spline;
  int df = 0;
  std::vector<double> knots;  // all knots, boundary included (natural spline)
  double lower = 0.0;         // clamp limits
  double upper = 0.0;
  std::uint64_t version = 0;

  // natural spline internals (derived from knots, not serialized)
  std::vector<double> padded;  // knot vector with 4x boundary multiplicity
  Eigen::MatrixXd combine;     // (K+2) x K map from B-splines to the basis

  // user-supplied piecewise polynomials: coef[f][interval][power], local
  // coordinate (x - breaks[interval]), ascending powers
  std::vector<double> breaks;
  std::vector<std::vector<std::vector<double>>> coef;
};

namespace detail {

// Values (or deriv-th derivatives) of all degree-p B-splines on knot vector
// tau at x. Plain triangular recursion; used at construction time only.
inline std::vector<double> bspline_all(const std::vector<double>& tau, int p,
                                       double x, int deriv) {
  int nfun = static_cast<int>(tau.size()) - p - 1;
  int n0 = static_cast<int>(tau.size()) - 1;
  std::vector<double> b(static_cast<std::size_t>(n0), 0.0);
  // degree-0 indicators, right end closed on the last nonempty span
  int span = -1;
  for (int i = 0; i < n0; ++i)
    if (tau[i] <= x && x < tau[i + 1]) span = i;
  if (span < 0 && x >= tau.back()) {
    for (int i = n0 - 1; i >= 0; --i)
      if (tau[i + 1] > tau[i]) {
        span = i;
        break;
      }
  }
  if (span >= 0) b[static_cast<std::size_t>(span)] = 1.0;
  for (int d = 1; d <= p; ++d) {
    bool diff = d > p - deriv;
    int count = n0 - d;
    for (int i = 0; i < count; ++i) {
      double den1 = tau[i + d] - tau[i];
      double den2 = tau[i + d + 1] - tau[i + 1];
      double v = 0.0;
      if (diff) {
        if (den1 > 0.0) v += d * b[i] / den1;
        if (den2 > 0.0) v -= d * b[i + 1] / den2;
      } else {
        if (den1 > 0.0) v += (x - tau[i]) / den1 * b[i];
        if (den2 > 0.0) v += (tau[i + d + 1] - x) / den2 * b[i + 1];
      }
      b[static_cast<std::size_t>(i)] = v;
    }
    b.resize(static_cast<std::size_t>(count));
  }
  b.resize(static_cast<std::size_t>(nfun));
  return b;
}

// Knot span index for the windowed cubic evaluation: largest mu with
// tau[mu] <= x, clamped to [3, nbasis-1].
inline int find_span(const std::vector<double>& tau, double x) {
  int nb = static_cast<int>(tau.size()) - 4;
  auto it = std::upper_bound(tau.begin(), tau.end(), x);
  int mu = static_cast<int>(it - tau.begin()) - 1;
  return std::clamp(mu, 3, nb - 1);
}

// The four possibly nonzero cubic B-spline values at x (span mu), written to
// out[0..3] for functions mu-3..mu.
inline void cubic_window(const std::vector<double>& tau, int mu, double x,
                         double* out) {
  double left[4], right[4];
  out[0] = 1.0;
  for (int k = 1; k <= 3; ++k) {
    left[k] = x - tau[mu + 1 - k];
    right[k] = tau[mu + k] - x;
    double saved = 0.0;
    for (int r = 0; r < k; ++r) {
      double tmp = out[r] / (right[r + 1] + left[k - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[k - r] * tmp;
    }
    out[k] = saved;
  }
}

inline std::uint64_t hash_doubles(std::span<const double> v, std::uint64_t h) {
  return fnv1a(v.data(), v.size() * sizeof(double), h);
}

}  // namespace detail

// Natural cubic spline basis with df functions. Interior knots sit at
// equally spaced quantiles of the training values (df-2 of them); the clamp
// limits are the 0.005 and 0.995 training quantiles and double as the
// boundary knots. Duplicate quantiles (heavy atoms) are collapsed, in which
// case df shrinks to the number of functions actually produced.
inline BasisSpec make_spline_basis(int df, std::span<const double> training) {
  require(df >= 2, errc::invalid_argument, "InvalidDf: df must be >= 2");
  std::vector<double> sorted(training.begin(), training.end());
  for (double v : sorted)
    require(std::isfinite(v), errc::non_finite_input,
            "make_spline_basis: non-finite training value");
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (i == 0 || sorted[i] != sorted[i - 1]) ++distinct;
  require(distinct >= static_cast<std::size_t>(df) + 2, errc::too_few_distinct,
          "TooFewDistinctValues: need at least df+2 distinct training values");

  double lo = quantile_sorted(sorted, 0.005);
  double hi = quantile_sorted(sorted, 0.995);
  if (!(lo < hi)) {
    lo = sorted.front();
    hi = sorted.back();
  }

  BasisSpec spec;
  spec.kind = BasisKind::natural_spline;
  spec.lower = lo;
  spec.upper = hi;
  spec.knots.push_back(lo);
  for (int j = 1; j <= df - 2; ++j) {
    double q = quantile_sorted(sorted, static_cast<double>(j) /
                                           static_cast<double>(df - 1));
    if (q > spec.knots.back() && q < hi) spec.knots.push_back(q);
  }
  spec.knots.push_back(hi);
  spec.df = static_cast<int>(spec.knots.size());

  int K = spec.df;
  spec.padded.assign(4, lo);
  spec.padded.insert(spec.padded.end(), spec.knots.begin() + 1,
                     spec.knots.end() - 1);
  spec.padded.insert(spec.padded.end(), 4, hi);

  // Natural boundary: zero second derivative at both ends. The basis is the
  // null space of the 2 x (K+2) constraint matrix, taken from a Householder
  // QR so the construction is deterministic.
  int nb = K + 2;
  auto d2lo = detail::bspline_all(spec.padded, 3, lo, 2);
  auto d2hi = detail::bspline_all(spec.padded, 3, hi, 2);
  Eigen::MatrixXd con(nb, 2);
  for (int i = 0; i < nb; ++i) {
    con(i, 0) = d2lo[static_cast<std::size_t>(i)];
    con(i, 1) = d2hi[static_cast<std::size_t>(i)];
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(con);
  Eigen::MatrixXd q = qr.householderQ();
  spec.combine = q.rightCols(nb - 2);

  std::uint64_t h = fnv1a("natural_spline", 14);
  h = detail::hash_doubles(spec.knots, h);
  h = detail::hash_doubles(std::span<const double>(&spec.lower, 1), h);
  h = detail::hash_doubles(std::span<const double>(&spec.upper, 1), h);
  spec.version = h;
  return spec;
}

// User-supplied piecewise-polynomial basis. breaks must be increasing and
// every function needs one coefficient row per interval.
inline BasisSpec make_piecewise_basis(
    std::vector<double> breaks,
    std::vector<std::vector<std::vector<double>>> coef, double lower,
    double upper) {
  require(breaks.size() >= 2, errc::invalid_argument,
          "piecewise basis needs at least two breakpoints");
  for (std::size_t i = 1; i < breaks.size(); ++i)
    require(breaks[i] > breaks[i - 1], errc::invalid_argument,
            "piecewise breakpoints must be strictly increasing");
  require(!coef.empty(), errc::invalid_argument, "piecewise basis is empty");
  for (const auto& fn : coef)
    require(fn.size() == breaks.size() - 1, errc::invalid_argument,
            "piecewise function must cover every interval");
  require(lower < upper && lower >= breaks.front() && upper <= breaks.back(),
          errc::invalid_argument, "piecewise clamp limits outside breakpoints");

  BasisSpec spec;
  spec.kind = BasisKind::piecewise;
  spec.df = static_cast<int>(coef.size());
  spec.breaks = std::move(breaks);
  spec.coef = std::move(coef);
  spec.lower = lower;
  spec.upper = upper;

  std::uint64_t h = fnv1a("piecewise", 9);
  h = detail::hash_doubles(spec.breaks, h);
  for (const auto& fn : spec.coef)
    for (const auto& iv : fn) h = detail::hash_doubles(iv, h);
  h = detail::hash_doubles(std::span<const double>(&spec.lower, 1), h);
  h = detail::hash_doubles(std::span<const double>(&spec.upper, 1), h);
  spec.version = h;
  return spec;
}

// Evaluate all basis functions at clamp(x); out is resized to df.
inline void eval_basis(const BasisSpec& spec, double x, Eigen::VectorXd& out) {
  require(std::isfinite(x), errc::non_finite_input,
          "NonFiniteInput: eval_basis");
  double xc = std::clamp(x, spec.lower, spec.upper);
  out.resize(spec.df);
  if (spec.kind == BasisKind::natural_spline) {
    int mu = detail::find_span(spec.padded, xc);
    double w[4];
    detail::cubic_window(spec.padded, mu, xc, w);
    out.setZero();
    for (int j = 0; j < 4; ++j)
      out.noalias() += w[j] * spec.combine.row(mu - 3 + j).transpose();
  } else {
    auto it = std::upper_bound(spec.breaks.begin(), spec.breaks.end(), xc);
    int iv = std::clamp(static_cast<int>(it - spec.breaks.begin()) - 1, 0,
                        static_cast<int>(spec.breaks.size()) - 2);
    double u = xc - spec.breaks[static_cast<std::size_t>(iv)];
    for (int f = 0; f < spec.df; ++f) {
      const auto& c = spec.coef[static_cast<std::size_t>(f)]
                               [static_cast<std::size_t>(iv)];
      double acc = 0.0;
      for (std::size_t p = c.size(); p-- > 0;) acc = acc * u + c[p];
      out[f] = acc;
    }
  }
}

inline Eigen::VectorXd eval_basis(const BasisSpec& spec, double x) {
  Eigen::VectorXd out;
  eval_basis(spec, x, out);
  return out;
}

}  // namespace expfam
