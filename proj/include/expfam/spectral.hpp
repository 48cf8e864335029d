#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "expfam/error.hpp"
#include "expfam/parallel.hpp"
#include "expfam/rng.hpp"
#include "expfam/scan.hpp"

namespace expfam {

// The fitted sufficient statistic T(x) = scale * (beta' S(x) - center),
// normalized to pooled-sample mean 0 and variance 1, with the sign chosen so
// that corr(T(X), X) >= 0 on pooled data. eigenvalues holds the full scree.
struct FittedFamily {
  BasisSpec basis;
  int k = 1;
  Eigen::MatrixXd coef;        // k x d
  Eigen::VectorXd center;      // per component
  Eigen::VectorXd scale;       // per component
  Eigen::VectorXd eigenvalues; // descending, length d
  double ridge = 0.0;
  int dropped_directions = 0;  // collinear basis directions excluded
  bool eigen_tie = false;
  std::vector<int> sign_fallback;  // per component: corr(T, X) was ~0
};

inline double eval_T(const FittedFamily& fit, double x, int component = 0) {
  require(component >= 0 && component < fit.k, errc::invalid_argument,
          "eval_T: component out of range");
  Eigen::VectorXd s = eval_basis(fit.basis, x);
  return fit.scale[component] *
         (fit.coef.row(component).dot(s) - fit.center[component]);
}

inline std::vector<double> scree(const FittedFamily& fit) {
  return {fit.eigenvalues.data(), fit.eigenvalues.data() + fit.eigenvalues.size()};
}

namespace detail {

inline void canonicalize_sign(Eigen::VectorXd& v) {
  int arg = 0;
  double best = 0.0;
  for (int i = 0; i < v.size(); ++i)
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  if (v[arg] < 0.0) v = -v;
}

inline bool lex_greater(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (int i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

// Pooled-sample normalization: center/scale so T has mean 0 and variance 1
// over the pooled data, sign so that corr(T, X) >= 0, falling back to a
// positive largest coefficient when the correlation vanishes.
inline void normalize_component(const MomentSummary& ms, Eigen::VectorXd& beta,
                                double& center, double& scale,
                                int& sign_fallback) {
  Eigen::MatrixXd pooled_cov =
      ((ms.n_plus - ms.m) * ms.within + (ms.m - 1) * ms.between) / ms.n_plus;
  double var = beta.dot(pooled_cov * beta);
  require(var > 0.0, errc::degenerate_variance,
          "normalize: component has zero pooled variance");
  double s0 = 1.0 / std::sqrt(var);
  double x_mean = ms.sum_x / ms.n_plus;
  double x_var = std::max(ms.sum_xx / ms.n_plus - x_mean * x_mean, 0.0);
  Eigen::VectorXd cov_xs = ms.sum_xs / ms.n_plus - x_mean * ms.grand_mean;
  double corr = x_var > 0.0 ? s0 * beta.dot(cov_xs) / std::sqrt(x_var) : 0.0;
  sign_fallback = 0;
  if (std::abs(corr) <= 1e-12) {
    canonicalize_sign(beta);
    sign_fallback = 1;
  } else if (corr < 0.0) {
    beta = -beta;
  }
  center = beta.dot(ms.grand_mean);
  scale = s0;
}

}  // namespace detail

// Maximizes the Rayleigh quotient b'Ab / b'Wb by whitening W and taking
// leading eigenvectors of the whitened between matrix. Directions of W with
// (numerically) zero variance are discarded first; the remaining ones are
// stabilized by a small ridge.
inline FittedFamily fit_sufficient_statistic(const MomentSummary& ms, int k = 1,
                                             double ridge = -1.0) {
  const int d = ms.basis.df;
  require(k >= 1 && k <= d, errc::invalid_argument,
          "fit_sufficient_statistic: k out of range");
  const double tr = ms.within.trace();
  require(tr > 0.0, errc::singular_within,
          "SingularWithin: within matrix has zero trace");
  if (ridge < 0.0) ridge = 1e-8 * tr / d;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> wes(ms.within);
  require(wes.info() == Eigen::Success, errc::singular_within,
          "SingularWithin: eigendecomposition failed");
  const Eigen::VectorXd wval = wes.eigenvalues();  // ascending
  const double rank_tol = 1e-12 * tr;

  std::vector<int> keep;
  for (int i = 0; i < d; ++i)
    if (wval[i] > rank_tol) keep.push_back(i);
  const int r = static_cast<int>(keep.size());
  require(r >= 1, errc::singular_within,
          "SingularWithin: no direction with positive within-variance");
  require(r >= k, errc::rank_deficient_basis,
          "RankDeficientBasis: fewer usable directions than components");

  Eigen::MatrixXd whiten(d, r);  // W^{-1/2} restricted to kept directions
  for (int j = 0; j < r; ++j)
    whiten.col(j) =
        wes.eigenvectors().col(keep[static_cast<std::size_t>(j)]) /
        std::sqrt(wval[keep[static_cast<std::size_t>(j)]] + ridge);

  Eigen::MatrixXd mid = whiten.transpose() * ms.between * whiten;
  mid = 0.5 * (mid + mid.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> mes(mid);
  require(mes.info() == Eigen::Success, errc::singular_within,
          "SingularWithin: whitened eigendecomposition failed");

  // descending order with canonical vector signs
  std::vector<Eigen::VectorXd> vecs;
  std::vector<double> vals;
  for (int j = r - 1; j >= 0; --j) {
    vals.push_back(std::max(mes.eigenvalues()[j], 0.0));
    Eigen::VectorXd v = mes.eigenvectors().col(j);
    detail::canonicalize_sign(v);
    vecs.push_back(std::move(v));
  }

  FittedFamily fit;
  const double tie_tol = 1e-10 * std::max(1.0, vals.empty() ? 1.0 : vals[0]);
  for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
    if (vals[i] - vals[i + 1] <= tie_tol) {
      if (static_cast<int>(i) < k) fit.eigen_tie = true;
      if (detail::lex_greater(vecs[i + 1], vecs[i]))
        std::swap(vecs[i], vecs[i + 1]);
    }
  }

  fit.basis = ms.basis;
  fit.k = k;
  fit.ridge = ridge;
  fit.dropped_directions = d - r;
  fit.coef.resize(k, d);
  fit.center.resize(k);
  fit.scale.resize(k);
  fit.sign_fallback.assign(static_cast<std::size_t>(k), 0);
  fit.eigenvalues = Eigen::VectorXd::Zero(d);
  for (int j = 0; j < r; ++j)
    fit.eigenvalues[j] = vals[static_cast<std::size_t>(j)];

  for (int c = 0; c < k; ++c) {
    Eigen::VectorXd beta = whiten * vecs[static_cast<std::size_t>(c)];
    double center = 0.0, scale = 1.0;
    int fallback = 0;
    detail::normalize_component(ms, beta, center, scale, fallback);
    fit.coef.row(c) = beta.transpose();
    fit.center[c] = center;
    fit.scale[c] = scale;
    fit.sign_fallback[static_cast<std::size_t>(c)] = fallback;
  }
  return fit;
}

namespace detail {

// Refit on a multiset of groups (bootstrap). Each drawn index becomes its
// own group, which is exactly a refit on the duplicated data.
inline FittedFamily refit_multiset(const std::vector<GroupAccumulator>& accs,
                                   const std::vector<std::size_t>& draw,
                                   const BasisSpec& spec, int k, double ridge) {
  std::vector<GroupAccumulator> picked;
  picked.reserve(draw.size());
  for (std::size_t j = 0; j < draw.size(); ++j) {
    picked.push_back(accs[draw[j]]);
    picked.back().group += "#" + std::to_string(j);
  }
  return fit_sufficient_statistic(finalize(picked, spec), k, ridge);
}

}  // namespace detail

// Group-level bootstrap of the fit: B refits on m groups drawn with
// replacement, each sign-aligned to the full-data fit over an evaluation
// grid. Replicates with fewer than 2 distinct groups are redrawn.
inline std::vector<FittedFamily> bootstrap_T(const Dataset& ds,
                                             const BasisSpec& spec, int B,
                                             std::uint64_t seed, int k = 1,
                                             double ridge = -1.0,
                                             int workers = 1) {
  require(B >= 1, errc::invalid_argument, "InvalidB: B must be >= 1");
  auto accs = scan_groups(ds, spec, workers);
  FittedFamily full = fit_sufficient_statistic(finalize(accs, spec), k, ridge);

  const int grid_n = 201;
  std::vector<double> grid(grid_n);
  for (int i = 0; i < grid_n; ++i)
    grid[static_cast<std::size_t>(i)] =
        spec.lower + (spec.upper - spec.lower) * i / (grid_n - 1);
  std::vector<double> full_t(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    full_t[i] = eval_T(full, grid[i], 0);

  const std::size_t m = accs.size();
  Rng master(seed);
  std::vector<FittedFamily> out(static_cast<std::size_t>(B));
  parallel_for(B, workers, [&](int b) {
    Rng rng = master.substream(static_cast<std::uint64_t>(b));
    std::vector<std::size_t> draw(m);
    for (;;) {
      for (auto& idx : draw) idx = rng.below(m);
      std::size_t first = draw[0];
      bool distinct = false;
      for (auto idx : draw)
        if (idx != first) {
          distinct = true;
          break;
        }
      if (distinct) break;
    }
    FittedFamily rep = detail::refit_multiset(accs, draw, spec, k, ridge);
    double cov = 0.0, mr = 0.0, mf = 0.0;
    std::vector<double> rep_t(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
      rep_t[i] = eval_T(rep, grid[i], 0);
      mr += rep_t[i];
      mf = mf + full_t[i];
    }
    mr /= static_cast<double>(grid.size());
    mf /= static_cast<double>(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
      cov += (rep_t[i] - mr) * (full_t[i] - mf);
    if (cov < 0.0) {
      rep.coef.row(0) = -rep.coef.row(0);
      rep.center[0] = -rep.center[0];
    }
    out[static_cast<std::size_t>(b)] = std::move(rep);
  });
  return out;
}

}  // namespace expfam
