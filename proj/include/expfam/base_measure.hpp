#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "expfam/dataset.hpp"
#include "expfam/error.hpp"
#include "expfam/spectral.hpp"
#include "expfam/util.hpp"

namespace expfam {

// Binned view of the dataset: equal-count bins from pooled data, each
// represented by its within-bin pooled mean.
struct BinnedCounts {
  std::vector<double> edges;  // nb + 1
  std::vector<double> rep;    // x_b, inside bin b
  std::vector<std::string> groups;
  Eigen::MatrixXd counts;  // m x nb, weighted counts
};

// Discrete base measure over bin representatives plus the per-group GLM
// parameters. zeta is normalized (sum of exp(zeta) == 1) and theta is
// centered (sum of n_i theta_i == 0); alpha absorbs the normalizer.
struct BaseMeasure {
  std::vector<double> x;     // bin representatives (zero-mass bins dropped)
  std::vector<double> tval;  // T(x_b)
  std::vector<double> zeta;  // log masses
  std::vector<std::string> groups;
  std::vector<double> group_n;
  std::vector<double> alpha;
  std::vector<double> theta;
  int dropped_bins = 0;
  bool converged = false;
  int iterations = 0;
  double grad_norm = std::numeric_limits<double>::infinity();
  double loglik = 0.0;
  std::vector<double> ll_trace;
};

inline BinnedCounts bin_data(const Dataset& ds, int nbins) {
  require(nbins >= 2, errc::invalid_argument, "TooFewBins: nbins must be >= 2");
  require(!ds.groups.empty() && ds.total_values() > 0, errc::empty_data,
          "EmptyData: nothing to bin");

  std::vector<double> pooled = ds.pooled_values();
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> edges;
  edges.reserve(static_cast<std::size_t>(nbins) + 1);
  for (int j = 0; j <= nbins; ++j) {
    double q = quantile_sorted(pooled, static_cast<double>(j) / nbins);
    if (edges.empty() || q > edges.back()) edges.push_back(q);
  }
  require(edges.size() >= 2, errc::invalid_argument,
          "TooFewBins: data supports a single bin only");
  const int nb = static_cast<int>(edges.size()) - 1;

  auto bin_of = [&](double x) {
    auto it = std::upper_bound(edges.begin(), edges.end(), x);
    int b = static_cast<int>(it - edges.begin()) - 1;
    return std::clamp(b, 0, nb - 1);
  };

  BinnedCounts bc;
  bc.edges = edges;
  const int m = static_cast<int>(ds.groups.size());
  bc.counts = Eigen::MatrixXd::Zero(m, nb);
  std::vector<double> wsum(static_cast<std::size_t>(nb), 0.0);
  std::vector<double> xsum(static_cast<std::size_t>(nb), 0.0);
  for (int i = 0; i < m; ++i) {
    const Group& g = ds.groups[static_cast<std::size_t>(i)];
    bc.groups.push_back(g.id);
    for (std::size_t j = 0; j < g.values.size(); ++j) {
      double w = g.weights.empty() ? 1.0 : g.weights[j];
      int b = bin_of(g.values[j]);
      bc.counts(i, b) += w;
      wsum[static_cast<std::size_t>(b)] += w;
      xsum[static_cast<std::size_t>(b)] += w * g.values[j];
    }
  }
  bc.rep.resize(static_cast<std::size_t>(nb));
  for (int b = 0; b < nb; ++b)
    bc.rep[static_cast<std::size_t>(b)] =
        wsum[static_cast<std::size_t>(b)] > 0
            ? xsum[static_cast<std::size_t>(b)] / wsum[static_cast<std::size_t>(b)]
            : 0.5 * (edges[static_cast<std::size_t>(b)] +
                     edges[static_cast<std::size_t>(b) + 1]);
  return bc;
}

namespace detail {

// Reduced GLM parameterization: pack = [zeta_0..zeta_{B-1},
// alpha_1, theta_1, ..., alpha_{m-1}, theta_{m-1}]; group 0 is the gauge
// (alpha_0 = theta_0 = 0).
struct GlmProblem {
  Eigen::MatrixXd counts;  // m x B
  Eigen::VectorXd t;       // B

  int m() const { return static_cast<int>(counts.rows()); }
  int B() const { return static_cast<int>(counts.cols()); }
  int nparam() const { return B() + 2 * (m() - 1); }

  Eigen::MatrixXd mu(const Eigen::VectorXd& pack) const {
    Eigen::MatrixXd out(m(), B());
    for (int i = 0; i < m(); ++i) {
      double a = i == 0 ? 0.0 : pack[B() + 2 * (i - 1)];
      double th = i == 0 ? 0.0 : pack[B() + 2 * (i - 1) + 1];
      for (int b = 0; b < B(); ++b)
        out(i, b) = std::exp(a + pack[b] + th * t[b]);
    }
    return out;
  }

  double loglik(const Eigen::VectorXd& pack) const {
    double ll = 0.0;
    for (int i = 0; i < m(); ++i) {
      double a = i == 0 ? 0.0 : pack[B() + 2 * (i - 1)];
      double th = i == 0 ? 0.0 : pack[B() + 2 * (i - 1) + 1];
      for (int b = 0; b < B(); ++b) {
        double eta = a + pack[b] + th * t[b];
        ll += counts(i, b) * eta - std::exp(eta);
      }
    }
    return ll;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& pack) const {
    Eigen::MatrixXd resid = counts - mu(pack);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(nparam());
    g.head(B()) = resid.colwise().sum().transpose();
    for (int i = 1; i < m(); ++i) {
      g[B() + 2 * (i - 1)] = resid.row(i).sum();
      g[B() + 2 * (i - 1) + 1] = resid.row(i) * t;
    }
    return g;
  }
};

}  // namespace detail

// Poisson GLM of the binned counts, log EN_{i,b} = alpha_i + zeta_b +
// theta_i T(x_b), maximized by Newton steps with the group parameters
// eliminated through a Schur complement (design is sparse in the dummies).
// Step halving keeps the log-likelihood non-decreasing. Bins empty in every
// group are dropped with zero mass.
inline BaseMeasure fit_base_measure(const BinnedCounts& binned,
                                    const FittedFamily& fit, double tol = 1e-10,
                                    int max_iter = 200) {
  const int m = static_cast<int>(binned.counts.rows());
  require(m >= 1, errc::insufficient_groups, "fit_base_measure: no groups");

  // drop bins with no observations anywhere (their MLE mass is zero)
  std::vector<int> live;
  for (int b = 0; b < binned.counts.cols(); ++b)
    if (binned.counts.col(b).sum() > 0.0) live.push_back(b);
  const int B = static_cast<int>(live.size());
  require(B >= 2, errc::invalid_argument,
          "fit_base_measure: need at least 2 non-empty bins");

  detail::GlmProblem prob;
  prob.counts.resize(m, B);
  prob.t.resize(B);
  BaseMeasure bm;
  bm.dropped_bins = static_cast<int>(binned.counts.cols()) - B;
  bm.x.resize(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    prob.counts.col(b) = binned.counts.col(live[static_cast<std::size_t>(b)]);
    bm.x[static_cast<std::size_t>(b)] =
        binned.rep[static_cast<std::size_t>(live[static_cast<std::size_t>(b)])];
    prob.t[b] = eval_T(fit, bm.x[static_cast<std::size_t>(b)], 0);
  }
  bm.groups = binned.groups;
  Eigen::VectorXd n_i = prob.counts.rowwise().sum();
  const double n_plus = n_i.sum();

  // start at the pooled histogram with flat group effects
  Eigen::VectorXd pack = Eigen::VectorXd::Zero(prob.nparam());
  for (int b = 0; b < B; ++b)
    pack[b] = std::log(prob.counts.col(b).sum() / n_plus * n_i[0] +
                       std::numeric_limits<double>::min());
  for (int i = 1; i < m; ++i)
    pack[B + 2 * (i - 1)] = std::log(n_i[i] / n_i[0]);

  double ll = prob.loglik(pack);
  bm.ll_trace.push_back(ll);
  Eigen::MatrixXd mu, vi(B, 2);
  Eigen::VectorXd gpack, dzeta, rhs(B);
  bool converged = false;
  int iter = 0;
  for (; iter < max_iter; ++iter) {
    mu = prob.mu(pack);
    gpack = Eigen::VectorXd::Zero(prob.nparam());
    {
      Eigen::MatrixXd resid = prob.counts - mu;
      gpack.head(B) = resid.colwise().sum().transpose();
      for (int i = 1; i < m; ++i) {
        gpack[B + 2 * (i - 1)] = resid.row(i).sum();
        gpack[B + 2 * (i - 1) + 1] = resid.row(i) * prob.t;
      }
    }
    bm.grad_norm = gpack.lpNorm<Eigen::Infinity>();
    if (bm.grad_norm < 1e-8) {
      converged = true;
      break;
    }

    // Schur complement on the bin block
    Eigen::MatrixXd schur = Eigen::MatrixXd::Zero(B, B);
    schur.diagonal() = mu.colwise().sum().transpose();
    rhs = gpack.head(B);
    std::vector<Eigen::Vector2d> ginv_g(static_cast<std::size_t>(m));
    std::vector<Eigen::Matrix2d> ginv(static_cast<std::size_t>(m));
    for (int i = 1; i < m; ++i) {
      vi.col(0) = mu.row(i).transpose();
      vi.col(1) = mu.row(i).transpose().cwiseProduct(prob.t);
      double a = vi.col(0).sum();
      double b = vi.col(1).sum();
      double c = vi.col(1).dot(prob.t);
      double det = a * c - b * b;
      det = std::max(det, 1e-12 * std::abs(a * c) +
                              std::numeric_limits<double>::min());
      Eigen::Matrix2d gi;
      gi << c / det, -b / det, -b / det, a / det;
      ginv[static_cast<std::size_t>(i)] = gi;
      Eigen::Vector2d gg(gpack[B + 2 * (i - 1)], gpack[B + 2 * (i - 1) + 1]);
      ginv_g[static_cast<std::size_t>(i)] = gi * gg;
      schur.noalias() -= vi * (gi * vi.transpose());
      rhs.noalias() -= vi * ginv_g[static_cast<std::size_t>(i)];
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
    require(ldlt.info() == Eigen::Success, errc::singular_within,
            "fit_base_measure: Newton system not solvable");
    dzeta = ldlt.solve(rhs);

    Eigen::VectorXd step = Eigen::VectorXd::Zero(prob.nparam());
    step.head(B) = dzeta;
    for (int i = 1; i < m; ++i) {
      vi.col(0) = mu.row(i).transpose();
      vi.col(1) = mu.row(i).transpose().cwiseProduct(prob.t);
      Eigen::Vector2d gg(gpack[B + 2 * (i - 1)], gpack[B + 2 * (i - 1) + 1]);
      Eigen::Vector2d di =
          ginv[static_cast<std::size_t>(i)] * (gg - vi.transpose() * dzeta);
      step[B + 2 * (i - 1)] = di[0];
      step[B + 2 * (i - 1) + 1] = di[1];
    }

    double lambda = 1.0;
    double ll_new = prob.loglik(pack + step);
    while (!(ll_new >= ll) && lambda > 1e-10) {
      lambda *= 0.5;
      ll_new = prob.loglik(pack + lambda * step);
    }
    pack += lambda * step;
    bm.ll_trace.push_back(ll_new);
    double change = std::abs(ll_new - ll);
    ll = ll_new;
    if (change <= tol * (std::abs(ll) + 1.0)) {
      bm.grad_norm = prob.gradient(pack).lpNorm<Eigen::Infinity>();
      converged = true;
      ++iter;
      break;
    }
  }
  bm.converged = converged;  // NotConverged is reported via diagnostics
  bm.iterations = iter;
  bm.loglik = ll;

  bm.tval.assign(prob.t.data(), prob.t.data() + B);
  bm.zeta.assign(pack.data(), pack.data() + B);
  bm.alpha.assign(static_cast<std::size_t>(m), 0.0);
  bm.theta.assign(static_cast<std::size_t>(m), 0.0);
  bm.group_n.assign(n_i.data(), n_i.data() + m);
  for (int i = 1; i < m; ++i) {
    bm.alpha[static_cast<std::size_t>(i)] = pack[B + 2 * (i - 1)];
    bm.theta[static_cast<std::size_t>(i)] = pack[B + 2 * (i - 1) + 1];
  }

  // re-gauge: center theta against group sizes, normalize the base mass,
  // let alpha absorb both shifts so every fitted mean is unchanged
  double tshift = 0.0;
  for (int i = 0; i < m; ++i)
    tshift += bm.group_n[static_cast<std::size_t>(i)] *
              bm.theta[static_cast<std::size_t>(i)];
  tshift /= n_plus;
  for (int i = 0; i < m; ++i) bm.theta[static_cast<std::size_t>(i)] -= tshift;
  for (int b = 0; b < B; ++b)
    bm.zeta[static_cast<std::size_t>(b)] +=
        tshift * bm.tval[static_cast<std::size_t>(b)];
  double lse = log_sum_exp(bm.zeta);
  for (auto& z : bm.zeta) z -= lse;
  for (auto& a : bm.alpha) a += lse;
  return bm;
}

inline double log_partition(const BaseMeasure& bm, double theta) {
  std::vector<double> v(bm.zeta.size());
  for (std::size_t b = 0; b < v.size(); ++b)
    v[b] = bm.zeta[b] + theta * bm.tval[b];
  return log_sum_exp(v);
}

// Discrete density of the fitted family at natural parameter theta:
// mass(b) = exp(theta T(x_b) + zeta_b - psi(theta)).
inline std::vector<double> density(const BaseMeasure& bm, double theta) {
  double psi = log_partition(bm, theta);
  std::vector<double> mass(bm.zeta.size());
  for (std::size_t b = 0; b < mass.size(); ++b)
    mass[b] = std::exp(bm.zeta[b] + theta * bm.tval[b] - psi);
  return mass;
}

inline double mean_map(const BaseMeasure& bm, double theta) {
  auto mass = density(bm, theta);
  double s = 0.0;
  for (std::size_t b = 0; b < mass.size(); ++b) s += bm.x[b] * mass[b];
  return s;
}

inline double tstat_mean(const BaseMeasure& bm, double theta) {
  auto mass = density(bm, theta);
  double s = 0.0;
  for (std::size_t b = 0; b < mass.size(); ++b) s += bm.tval[b] * mass[b];
  return s;
}

inline double tstat_var(const BaseMeasure& bm, double theta) {
  auto mass = density(bm, theta);
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t b = 0; b < mass.size(); ++b) {
    s1 += bm.tval[b] * mass[b];
    s2 += bm.tval[b] * bm.tval[b] * mass[b];
  }
  return std::max(s2 - s1 * s1, 0.0);
}

// d/dtheta of mean_map, equal to Cov_theta(X, T(X)).
inline double mean_map_slope(const BaseMeasure& bm, double theta) {
  auto mass = density(bm, theta);
  double mx = 0.0, mt = 0.0, mxt = 0.0;
  for (std::size_t b = 0; b < mass.size(); ++b) {
    mx += bm.x[b] * mass[b];
    mt += bm.tval[b] * mass[b];
    mxt += bm.x[b] * bm.tval[b] * mass[b];
  }
  return mxt - mx * mt;
}

}  // namespace expfam
