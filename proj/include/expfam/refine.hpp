#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "expfam/base_measure.hpp"
#include "expfam/error.hpp"
#include "expfam/scan.hpp"
#include "expfam/spectral.hpp"

namespace expfam {

// One likelihood polish of the statistic's coefficients: the binned Poisson
// GLM of the base-measure step, refit with the per-group tilts held fixed
// and the basis coefficients free (they enter the linear predictor
// linearly, so the problem stays a concave GLM). Group intercepts are
// eliminated through a Schur complement. Returns the polished leading
// component, renormalized; other components are untouched.
inline FittedFamily polish_coefficients(const FittedFamily& fit,
                                        const BinnedCounts& binned,
                                        const BaseMeasure& bm,
                                        const MomentSummary& ms,
                                        double tol = 1e-10, int max_iter = 100) {
  const int m = static_cast<int>(binned.counts.rows());
  const int d = fit.basis.df;
  const int B = static_cast<int>(bm.x.size());
  require(static_cast<int>(bm.theta.size()) == m, errc::invalid_argument,
          "polish: base measure and binned counts disagree on groups");

  // counts restricted to the bins the base measure kept
  Eigen::MatrixXd counts(m, B);
  Eigen::MatrixXd sb(B, d);
  {
    int live = 0;
    for (int b = 0; b < binned.counts.cols() && live < B; ++b) {
      if (binned.counts.col(b).sum() > 0.0) {
        counts.col(live) = binned.counts.col(b);
        sb.row(live) = eval_basis(fit.basis,
                                  bm.x[static_cast<std::size_t>(live)])
                           .transpose();
        ++live;
      }
    }
    require(live == B, errc::invalid_argument,
            "polish: bin bookkeeping mismatch");
  }
  Eigen::VectorXd theta(m);
  for (int i = 0; i < m; ++i) theta[i] = bm.theta[static_cast<std::size_t>(i)];

  // unknowns u = [zeta(B); b(d); alpha_1..alpha_{m-1}] with alpha_0 = 0
  const int nc = B + d;
  Eigen::VectorXd zeta(B), bvec(d), alpha(m);
  // warm start at the current family: T(x) = scale*(coef*S(x) - center)
  bvec = fit.scale[0] * fit.coef.row(0).transpose();
  const double c0 = fit.scale[0] * fit.center[0];
  for (int b = 0; b < B; ++b)
    zeta[b] = bm.zeta[static_cast<std::size_t>(b)] + bm.alpha[0] -
              bm.theta[0] * c0;
  for (int i = 0; i < m; ++i)
    alpha[i] = (bm.alpha[static_cast<std::size_t>(i)] - bm.alpha[0]) -
               (theta[i] - theta[0]) * c0;
  const Eigen::VectorXd& theta_abs = theta;

  auto mu_of = [&](const Eigen::VectorXd& z, const Eigen::VectorXd& bb,
                   const Eigen::VectorXd& a) {
    Eigen::VectorXd tb = sb * bb;
    Eigen::MatrixXd out(m, B);
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < B; ++b)
        out(i, b) = std::exp(a[i] + z[b] + theta_abs[i] * tb[b]);
    return out;
  };
  auto ll_of = [&](const Eigen::VectorXd& z, const Eigen::VectorXd& bb,
                   const Eigen::VectorXd& a) {
    Eigen::VectorXd tb = sb * bb;
    double out = 0.0;
    for (int i = 0; i < m; ++i)
      for (int b = 0; b < B; ++b) {
        double eta = a[i] + z[b] + theta_abs[i] * tb[b];
        out += counts(i, b) * eta - std::exp(eta);
      }
    return out;
  };

  double ll = ll_of(zeta, bvec, alpha);
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd mu = mu_of(zeta, bvec, alpha);
    Eigen::MatrixXd resid = counts - mu;

    Eigen::VectorXd g = Eigen::VectorXd::Zero(nc);
    g.head(B) = resid.colwise().sum().transpose();
    Eigen::VectorXd theta_resid = resid.transpose() * theta_abs;  // length B
    g.tail(d) = sb.transpose() * theta_resid;
    Eigen::VectorXd g_alpha = resid.rowwise().sum();
    double grad_norm = g.lpNorm<Eigen::Infinity>();
    if (m > 1)
      grad_norm = std::max(grad_norm,
                           g_alpha.tail(m - 1).lpNorm<Eigen::Infinity>());
    if (grad_norm < 1e-8) break;

    // H_cc blocks
    Eigen::VectorXd w1 = mu.colwise().sum().transpose();                // per bin
    Eigen::VectorXd wt = mu.transpose() * theta_abs;                    // per bin
    Eigen::VectorXd wt2 = mu.transpose() * theta_abs.cwiseProduct(theta_abs);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(nc, nc);
    K.topLeftCorner(B, B).diagonal() = w1;
    K.topRightCorner(B, d) = wt.asDiagonal() * sb;
    K.bottomLeftCorner(d, B) = K.topRightCorner(B, d).transpose();
    K.bottomRightCorner(d, d) = sb.transpose() * wt2.asDiagonal() * sb;

    Eigen::VectorXd rhs = g;
    Eigen::VectorXd v(nc);
    for (int i = 1; i < m; ++i) {
      double ai = mu.row(i).sum();
      v.head(B) = mu.row(i).transpose();
      v.tail(d) = theta_abs[i] * (sb.transpose() * mu.row(i).transpose());
      K.noalias() -= v * (v / ai).transpose();
      rhs.noalias() -= (g_alpha[i] / ai) * v;
    }
    K.diagonal().array() += 1e-10 * K.diagonal().maxCoeff();
    Eigen::VectorXd dc = K.ldlt().solve(rhs);
    Eigen::VectorXd dalpha = Eigen::VectorXd::Zero(m);
    for (int i = 1; i < m; ++i) {
      double ai = mu.row(i).sum();
      v.head(B) = mu.row(i).transpose();
      v.tail(d) = theta_abs[i] * (sb.transpose() * mu.row(i).transpose());
      dalpha[i] = (g_alpha[i] - v.dot(dc)) / ai;
    }

    double lambda = 1.0;
    double ll_new = ll_of(zeta + dc.head(B), bvec + dc.tail(d), alpha + dalpha);
    while (!(ll_new >= ll) && lambda > 1e-10) {
      lambda *= 0.5;
      ll_new = ll_of(zeta + lambda * dc.head(B), bvec + lambda * dc.tail(d),
                     alpha + lambda * dalpha);
    }
    zeta += lambda * dc.head(B);
    bvec += lambda * dc.tail(d);
    alpha += lambda * dalpha;
    double change = std::abs(ll_new - ll);
    ll = ll_new;
    if (change <= tol * (std::abs(ll) + 1.0)) break;
  }

  FittedFamily out = fit;
  Eigen::VectorXd beta = bvec;
  int fallback = 0;
  double center = 0.0, scale = 1.0;
  detail::normalize_component(ms, beta, center, scale, fallback);
  out.coef.row(0) = beta.transpose();
  out.center[0] = center;
  out.scale[0] = scale;
  out.sign_fallback[0] = fallback;
  return out;
}

// Alternating refinement: (tilts | statistic) GLM passes, starting and
// ending with a tilt fit so the returned family pairs with a base measure
// fitted against it.
inline FittedFamily refine_fit(FittedFamily fit, const BinnedCounts& binned,
                               const MomentSummary& ms, int rounds = 2,
                               double tol = 1e-10, int max_iter = 100) {
  require(rounds >= 0, errc::invalid_argument, "refine_fit: rounds < 0");
  for (int r = 0; r < rounds; ++r) {
    BaseMeasure bm = fit_base_measure(binned, fit, tol, max_iter);
    fit = polish_coefficients(fit, binned, bm, ms, tol, max_iter);
  }
  return fit;
}

}  // namespace expfam
