#pragma once

// Reference implementations used only by tests. Each one recomputes a
// quantity along a different route than the library, so agreement is
// evidence rather than tautology.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

// Natural cubic spline basis from the textbook truncated-power construction:
//   N_1 = 1, N_2 = x, N_{k+2}(x) = d_k(x) - d_{K-1}(x),
//   d_k(x) = ((x - k_k)_+^3 - (x - k_K)_+^3) / (k_K - k_k).
// Spans the same space as the library's B-spline construction but in a
// completely different parameterization.
struct TruncatedPowerSpline {
  std::vector<double> knots;  // all K knots, increasing

  int dim() const { return static_cast<int>(knots.size()); }

  std::vector<double> eval(double x) const {
    double xc = std::clamp(x, knots.front(), knots.back());
    const int K = dim();
    auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    auto d = [&](int k) {
      return (cube_plus(xc - knots[static_cast<std::size_t>(k)]) -
              cube_plus(xc - knots[static_cast<std::size_t>(K - 1)])) /
             (knots[static_cast<std::size_t>(K - 1)] -
              knots[static_cast<std::size_t>(k)]);
    };
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(K));
    out.push_back(1.0);
    out.push_back(xc);
    for (int k = 0; k + 2 < K; ++k) out.push_back(d(k) - d(K - 2));
    return out;
  }
};

// Literal two-pass between/within computation from raw basis rows.
struct TwoPass {
  Eigen::MatrixXd between;
  Eigen::MatrixXd within;
  Eigen::VectorXd grand_mean;
};

inline TwoPass two_pass_moments(const std::vector<Eigen::MatrixXd>& groups) {
  const int d = static_cast<int>(groups.front().cols());
  const int m = static_cast<int>(groups.size());
  double n_plus = 0.0;
  std::vector<Eigen::VectorXd> means;
  for (const auto& g : groups) {
    means.push_back(g.colwise().mean().transpose());
    n_plus += static_cast<double>(g.rows());
  }
  Eigen::VectorXd grand = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < m; ++i)
    grand += static_cast<double>(groups[static_cast<std::size_t>(i)].rows()) *
             means[static_cast<std::size_t>(i)];
  grand /= n_plus;

  TwoPass out;
  out.grand_mean = grand;
  out.between = Eigen::MatrixXd::Zero(d, d);
  out.within = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < m; ++i) {
    const auto& g = groups[static_cast<std::size_t>(i)];
    Eigen::VectorXd dev = means[static_cast<std::size_t>(i)] - grand;
    out.between += static_cast<double>(g.rows()) * dev * dev.transpose();
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::VectorXd e =
          g.row(r).transpose() - means[static_cast<std::size_t>(i)];
      out.within += e * e.transpose();
    }
  }
  out.between /= (m - 1);
  out.within /= (n_plus - m);
  return out;
}

// Binomial(n, 1/2) lower tail by direct accumulation of the pmf.
inline double binom_half_tail(long n, long k) {
  double p = std::pow(0.5, static_cast<double>(n));
  double tail = 0.0;
  for (long j = 0; j <= k; ++j) {
    tail += p;
    p *= static_cast<double>(n - j) / static_cast<double>(j + 1);
  }
  return tail;
}

}  // namespace oracle
