#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "expfam/base_measure.hpp"
#include "expfam/scan.hpp"
#include "expfam/sim.hpp"
#include "expfam/spectral.hpp"

using namespace expfam;

namespace {

// FittedFamily evaluating to T(x) = x; lets tests control the GLM offsets.
FittedFamily identity_family(double lo = -1e3, double hi = 1e3) {
  std::vector<std::vector<std::vector<double>>> coef{
      {{1.0}},
      {{lo, 1.0}},  // local coordinate u = x - lo, so lo + u = x
  };
  FittedFamily fit;
  fit.basis = make_piecewise_basis({lo, hi}, coef, lo, hi);
  fit.k = 1;
  fit.coef = Eigen::MatrixXd::Zero(1, 2);
  fit.coef(0, 1) = 1.0;
  fit.center = Eigen::VectorXd::Zero(1);
  fit.scale = Eigen::VectorXd::Ones(1);
  fit.eigenvalues = Eigen::VectorXd::Zero(2);
  fit.sign_fallback = {0};
  return fit;
}

long knuth_poisson(Rng& rng, double lambda) {
  double limit = std::exp(-lambda);
  long k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= rng.uniform_open();
  } while (p > limit);
  return k - 1;
}

}  // namespace

TEST_CASE("bin_data: atoms collapse into atom bins") {
  Dataset ds;
  ds.groups.push_back({"a", {1.0, 1.0}, {}});
  ds.groups.push_back({"b", {2.0, 2.0}, {}});
  BinnedCounts bc = bin_data(ds, 2);
  REQUIRE(bc.rep.size() == 2);
  CHECK(bc.rep[0] == 1.0);
  CHECK(bc.rep[1] == 2.0);
  CHECK(bc.counts(0, 0) == 2.0);
  CHECK(bc.counts(0, 1) == 0.0);
  CHECK(bc.counts(1, 1) == 2.0);
}

TEST_CASE("bin_data: quantile bins are balanced and exhaustive") {
  Rng rng(3);
  Dataset ds;
  ds.groups.resize(4);
  for (int g = 0; g < 4; ++g) {
    ds.groups[static_cast<std::size_t>(g)].id = "g" + std::to_string(g);
    for (int i = 0; i < 5000; ++i)
      ds.groups[static_cast<std::size_t>(g)].values.push_back(rng.uniform());
  }
  BinnedCounts bc = bin_data(ds, 20);
  REQUIRE(bc.counts.cols() == 20);
  Eigen::VectorXd per_bin = bc.counts.colwise().sum();
  double expect = 20000.0 / 20.0;
  double sigma = std::sqrt(20000.0 * (1.0 / 20) * (19.0 / 20));
  for (int b = 0; b < 20; ++b)
    CHECK(std::abs(per_bin[b] - expect) <= 4.0 * sigma);
  for (int g = 0; g < 4; ++g)
    CHECK(bc.counts.row(g).sum() == 5000.0);  // every observation lands somewhere
  for (int b = 0; b < 20; ++b) {
    CHECK(bc.rep[static_cast<std::size_t>(b)] >= bc.edges[static_cast<std::size_t>(b)]);
    CHECK(bc.rep[static_cast<std::size_t>(b)] <= bc.edges[static_cast<std::size_t>(b) + 1]);
  }
}

TEST_CASE("bin_data: errors") {
  Dataset empty;
  CHECK_THROWS_AS(bin_data(empty, 10), Error);
  Dataset ds;
  ds.groups.push_back({"a", {1.0, 2.0}, {}});
  CHECK_THROWS_AS(bin_data(ds, 1), Error);
}

TEST_CASE("glm: single group with theta fixed reproduces the histogram") {
  Rng rng(17);
  Dataset ds;
  ds.groups.push_back({"only", {}, {}});
  for (int i = 0; i < 3000; ++i) ds.groups[0].values.push_back(rng.normal());
  BinnedCounts bc = bin_data(ds, 25);
  FittedFamily fit = identity_family();
  BaseMeasure bm = fit_base_measure(bc, fit);
  REQUIRE(bm.converged);
  double n = 3000.0;
  for (int b = 0; b < 25; ++b) {
    double expected = std::log(bc.counts(0, b) / n);
    CHECK(bm.zeta[static_cast<std::size_t>(b)] ==
          Catch::Approx(expected).margin(1e-9));
  }
}

TEST_CASE("glm: recovers parameters of data simulated from the model") {
  // truth on 8 bins, 2 groups; counts drawn from the Poisson model itself
  const int B = 8, m = 2;
  std::vector<double> xb{-1.4, -1.0, -0.6, -0.2, 0.2, 0.6, 1.0, 1.4};
  std::vector<double> zeta_true{-2.2, -1.9, -2.4, -1.7, -2.0, -2.3, -1.8, -2.1};
  std::vector<double> alpha_true{std::log(900.0), std::log(1400.0)};
  std::vector<double> theta_true{-0.3, 0.5};

  Rng rng(4242);
  BinnedCounts bc;
  bc.edges.resize(static_cast<std::size_t>(B) + 1);
  for (int b = 0; b <= B; ++b)
    bc.edges[static_cast<std::size_t>(b)] = -1.6 + 0.4 * b;
  bc.rep = xb;
  bc.groups = {"a", "b"};
  bc.counts.resize(m, B);
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < B; ++b) {
      double mu = std::exp(alpha_true[static_cast<std::size_t>(i)] +
                           zeta_true[static_cast<std::size_t>(b)] +
                           theta_true[static_cast<std::size_t>(i)] *
                               xb[static_cast<std::size_t>(b)]);
      bc.counts(i, b) = static_cast<double>(knuth_poisson(rng, mu));
    }

  FittedFamily fit = identity_family();
  BaseMeasure bm = fit_base_measure(bc, fit);
  REQUIRE(bm.converged);

  // dense-Hessian oracle in the reduced gauge (alpha_0 = theta_0 = 0):
  // parameters [zeta_0..zeta_7, alpha_1, theta_1]
  Eigen::MatrixXd mu_hat(m, B);
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < B; ++b)
      mu_hat(i, b) = std::exp(bm.alpha[static_cast<std::size_t>(i)] +
                              bm.zeta[static_cast<std::size_t>(b)] +
                              bm.theta[static_cast<std::size_t>(i)] *
                                  bm.tval[static_cast<std::size_t>(b)]);
  const int P = B + 2;
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(P, P);
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < B; ++b) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(P);
      row[b] = 1.0;
      if (i == 1) {
        row[B] = 1.0;
        row[B + 1] = xb[static_cast<std::size_t>(b)];
      }
      hess += mu_hat(i, b) * row * row.transpose();
    }
  Eigen::MatrixXd cov = hess.inverse();

  // gauge-invariant comparisons: the theta contrast and group-0 cell means
  double contrast_hat = bm.theta[1] - bm.theta[0];
  double contrast_true = theta_true[1] - theta_true[0];
  double se_contrast = std::sqrt(cov(B + 1, B + 1));
  CHECK(std::abs(contrast_hat - contrast_true) <= 3.0 * se_contrast);
  for (int b = 0; b < B; ++b) {
    double log_mu_hat = std::log(mu_hat(0, b));
    double log_mu_true = alpha_true[0] + zeta_true[static_cast<std::size_t>(b)] +
                         theta_true[0] * xb[static_cast<std::size_t>(b)];
    CHECK(std::abs(log_mu_hat - log_mu_true) <= 3.0 * std::sqrt(cov(b, b)));
  }

  // score equations at the optimum
  for (int i = 0; i < m; ++i) {
    double fitted = mu_hat.row(i).sum();
    double observed = bc.counts.row(i).sum();
    CHECK(std::abs(fitted - observed) / observed <= 1e-6);
    double tfit = 0.0, tobs = 0.0;
    for (int b = 0; b < B; ++b) {
      tfit += mu_hat(i, b) * bm.tval[static_cast<std::size_t>(b)];
      tobs += bc.counts(i, b) * bm.tval[static_cast<std::size_t>(b)];
    }
    CHECK(std::abs(tfit - tobs) / (std::abs(tobs) + 1.0) <= 1e-6);
  }
  for (int b = 0; b < B; ++b) {
    double fitted = mu_hat.col(b).sum();
    double observed = bc.counts.col(b).sum();
    CHECK(std::abs(fitted - observed) / observed <= 1e-6);
  }

  // identifiability constraints after re-gauging
  double lse = 0.0;
  for (double z : bm.zeta) lse += std::exp(z);
  CHECK(lse == Catch::Approx(1.0).epsilon(1e-12));
  double wsum = 0.0;
  for (int i = 0; i < m; ++i)
    wsum += bm.group_n[static_cast<std::size_t>(i)] *
            bm.theta[static_cast<std::size_t>(i)];
  CHECK(std::abs(wsum) / bc.counts.sum() < 1e-12);
}

TEST_CASE("glm: ascent, separation handling, and convergence flags") {
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 6;
  cfg.n_per_group = 500;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.4;
  cfg.seed = 7;
  SimData sim = gen_loggamma(cfg);
  BasisSpec spec = make_spline_basis(6, sim.data.pooled_values());
  FittedFamily fit = fit_sufficient_statistic(scan_dataset(sim.data, spec), 1);
  BinnedCounts bc = bin_data(sim.data, 30);

  // inject an empty bin: it must be dropped with zero mass, not crash
  BinnedCounts with_gap = bc;
  with_gap.counts.conservativeResize(Eigen::NoChange, bc.counts.cols() + 1);
  with_gap.counts.col(bc.counts.cols()).setZero();
  with_gap.rep.push_back(with_gap.edges.back() + 1.0);
  with_gap.edges.push_back(with_gap.edges.back() + 2.0);
  BaseMeasure bm = fit_base_measure(with_gap, fit);
  CHECK(bm.dropped_bins == 1);
  CHECK(bm.converged);
  CHECK(bm.x.size() == static_cast<std::size_t>(bc.counts.cols()));

  for (std::size_t i = 1; i < bm.ll_trace.size(); ++i)
    CHECK(bm.ll_trace[i] >= bm.ll_trace[i - 1] - 1e-9);
  CHECK(bm.grad_norm < 1e-6);
}

TEST_CASE("density: normalization and the null tilt") {
  Rng rng(12);
  Dataset ds;
  ds.groups.resize(3);
  for (int g = 0; g < 3; ++g) {
    ds.groups[static_cast<std::size_t>(g)].id = "g" + std::to_string(g);
    for (int i = 0; i < 2000; ++i)
      ds.groups[static_cast<std::size_t>(g)].values.push_back(rng.normal() +
                                                              0.05 * g);
  }
  BasisSpec spec = make_spline_basis(5, ds.pooled_values());
  FittedFamily fit = fit_sufficient_statistic(scan_dataset(ds, spec), 1);
  BaseMeasure bm = fit_base_measure(bin_data(ds, 40), fit);

  auto p0 = density(bm, 0.0);
  for (std::size_t b = 0; b < p0.size(); ++b)
    CHECK(p0[b] == Catch::Approx(std::exp(bm.zeta[b])).epsilon(1e-12));
  for (double theta : {-2.0, -0.5, 0.0, 0.7, 3.0, 25.0}) {
    auto mass = density(bm, theta);
    double sum = 0.0;
    for (double v : mass) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("mean_map: definition, slope identity, monotonicity") {
  Rng rng(21);
  Dataset ds;
  ds.groups.resize(2);
  for (int g = 0; g < 2; ++g) {
    ds.groups[static_cast<std::size_t>(g)].id = "g" + std::to_string(g);
    for (int i = 0; i < 3000; ++i)
      ds.groups[static_cast<std::size_t>(g)].values.push_back(
          rng.normal() * (1.0 + 0.1 * g));
  }
  BasisSpec spec = make_spline_basis(5, ds.pooled_values());
  FittedFamily fit = fit_sufficient_statistic(scan_dataset(ds, spec), 1);
  BaseMeasure bm = fit_base_measure(bin_data(ds, 30), fit);

  double m0 = mean_map(bm, 0.0);
  double direct = 0.0;
  for (std::size_t b = 0; b < bm.x.size(); ++b)
    direct += bm.x[b] * std::exp(bm.zeta[b]);
  CHECK(m0 == Catch::Approx(direct).epsilon(1e-12));

  // finite-difference slope equals Cov_theta(X, T)
  const double h = 1e-5;
  for (double theta : {-1.0, 0.0, 0.4, 2.0}) {
    double fd = (mean_map(bm, theta + h) - mean_map(bm, theta - h)) / (2.0 * h);
    double cov = mean_map_slope(bm, theta);
    CHECK(fd == Catch::Approx(cov).epsilon(1e-6));
  }

  // corr(T, x) > 0 held, so the mean map rises at every probed theta
  for (int g = 0; g <= 50; ++g) {
    double theta = -2.0 + 4.0 * g / 50.0;
    CHECK(mean_map_slope(bm, theta) > 0.0);
  }
}

TEST_CASE("glm: analytic gradient matches central finite differences") {
  Rng rng(55);
  detail::GlmProblem prob;
  const int m = 4, B = 7;
  prob.counts.resize(m, B);
  prob.t.resize(B);
  for (int b = 0; b < B; ++b) prob.t[b] = rng.normal();
  for (int i = 0; i < m; ++i)
    for (int b = 0; b < B; ++b)
      prob.counts(i, b) = static_cast<double>(rng.below(40));

  Eigen::VectorXd pack(prob.nparam());
  for (int p = 0; p < pack.size(); ++p) pack[p] = 0.3 * rng.normal();
  Eigen::VectorXd grad = prob.gradient(pack);
  const double h = 1e-5;
  for (int p = 0; p < pack.size(); ++p) {
    Eigen::VectorXd hi = pack, lo = pack;
    hi[p] += h;
    lo[p] -= h;
    double fd = (prob.loglik(hi) - prob.loglik(lo)) / (2.0 * h);
    CHECK(std::abs(fd - grad[p]) <= 1e-5 * (std::abs(grad[p]) + 1.0));
  }
}

TEST_CASE("glm: fitted group densities track group sample means") {
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 20;
  cfg.n_per_group = 2000;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.4;
  cfg.seed = 31;
  SimData sim = gen_loggamma(cfg);
  BasisSpec spec = make_spline_basis(9, sim.data.pooled_values());
  FittedFamily fit = fit_sufficient_statistic(scan_dataset(sim.data, spec), 1);
  BaseMeasure bm = fit_base_measure(bin_data(sim.data, 60), fit);
  REQUIRE(bm.converged);

  int within = 0;
  for (int i = 0; i < cfg.m; ++i) {
    const auto& vals = sim.data.groups[static_cast<std::size_t>(i)].values;
    double mean = mean_of(vals);
    double se = std::sqrt(variance_of(vals) / static_cast<double>(vals.size()));
    double fitted = mean_map(bm, bm.theta[static_cast<std::size_t>(i)]);
    if (std::abs(fitted - mean) <= 3.0 * se) ++within;
  }
  CHECK(within >= 18);  // 90% of groups
}
