#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "expfam/sim.hpp"
#include "expfam/util.hpp"

using namespace expfam;

TEST_CASE("laplace: known moments at the origin") {
  SimConfig cfg;
  cfg.family = SimFamily::laplace;
  cfg.m = 4;
  cfg.n_per_group = 20000;
  cfg.theta_mean = 0.0;
  cfg.theta_sd = 0.0;
  cfg.seed = 9;
  SimData sim = gen_laplace(cfg);
  for (const auto& g : sim.data.groups) {
    std::vector<double> sorted = g.values;
    std::sort(sorted.begin(), sorted.end());
    double median = quantile_sorted(sorted, 0.5);
    double var = variance_of(g.values);
    // sd(median) ~ 1/sqrt(4n f(0)^2) = 1/sqrt(n) for Laplace
    CHECK(std::abs(median) < 4.0 / std::sqrt(20000.0));
    // Var = 2; sample variance sd ~ sqrt((E X^4 - var^2)/n) = sqrt(20/n)
    CHECK(std::abs(var - 2.0) < 4.0 * std::sqrt(20.0 / 20000.0));
  }
  for (double theta : sim.theta_true) CHECK(theta == 0.0);
}

TEST_CASE("laplace: empirical CDF against the analytic CDF") {
  SimConfig cfg;
  cfg.family = SimFamily::laplace;
  cfg.m = 1;
  cfg.n_per_group = 5000;
  cfg.theta_sd = 0.0;
  cfg.seed = 123;
  SimData sim = gen_laplace(cfg);
  std::vector<double> xs = sim.data.groups[0].values;
  std::sort(xs.begin(), xs.end());
  auto laplace_cdf = [](double x) {
    return x < 0 ? 0.5 * std::exp(x) : 1.0 - 0.5 * std::exp(-x);
  };
  double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double f = laplace_cdf(xs[i]);
    d = std::max(d, std::abs((i + 1.0) / n - f));
    d = std::max(d, std::abs(f - i / n));
  }
  CHECK(d < 1.36 / std::sqrt(n));  // 95% KS band
}

TEST_CASE("determinism and substream stability") {
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 5;
  cfg.n_per_group = 50;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.5;
  cfg.seed = 77;
  SimData a = gen_loggamma(cfg);
  SimData b = gen_loggamma(cfg);
  for (std::size_t g = 0; g < a.data.groups.size(); ++g) {
    CHECK(a.theta_true[g] == b.theta_true[g]);
    for (std::size_t j = 0; j < a.data.groups[g].values.size(); ++j)
      CHECK(a.data.groups[g].values[j] == b.data.groups[g].values[j]);
  }

  // enlarging m or the worker count must not change earlier groups' draws
  SimConfig wide = cfg;
  wide.m = 9;
  SimData c = gen_loggamma(wide);
  SimData d4 = gen_loggamma(wide, 4);
  for (std::size_t g = 0; g < a.data.groups.size(); ++g) {
    CHECK(a.theta_true[g] == c.theta_true[g]);
    for (std::size_t j = 0; j < a.data.groups[g].values.size(); ++j) {
      CHECK(a.data.groups[g].values[j] == c.data.groups[g].values[j]);
      CHECK(c.data.groups[g].values[j] == d4.data.groups[g].values[j]);
    }
  }
}

TEST_CASE("loggamma: support and moments") {
  SimConfig cfg;
  cfg.family = SimFamily::loggamma;
  cfg.m = 3;
  cfg.n_per_group = 40000;
  cfg.theta_mean = 3.0;
  cfg.theta_sd = 0.0;  // fix the shape at 3
  cfg.seed = 2;
  SimData sim = gen_loggamma(cfg);
  for (const auto& g : sim.data.groups) {
    double min_x = *std::min_element(g.values.begin(), g.values.end());
    CHECK(min_x > 1.0);  // support of exp(Gamma)

    // E X = 0.6^-3; heavy tail, so give the mean a wide band
    double mean = mean_of(g.values);
    double expect = std::pow(0.6, -3.0);
    double sd_x = std::sqrt(std::pow(0.2, -3.0) - expect * expect);
    CHECK(std::abs(mean - expect) <= 4.0 * sd_x / std::sqrt(40000.0));

    // the log is Gamma(3, 0.4): mean 1.2, var 0.48
    std::vector<double> logs(g.values.size());
    for (std::size_t i = 0; i < logs.size(); ++i) logs[i] = std::log(g.values[i]);
    CHECK(mean_of(logs) == Catch::Approx(1.2).margin(0.02));
    CHECK(variance_of(logs) == Catch::Approx(0.48).margin(0.03));
  }
}

TEST_CASE("true_score: values and support errors") {
  CHECK(true_score(SimFamily::laplace, -3.0) == -1.0);
  CHECK(true_score(SimFamily::laplace, 2.0) == 1.0);
  CHECK(true_score(SimFamily::laplace, 0.0) == 0.0);
  double e_to_e = std::exp(std::exp(1.0));
  CHECK(true_score(SimFamily::loggamma, e_to_e) == Catch::Approx(1.614).epsilon(1e-9));
  CHECK_THROWS_AS(true_score(SimFamily::loggamma, 0.5), Error);
}

TEST_CASE("config validation") {
  SimConfig cfg;
  cfg.m = 0;
  CHECK_THROWS_AS(gen_laplace(cfg), Error);
  cfg.m = 2;
  cfg.n_per_group = 5;
  cfg.theta_sd = -1.0;
  CHECK_THROWS_AS(gen_laplace(cfg), Error);
}
