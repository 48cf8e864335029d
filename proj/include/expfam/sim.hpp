#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "expfam/dataset.hpp"
#include "expfam/error.hpp"
#include "expfam/parallel.hpp"
#include "expfam/rng.hpp"

namespace expfam {

enum class SimFamily { laplace, loggamma };

struct SimConfig {
  SimFamily family = SimFamily::laplace;
  int m = 1;
  int n_per_group = 1;
  double theta_mean = 0.0;
  double theta_sd = 0.0;
  std::uint64_t seed = 0;
};

struct SimData {
  Dataset data;
  std::vector<double> theta_true;
};

namespace detail {

inline std::string group_label(int i, int m) {
  int width = 1;
  for (int v = m - 1; v >= 10; v /= 10) ++width;
  std::string digits = std::to_string(i);
  return "g" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') +
         digits;
}

inline double laplace_from_uniform(double u) {
  // inverse CDF of the standard Laplace
  return u < 0.5 ? std::log(2.0 * u) : -std::log(2.0 * (1.0 - u));
}

}  // namespace detail

// Laplace location family: X = theta_i + L with L standard Laplace via
// inverse CDF; theta_i ~ Normal(mean, sd^2). Each group has its own RNG
// substream, so draws are stable under changes to m or the worker count.
inline SimData gen_laplace(const SimConfig& cfg, int workers = 1) {
  require(cfg.m >= 1 && cfg.n_per_group >= 1, errc::invalid_argument,
          "gen_laplace: m and n must be positive");
  require(cfg.theta_sd >= 0.0, errc::invalid_argument, "gen_laplace: sd < 0");
  SimData out;
  out.data.groups.resize(static_cast<std::size_t>(cfg.m));
  out.theta_true.resize(static_cast<std::size_t>(cfg.m));
  Rng master(cfg.seed);
  parallel_for(cfg.m, workers, [&](int i) {
    Rng rng = master.substream(static_cast<std::uint64_t>(i));
    double theta = cfg.theta_mean + cfg.theta_sd * rng.normal();
    Group g;
    g.id = detail::group_label(i, cfg.m);
    g.values.resize(static_cast<std::size_t>(cfg.n_per_group));
    for (auto& v : g.values)
      v = theta + detail::laplace_from_uniform(rng.uniform_open());
    out.data.groups[static_cast<std::size_t>(i)] = std::move(g);
    out.theta_true[static_cast<std::size_t>(i)] = theta;
  });
  return out;
}

// Log-gamma family: log X ~ Gamma(shape theta_i, scale 0.4), support x > 1.
// theta_i ~ Normal(mean, sd^2) with non-positive draws resampled.
inline SimData gen_loggamma(const SimConfig& cfg, int workers = 1) {
  require(cfg.m >= 1 && cfg.n_per_group >= 1, errc::invalid_argument,
          "gen_loggamma: m and n must be positive");
  require(cfg.theta_sd >= 0.0, errc::invalid_argument, "gen_loggamma: sd < 0");
  require(cfg.theta_mean > 0.0 || cfg.theta_sd > 0.0, errc::invalid_argument,
          "gen_loggamma: theta law must allow positive shapes");
  SimData out;
  out.data.groups.resize(static_cast<std::size_t>(cfg.m));
  out.theta_true.resize(static_cast<std::size_t>(cfg.m));
  Rng master(cfg.seed);
  parallel_for(cfg.m, workers, [&](int i) {
    Rng rng = master.substream(static_cast<std::uint64_t>(i));
    double theta;
    do {
      theta = cfg.theta_mean + cfg.theta_sd * rng.normal();
    } while (theta <= 0.0);
    Group g;
    g.id = detail::group_label(i, cfg.m);
    g.values.resize(static_cast<std::size_t>(cfg.n_per_group));
    for (auto& v : g.values) v = std::exp(rng.gamma(theta, 0.4));
    out.data.groups[static_cast<std::size_t>(i)] = std::move(g);
    out.theta_true[static_cast<std::size_t>(i)] = theta;
  });
  return out;
}

inline SimData generate(const SimConfig& cfg, int workers = 1) {
  return cfg.family == SimFamily::laplace ? gen_laplace(cfg, workers)
                                          : gen_loggamma(cfg, workers);
}

// The score of the generating family, centered and scaled: sgn(x) for the
// Laplace location family, 1.6 log(log x) + 0.014 for the log-gamma family.
inline double true_score(SimFamily family, double x) {
  if (family == SimFamily::laplace) return x < 0.0 ? -1.0 : (x > 0.0 ? 1.0 : 0.0);
  require(x > 1.0, errc::invalid_argument,
          "OutOfSupport: log-gamma score needs x > 1");
  return 1.6 * std::log(std::log(x)) + 0.014;
}

inline void write_raw_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), errc::io_error, "cannot write " + path);
  out << "group_id,value\n";
  char buf[64];
  for (const auto& g : ds.groups)
    for (double v : g.values) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << g.id << ',' << buf << '\n';
    }
}

inline void write_truth_csv(const SimData& sim, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), errc::io_error, "cannot write " + path);
  out << "group_id,theta_true\n";
  char buf[64];
  for (std::size_t i = 0; i < sim.data.groups.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", sim.theta_true[i]);
    out << sim.data.groups[i].id << ',' << buf << '\n';
  }
}

}  // namespace expfam
