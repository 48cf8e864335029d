#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "expfam/basis.hpp"
#include "expfam/error.hpp"
#include "expfam/inference.hpp"
#include "expfam/rng.hpp"
#include "expfam/scan.hpp"
#include "expfam/spectral.hpp"

namespace expfam {

// A competing basis under cross-validation: a name for reporting, the df it
// advertises, and a factory from pooled training values.
struct CvCandidate {
  std::string name;
  int df = 0;
  std::function<BasisSpec(std::span<const double>)> make;
};

inline CvCandidate spline_candidate(int df) {
  return CvCandidate{"spline", df,
                     [df](std::span<const double> v) { return make_spline_basis(df, v); }};
}

inline CvCandidate fixed_candidate(std::string name, const BasisSpec& spec) {
  return CvCandidate{std::move(name), spec.df,
                     [spec](std::span<const double>) { return spec; }};
}

struct CvReport {
  std::vector<std::string> names;
  std::vector<int> dfs;
  std::vector<int> rejections;
  int chosen = 0;
  int folds = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // fold assignment per dataset group
  // the fit actually used to test each fold, per candidate; lets callers
  // verify that held-out data never leaks into the fit
  std::vector<Eigen::MatrixXd> fold_coef;
};

// Group-level cross-validation of the basis choice. Groups are split into
// folds; per candidate the statistic is fitted on the training folds and
// held-out groups are paired consecutively (by id) into level-alpha z-tests.
// The candidate with the most held-out rejections wins; ties go to the
// smallest df, then list order.
inline CvReport cross_validate(const Dataset& ds,
                               const std::vector<CvCandidate>& candidates,
                               int folds, double alpha, std::uint64_t seed) {
  require(candidates.size() >= 2, errc::invalid_argument,
          "cross_validate: need at least 2 candidates");
  require(folds >= 2, errc::invalid_argument, "cross_validate: folds < 2");
  const int m = static_cast<int>(ds.groups.size());
  require(m >= 2 * folds, errc::insufficient_groups,
          "InsufficientGroups: need m >= 2*folds");

  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  std::vector<int> fold_of(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] =
        i % folds;

  CvReport report;
  report.folds = folds;
  report.alpha = alpha;
  report.seed = seed;
  report.fold_of = fold_of;
  for (const auto& cand : candidates) {
    report.names.push_back(cand.name);
    report.dfs.push_back(cand.df);
    report.fold_coef.emplace_back();
  }
  report.rejections.assign(candidates.size(), 0);

  for (int f = 0; f < folds; ++f) {
    Dataset train;
    std::vector<int> held;
    for (int i = 0; i < m; ++i) {
      if (fold_of[static_cast<std::size_t>(i)] == f)
        held.push_back(i);
      else
        train.groups.push_back(ds.groups[static_cast<std::size_t>(i)]);
    }
    std::sort(held.begin(), held.end(), [&](int a, int b) {
      return ds.groups[static_cast<std::size_t>(a)].id <
             ds.groups[static_cast<std::size_t>(b)].id;
    });
    std::vector<double> pooled = train.pooled_values();

    for (std::size_t c = 0; c < candidates.size(); ++c) {
      BasisSpec spec = candidates[c].make(pooled);
      FittedFamily fit =
          fit_sufficient_statistic(scan_dataset(train, spec), 1);
      auto& store = report.fold_coef[c];
      if (store.rows() == 0) store.resize(folds, fit.coef.cols());
      if (store.cols() == fit.coef.cols()) store.row(f) = fit.coef.row(0);
      auto stat = [&](double x) { return eval_T(fit, x, 0); };
      for (std::size_t p = 0; p + 1 < held.size(); p += 2) {
        const auto& ga = ds.groups[static_cast<std::size_t>(held[p])];
        const auto& gb = ds.groups[static_cast<std::size_t>(held[p + 1])];
        try {
          TestResult tr = z_test(ga.values, gb.values, stat, alpha);
          if (tr.reject) ++report.rejections[c];
        } catch (const Error& e) {
          if (e.code() != errc::degenerate_variance) throw;
        }
      }
    }
  }

  int best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c) {
    bool better = report.rejections[c] > report.rejections[static_cast<std::size_t>(best)];
    bool tie = report.rejections[c] == report.rejections[static_cast<std::size_t>(best)];
    if (better || (tie && report.dfs[c] < report.dfs[static_cast<std::size_t>(best)]))
      best = static_cast<int>(c);
  }
  report.chosen = best;
  return report;
}

}  // namespace expfam
