#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "expfam/basis.hpp"
#include "expfam/dataset.hpp"
#include "expfam/error.hpp"
#include "expfam/parallel.hpp"

namespace expfam {

// Per-group running sums. Sums of basis evaluations and of their outer
// products, so merging shards is an exact component-wise addition and the
// final moment formulas need no second pass over the data. Also carries the
// first moments of x itself, which the fit needs for the sign rule.
struct GroupAccumulator {
  std::string group;
  std::uint64_t spec_version = 0;
  double n = 0.0;  // weighted count
  Eigen::VectorXd sum_s;
  Eigen::MatrixXd sum_ss;  // lower triangle maintained, symmetrized on read
  double sum_x = 0.0;
  double sum_xx = 0.0;
  Eigen::VectorXd sum_xs;

  GroupAccumulator() = default;
  GroupAccumulator(std::string id, const BasisSpec& spec)
      : group(std::move(id)),
        spec_version(spec.version),
        sum_s(Eigen::VectorXd::Zero(spec.df)),
        sum_ss(Eigen::MatrixXd::Zero(spec.df, spec.df)),
        sum_xs(Eigen::VectorXd::Zero(spec.df)) {}
};

struct MomentSummary {
  BasisSpec basis;
  int m = 0;          // number of groups
  double n_plus = 0;  // total (weighted) observation count
  std::vector<std::string> group_ids;
  std::vector<double> group_n;
  Eigen::MatrixXd group_means;  // m x d
  Eigen::VectorXd grand_mean;
  Eigen::MatrixXd between;  // A-hat
  Eigen::MatrixXd within;   // W-hat
  // pooled moments of the raw metric, for the sign rule
  double sum_x = 0.0;
  double sum_xx = 0.0;
  Eigen::VectorXd sum_xs;
};

// Adds one observation (optionally weighted, for pre-binned data).
inline void accumulate(GroupAccumulator& acc, double x, const BasisSpec& spec,
                       Eigen::VectorXd& scratch, double weight = 1.0) {
  require(std::isfinite(x), errc::non_finite_input, "NonFiniteInput: accumulate");
  require(acc.spec_version == spec.version, errc::spec_mismatch,
          "SpecMismatch: accumulator built against a different basis");
  eval_basis(spec, x, scratch);
  acc.n += weight;
  acc.sum_s.noalias() += weight * scratch;
  acc.sum_ss.selfadjointView<Eigen::Lower>().rankUpdate(scratch, weight);
  acc.sum_x += weight * x;
  acc.sum_xx += weight * x * x;
  acc.sum_xs.noalias() += (weight * x) * scratch;
}

inline void accumulate(GroupAccumulator& acc, double x, const BasisSpec& spec,
                       double weight = 1.0) {
  Eigen::VectorXd scratch;
  accumulate(acc, x, spec, scratch, weight);
}

// merge(a, empty) == a; associative and commutative as sums of the same
// addends (bit-exact only under a fixed summation order).
inline GroupAccumulator merge(const GroupAccumulator& a,
                              const GroupAccumulator& b) {
  require(a.spec_version == b.spec_version, errc::spec_mismatch,
          "SpecMismatch: cannot merge accumulators of different basis versions");
  require(a.group == b.group, errc::group_mismatch,
          "GroupMismatch: cannot merge accumulators of different groups");
  GroupAccumulator out = a;
  out.n += b.n;
  out.sum_s += b.sum_s;
  out.sum_ss += b.sum_ss;
  out.sum_x += b.sum_x;
  out.sum_xx += b.sum_xx;
  out.sum_xs += b.sum_xs;
  return out;
}

namespace detail {

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& lower) {
  Eigen::MatrixXd full = lower.selfadjointView<Eigen::Lower>();
  return full;
}

// Clamps tiny negative eigenvalues (roundoff from the one-pass identity)
// to zero.
inline Eigen::MatrixXd truncate_psd(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd ev = es.eigenvalues();
  if ((ev.array() >= 0.0).all()) return sym;
  for (int i = 0; i < ev.size(); ++i) ev[i] = std::max(ev[i], 0.0);
  Eigen::MatrixXd out =
      es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

// Collapses per-group accumulators into the between/within moment matrices:
//   A = (m-1)^-1 sum_i n_i (mean_i - mean)(mean_i - mean)'
//   W = (n+-m)^-1 sum_i [sum_j S_j S_j' - n_i mean_i mean_i']
// A is formed from explicitly centered group means; W uses the per-group
// one-pass identity.
inline MomentSummary finalize(const std::vector<GroupAccumulator>& accs,
                              const BasisSpec& spec) {
  std::vector<const GroupAccumulator*> live;
  for (const auto& a : accs) {
    require(a.spec_version == spec.version, errc::spec_mismatch,
            "SpecMismatch: finalize");
    if (a.n > 0) live.push_back(&a);
  }
  int m = static_cast<int>(live.size());
  require(m >= 2, errc::insufficient_groups,
          "InsufficientGroups: need at least 2 groups");
  int d = spec.df;

  MomentSummary ms;
  ms.basis = spec;
  ms.m = m;
  ms.group_ids.reserve(live.size());
  ms.group_n.reserve(live.size());
  ms.group_means.resize(m, d);
  ms.sum_xs = Eigen::VectorXd::Zero(d);

  for (int i = 0; i < m; ++i) {
    const auto& a = *live[static_cast<std::size_t>(i)];
    ms.group_ids.push_back(a.group);
    ms.group_n.push_back(a.n);
    ms.group_means.row(i) = (a.sum_s / a.n).transpose();
    ms.n_plus += a.n;
    ms.sum_x += a.sum_x;
    ms.sum_xx += a.sum_xx;
    ms.sum_xs += a.sum_xs;
  }
  require(ms.n_plus - m >= 1.0, errc::no_within_df,
          "NoWithinDf: n+ - m must be at least 1");

  Eigen::VectorXd grand = Eigen::VectorXd::Zero(d);
  for (int i = 0; i < m; ++i)
    grand += ms.group_n[static_cast<std::size_t>(i)] *
             ms.group_means.row(i).transpose();
  grand /= ms.n_plus;
  ms.grand_mean = grand;

  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < m; ++i) {
    const auto& a = *live[static_cast<std::size_t>(i)];
    Eigen::VectorXd mean_i = ms.group_means.row(i).transpose();
    Eigen::VectorXd dev = mean_i - grand;
    between.selfadjointView<Eigen::Lower>().rankUpdate(dev, a.n);
    within += detail::symmetrized(a.sum_ss);
    within.selfadjointView<Eigen::Lower>().rankUpdate(mean_i, -a.n);
  }
  ms.between = detail::truncate_psd(detail::symmetrized(between) / (m - 1));
  ms.within =
      detail::truncate_psd(detail::symmetrized(within) / (ms.n_plus - m));
  return ms;
}

// One parallelizable pass over the dataset. The data is cut into a fixed
// number of shards (independent of the worker count), each shard is scanned
// sequentially, and shard results are merged in shard order — so the output
// is bit-identical for any number of workers.
inline std::vector<GroupAccumulator> scan_groups(const Dataset& ds,
                                                 const BasisSpec& spec,
                                                 int workers = 1,
                                                 int shards = 64) {
  struct Slice {
    std::size_t group;
    std::size_t begin, end;
  };
  std::vector<std::vector<Slice>> plan;
  std::size_t total = ds.total_values();
  require(total > 0, errc::empty_data, "scan of empty dataset");
  shards = std::max(1, std::min<int>(shards, static_cast<int>(total)));
  plan.resize(static_cast<std::size_t>(shards));
  std::size_t flat = 0;
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    std::size_t n = ds.groups[g].values.size();
    std::size_t off = 0;
    while (off < n) {
      std::size_t shard = (flat + off) * static_cast<std::size_t>(shards) / total;
      shard = std::min(shard, static_cast<std::size_t>(shards - 1));
      std::size_t shard_end = (shard + 1 == static_cast<std::size_t>(shards))
                                  ? total
                                  : ((shard + 1) * total + shards - 1) /
                                        static_cast<std::size_t>(shards);
      std::size_t take = std::min(n - off, shard_end - (flat + off));
      if (take == 0) take = 1;
      plan[shard].push_back(Slice{g, off, off + take});
      off += take;
    }
    flat += n;
  }

  std::vector<std::map<std::size_t, GroupAccumulator>> partial(
      static_cast<std::size_t>(shards));
  parallel_for(shards, workers, [&](int s) {
    Eigen::VectorXd scratch;
    auto& local = partial[static_cast<std::size_t>(s)];
    for (const auto& slice : plan[static_cast<std::size_t>(s)]) {
      const Group& g = ds.groups[slice.group];
      auto [it, fresh] =
          local.try_emplace(slice.group, GroupAccumulator(g.id, spec));
      for (std::size_t j = slice.begin; j < slice.end; ++j) {
        double w = g.weights.empty() ? 1.0 : g.weights[j];
        accumulate(it->second, g.values[j], spec, scratch, w);
      }
    }
  });

  std::vector<GroupAccumulator> out;
  out.reserve(ds.groups.size());
  for (std::size_t g = 0; g < ds.groups.size(); ++g) {
    GroupAccumulator acc(ds.groups[g].id, spec);
    for (auto& shard : partial) {
      auto it = shard.find(g);
      if (it != shard.end()) acc = merge(acc, it->second);
    }
    out.push_back(std::move(acc));
  }
  return out;
}

inline MomentSummary scan_dataset(const Dataset& ds, const BasisSpec& spec,
                                  int workers = 1) {
  return finalize(scan_groups(ds, spec, workers), spec);
}

}  // namespace expfam
