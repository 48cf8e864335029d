#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace expfam {

// Error classes surfaced by the library. The CLI maps each class to a fixed
// process exit code, so additions must keep existing values stable.
enum class errc {
  invalid_argument,      // bad df, bad nperm, bad fold count, ...
  too_few_distinct,      // not enough distinct training values for the basis
  non_finite_input,      // NaN or infinity where a finite value is required
  spec_mismatch,         // accumulators built against different basis versions
  group_mismatch,        // merging accumulators of different groups
  insufficient_groups,   // m < 2 (or m < 2*folds in cross-validation)
  no_within_df,          // n+ == m, no within-group degrees of freedom
  singular_within,       // within matrix not positive definite after ridge
  rank_deficient_basis,  // too few non-collinear directions for k components
  degenerate_variance,   // a statistic with zero variance
  empty_data,
  parse_error,
  io_error,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, std::string msg)
      : std::runtime_error(std::move(msg)), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) {
  throw Error(code, msg);
}

inline void require(bool cond, errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace expfam
