#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "expfam/error.hpp"

namespace expfam {

// One treatment group. weights is either empty (every value counts once) or
// parallel to values (pre-binned ingestion).
struct Group {
  std::string id;
  std::vector<double> values;
  std::vector<double> weights;

  double count() const {
    if (weights.empty()) return static_cast<double>(values.size());
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

struct Dataset {
  std::vector<Group> groups;

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.values.size();
    return n;
  }

  std::vector<double> pooled_values() const {
    std::vector<double> out;
    out.reserve(total_values());
    for (const auto& g : groups)
      out.insert(out.end(), g.values.begin(), g.values.end());
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

class GroupIndex {
 public:
  Group& at(Dataset& ds, std::string_view id) {
    auto it = index_.find(std::string(id));
    if (it != index_.end()) return ds.groups[it->second];
    index_.emplace(std::string(id), ds.groups.size());
    ds.groups.push_back(Group{std::string(id), {}, {}});
    return ds.groups.back();
  }

 private:
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace detail

// Raw ingestion format: CSV rows `group_id,value`, header optional.
inline Dataset read_raw_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open " + path);
  Dataset ds;
  detail::GroupIndex index;
  std::string line;
  std::size_t lineno = 0;
  bool saw_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto fields = detail::split_csv(sv);
    if (fields.size() != 2)
      fail(errc::parse_error,
           path + ":" + std::to_string(lineno) + ": expected group_id,value");
    double v;
    if (!detail::parse_double(fields[1], v)) {
      if (lineno == 1) continue;  // header row
      fail(errc::parse_error,
           path + ":" + std::to_string(lineno) + ": bad numeric value");
    }
    require(std::isfinite(v), errc::parse_error,
            path + ":" + std::to_string(lineno) + ": non-finite value");
    index.at(ds, detail::trim(fields[0])).values.push_back(v);
    saw_data = true;
  }
  require(saw_data, errc::parse_error, path + ": no data rows");
  return ds;
}

// Pre-binned ingestion: CSV rows `group_id,bin_left,bin_right,count`; each
// row contributes `count` copies of the bin midpoint.
inline Dataset read_binned_csv(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open " + path);
  Dataset ds;
  detail::GroupIndex index;
  std::string line;
  std::size_t lineno = 0;
  bool saw_data = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    auto fields = detail::split_csv(sv);
    if (fields.size() != 4)
      fail(errc::parse_error, path + ":" + std::to_string(lineno) +
                                  ": expected group_id,bin_left,bin_right,count");
    double left, right, count;
    bool ok = detail::parse_double(fields[1], left) &&
              detail::parse_double(fields[2], right) &&
              detail::parse_double(fields[3], count);
    if (!ok) {
      if (lineno == 1) continue;
      fail(errc::parse_error,
           path + ":" + std::to_string(lineno) + ": bad numeric value");
    }
    require(std::isfinite(left) && std::isfinite(right) && right >= left,
            errc::parse_error,
            path + ":" + std::to_string(lineno) + ": bad bin edges");
    require(count >= 0 && std::isfinite(count), errc::parse_error,
            path + ":" + std::to_string(lineno) + ": bad count");
    if (count == 0) {
      saw_data = true;
      continue;
    }
    Group& g = index.at(ds, detail::trim(fields[0]));
    if (g.weights.size() != g.values.size())
      g.weights.assign(g.values.size(), 1.0);
    g.values.push_back(0.5 * (left + right));
    g.weights.push_back(count);
    saw_data = true;
  }
  require(saw_data, errc::parse_error, path + ": no data rows");
  return ds;
}

// Single-column sample file (optional `value` header) used by `test`.
inline std::vector<double> read_sample_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open " + path);
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    double v;
    if (!detail::parse_double(sv, v)) {
      if (lineno == 1) continue;
      fail(errc::parse_error,
           path + ":" + std::to_string(lineno) + ": bad numeric value");
    }
    require(std::isfinite(v), errc::parse_error,
            path + ":" + std::to_string(lineno) + ": non-finite value");
    out.push_back(v);
  }
  require(!out.empty(), errc::parse_error, path + ": no data rows");
  return out;
}

}  // namespace expfam
