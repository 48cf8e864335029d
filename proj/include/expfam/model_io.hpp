#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "expfam/base_measure.hpp"
#include "expfam/basis.hpp"
#include "expfam/error.hpp"
#include "expfam/spectral.hpp"

namespace expfam {

// Self-describing model document: basis + fitted statistic + optional base
// measure + fit metadata. Serialized as JSON with sorted keys; doubles use
// the shortest round-trip representation, so load(save(m)) reproduces every
// numeric field exactly and save(load(f)) is byte-identical.
struct ModelFile {
  int format_version = 1;
  BasisSpec basis;
  FittedFamily family;
  std::optional<BaseMeasure> base_measure;
  int meta_m = 0;
  double meta_n_plus = 0;
  std::uint64_t seed = 0;
};

namespace detail {

using nlohmann::json;

inline json to_json(const BasisSpec& spec) {
  json j;
  j["kind"] = spec.kind == BasisKind::natural_spline ? "natural_spline"
                                                     : "piecewise";
  j["df"] = spec.df;
  j["knots"] = spec.knots;
  j["boundary"] = {spec.lower, spec.upper};
  j["version"] = spec.version;
  if (spec.kind == BasisKind::piecewise) {
    j["breaks"] = spec.breaks;
    j["coef"] = spec.coef;
  }
  return j;
}

inline BasisSpec basis_from_json(const json& j) {
  std::string kind = j.at("kind").get<std::string>();
  auto boundary = j.at("boundary").get<std::vector<double>>();
  require(boundary.size() == 2, errc::parse_error, "model: bad boundary");
  if (kind == "piecewise") {
    BasisSpec spec = make_piecewise_basis(
        j.at("breaks").get<std::vector<double>>(),
        j.at("coef").get<std::vector<std::vector<std::vector<double>>>>(),
        boundary[0], boundary[1]);
    return spec;
  }
  require(kind == "natural_spline", errc::parse_error,
          "model: unknown basis kind " + kind);
  // rebuild the derived quantities from the stored knots
  auto knots = j.at("knots").get<std::vector<double>>();
  require(knots.size() >= 2, errc::parse_error, "model: too few knots");
  BasisSpec spec;
  spec.kind = BasisKind::natural_spline;
  spec.knots = knots;
  spec.lower = boundary[0];
  spec.upper = boundary[1];
  spec.df = static_cast<int>(knots.size());
  spec.padded.assign(4, knots.front());
  spec.padded.insert(spec.padded.end(), knots.begin() + 1, knots.end() - 1);
  spec.padded.insert(spec.padded.end(), 4, knots.back());
  int nb = spec.df + 2;
  auto d2lo = detail::bspline_all(spec.padded, 3, spec.lower, 2);
  auto d2hi = detail::bspline_all(spec.padded, 3, spec.upper, 2);
  Eigen::MatrixXd con(nb, 2);
  for (int i = 0; i < nb; ++i) {
    con(i, 0) = d2lo[static_cast<std::size_t>(i)];
    con(i, 1) = d2hi[static_cast<std::size_t>(i)];
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(con);
  Eigen::MatrixXd q = qr.householderQ();
  spec.combine = q.rightCols(nb - 2);
  spec.version = j.at("version").get<std::uint64_t>();
  return spec;
}

inline std::vector<double> vec_of(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

inline std::vector<std::vector<double>> mat_of(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out[static_cast<std::size_t>(r)].assign(m.cols(), 0.0);
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
  }
  return out;
}

}  // namespace detail

inline void save_model(const ModelFile& model, const std::string& path) {
  using nlohmann::json;
  json j;
  j["format_version"] = model.format_version;
  j["basis"] = detail::to_json(model.basis);

  json fam;
  fam["k"] = model.family.k;
  fam["coef"] = detail::mat_of(model.family.coef);
  fam["center"] = detail::vec_of(model.family.center);
  fam["scale"] = detail::vec_of(model.family.scale);
  fam["eigenvalues"] = detail::vec_of(model.family.eigenvalues);
  fam["ridge"] = model.family.ridge;
  fam["dropped_directions"] = model.family.dropped_directions;
  fam["eigen_tie"] = model.family.eigen_tie;
  fam["sign_fallback"] = model.family.sign_fallback;
  j["family"] = fam;

  if (model.base_measure) {
    const BaseMeasure& bm = *model.base_measure;
    json b;
    b["x"] = bm.x;
    b["t"] = bm.tval;
    b["zeta"] = bm.zeta;
    b["groups"] = bm.groups;
    b["group_n"] = bm.group_n;
    b["alpha"] = bm.alpha;
    b["theta"] = bm.theta;
    b["dropped_bins"] = bm.dropped_bins;
    b["converged"] = bm.converged;
    b["iterations"] = bm.iterations;
    b["grad_norm"] = bm.grad_norm;
    b["loglik"] = bm.loglik;
    j["base_measure"] = b;
  } else {
    j["base_measure"] = nullptr;
  }

  json meta;
  meta["m"] = model.meta_m;
  meta["n_plus"] = model.meta_n_plus;
  meta["seed"] = model.seed;
  j["meta"] = meta;

  std::ofstream out(path);
  require(out.good(), errc::io_error, "cannot write " + path);
  out << j.dump(2) << '\n';
}

inline ModelFile load_model(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(errc::parse_error, path + ": " + e.what());
  }
  try {
    ModelFile model;
    model.format_version = j.at("format_version").get<int>();
    require(model.format_version == 1, errc::parse_error,
            "model: unsupported format version");
    model.basis = detail::basis_from_json(j.at("basis"));

    const json& fam = j.at("family");
    model.family.basis = model.basis;
    model.family.k = fam.at("k").get<int>();
    auto coef = fam.at("coef").get<std::vector<std::vector<double>>>();
    model.family.coef.resize(static_cast<Eigen::Index>(coef.size()),
                             model.basis.df);
    for (std::size_t r = 0; r < coef.size(); ++r) {
      require(static_cast<int>(coef[r].size()) == model.basis.df,
              errc::parse_error, "model: coef shape mismatch");
      for (std::size_t c = 0; c < coef[r].size(); ++c)
        model.family.coef(static_cast<Eigen::Index>(r),
                          static_cast<Eigen::Index>(c)) = coef[r][c];
    }
    auto center = fam.at("center").get<std::vector<double>>();
    auto scale = fam.at("scale").get<std::vector<double>>();
    auto eig = fam.at("eigenvalues").get<std::vector<double>>();
    model.family.center = Eigen::Map<Eigen::VectorXd>(center.data(),
                                                      static_cast<Eigen::Index>(center.size()));
    model.family.scale = Eigen::Map<Eigen::VectorXd>(scale.data(),
                                                     static_cast<Eigen::Index>(scale.size()));
    model.family.eigenvalues = Eigen::Map<Eigen::VectorXd>(eig.data(),
                                                           static_cast<Eigen::Index>(eig.size()));
    model.family.ridge = fam.at("ridge").get<double>();
    model.family.dropped_directions = fam.at("dropped_directions").get<int>();
    model.family.eigen_tie = fam.at("eigen_tie").get<bool>();
    model.family.sign_fallback = fam.at("sign_fallback").get<std::vector<int>>();

    const json& b = j.at("base_measure");
    if (!b.is_null()) {
      BaseMeasure bm;
      bm.x = b.at("x").get<std::vector<double>>();
      bm.tval = b.at("t").get<std::vector<double>>();
      bm.zeta = b.at("zeta").get<std::vector<double>>();
      bm.groups = b.at("groups").get<std::vector<std::string>>();
      bm.group_n = b.at("group_n").get<std::vector<double>>();
      bm.alpha = b.at("alpha").get<std::vector<double>>();
      bm.theta = b.at("theta").get<std::vector<double>>();
      bm.dropped_bins = b.at("dropped_bins").get<int>();
      bm.converged = b.at("converged").get<bool>();
      bm.iterations = b.at("iterations").get<int>();
      bm.grad_norm = b.at("grad_norm").get<double>();
      bm.loglik = b.at("loglik").get<double>();
      model.base_measure = std::move(bm);
    }

    const json& meta = j.at("meta");
    model.meta_m = meta.at("m").get<int>();
    model.meta_n_plus = meta.at("n_plus").get<double>();
    model.seed = meta.at("seed").get<std::uint64_t>();
    return model;
  } catch (const json::exception& e) {
    fail(errc::parse_error, path + ": " + e.what());
  }
}

// Piecewise basis description file: {"kind":"piecewise","boundary":[l,u],
// "breaks":[...],"coef":[[[...]]]}.
inline BasisSpec load_basis_file(const std::string& path) {
  using nlohmann::json;
  std::ifstream in(path);
  require(in.good(), errc::io_error, "cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(errc::parse_error, path + ": " + e.what());
  }
  try {
    return detail::basis_from_json(j);
  } catch (const json::exception& e) {
    fail(errc::parse_error, path + ": " + e.what());
  }
}

}  // namespace expfam
