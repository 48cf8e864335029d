// expfam command line: simulate related experiments, fit the shared
// sufficient statistic and base measure, test new experiments, cross-validate
// the basis, and run the built-in replication studies.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "expfam/base_measure.hpp"
#include "expfam/dataset.hpp"
#include "expfam/inference.hpp"
#include "expfam/model_io.hpp"
#include "expfam/model_select.hpp"
#include "expfam/parallel.hpp"
#include "expfam/replicate.hpp"
#include "expfam/scan.hpp"
#include "expfam/sim.hpp"
#include "expfam/spectral.hpp"

namespace {

// Exit code contract (also in README):
//   0 ok, 2 usage, 3 ingestion/parse, 4 fit, 5 inference, 6 file i/o
constexpr int kUsageExit = 2;
constexpr int kIngestExit = 3;
constexpr int kFitExit = 4;
constexpr int kInferenceExit = 5;
constexpr int kIoExit = 6;

int exit_code_for(expfam::errc code) {
  switch (code) {
    case expfam::errc::parse_error:
    case expfam::errc::empty_data:
      return kIngestExit;
    case expfam::errc::degenerate_variance:
      return kInferenceExit;
    case expfam::errc::io_error:
      return kIoExit;
    default:
      return kFitExit;
  }
}

struct FitOptions {
  std::string input;
  std::string format = "raw";
  std::string basis = "spline";
  std::string basis_file;
  int df = 11;
  int k = 1;
  double ridge = -1.0;
  int nbins = 100;
  bool no_base_measure = false;
  int bootstrap = 0;
  int workers = expfam::default_workers();
  std::uint64_t seed = 0;
  std::string out;
  std::string outdir;
};

void run_fit(const FitOptions& opt) {
  using namespace expfam;
  Dataset ds = opt.format == "binned" ? read_binned_csv(opt.input)
                                      : read_raw_csv(opt.input);
  BasisSpec spec;
  if (opt.basis == "file") {
    require(!opt.basis_file.empty(), errc::invalid_argument,
            "--basis file requires --basis-file");
    spec = load_basis_file(opt.basis_file);
  } else {
    spec = make_spline_basis(opt.df, ds.pooled_values());
    if (spec.df != opt.df)
      std::fprintf(stderr, "note: basis reduced to df=%d (duplicate knots)\n",
                   spec.df);
  }

  MomentSummary ms = scan_dataset(ds, spec, opt.workers);
  FittedFamily fit = fit_sufficient_statistic(ms, opt.k, opt.ridge);

  ModelFile model;
  model.basis = spec;
  model.family = fit;
  model.meta_m = ms.m;
  model.meta_n_plus = ms.n_plus;
  model.seed = opt.seed;
  if (!opt.no_base_measure)
    model.base_measure = fit_base_measure(bin_data(ds, opt.nbins), fit);

  std::string outdir = opt.outdir;
  if (outdir.empty()) {
    auto parent = std::filesystem::path(opt.out).parent_path();
    outdir = parent.empty() ? "." : parent.string();
  }
  std::filesystem::create_directories(outdir);
  save_model(model, opt.out);
  write_scree_csv(fit, outdir + "/scree.csv");
  write_tcurve_csv(fit, outdir + "/tcurve.csv");
  if (model.base_measure)
    write_base_measure_csv(*model.base_measure, outdir + "/base_measure.csv");

  if (opt.bootstrap > 0) {
    auto reps = bootstrap_T(ds, spec, opt.bootstrap, opt.seed, opt.k, opt.ridge,
                            opt.workers);
    std::vector<std::vector<double>> rows;
    const int points = 201;
    for (std::size_t r = 0; r < reps.size(); ++r)
      for (int i = 0; i < points; ++i) {
        double x = spec.lower + (spec.upper - spec.lower) * i / (points - 1);
        rows.push_back({static_cast<double>(r), x, eval_T(reps[r], x, 0)});
      }
    detail::write_csv_rows(outdir + "/bootstrap_curves.csv", "replicate,x,t",
                           rows);
  }

  std::printf("fit: m=%d n=%.0f d=%d lambda1=%.6g lambda2=%.6g dropped=%d%s%s\n",
              ms.m, ms.n_plus, spec.df, fit.eigenvalues[0],
              spec.df > 1 ? fit.eigenvalues[1] : 0.0, fit.dropped_directions,
              fit.eigen_tie ? " tie" : "",
              model.base_measure && !model.base_measure->converged
                  ? " glm-not-converged"
                  : "");
  std::printf("model written to %s\n", opt.out.c_str());
}

struct TestOptions {
  std::string model;
  std::string a, b;
  std::string method = "z";
  std::string alt = "two";
  double alpha = 0.05;
  int nperm = 999;
  std::uint64_t seed = 0;
  int workers = expfam::default_workers();
  std::string out;
};

void run_test(const TestOptions& opt) {
  using namespace expfam;
  ModelFile model = load_model(opt.model);
  std::vector<double> a = read_sample_file(opt.a);
  std::vector<double> b = read_sample_file(opt.b);
  Alternative alt = opt.alt == "greater" ? Alternative::greater
                    : opt.alt == "less"  ? Alternative::less
                                         : Alternative::two_sided;

  struct Row {
    std::string name;
    TestResult res;
  };
  std::vector<Row> rows;
  auto run_one = [&](const std::string& name,
                     const std::function<double(double)>& u) {
    TestResult res =
        opt.method == "perm"
            ? permutation_test(a, b, u, opt.nperm, opt.alpha, opt.seed, alt,
                               opt.workers)
            : z_test(a, b, u, opt.alpha, alt);
    rows.push_back({name, res});
  };
  const FittedFamily& fit = model.family;
  run_one("fitted_T", [&](double x) { return eval_T(fit, x, 0); });
  run_one("identity", [](double x) { return x; });
  run_one("log1p", [](double x) { return signed_log1p(x); });

  for (const auto& row : rows)
    std::printf("%-9s delta=%+.6f p_one=%.6g p_two=%.6g %s\n", row.name.c_str(),
                row.res.statistic, row.res.p_one, row.res.p_two,
                row.res.reject ? "reject" : "accept");

  if (!opt.out.empty()) {
    std::ofstream csv(opt.out);
    require(csv.good(), errc::io_error, "cannot write " + opt.out);
    csv << "experiment_id,statistic,p_one,p_two,method,alpha,decision\n";
    char buf[256];
    for (const auto& row : rows) {
      std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%s,%.17g,%s\n",
                    row.name.c_str(), row.res.statistic, row.res.p_one,
                    row.res.p_two, opt.method == "perm" ? "perm" : "z",
                    opt.alpha, row.res.reject ? "reject" : "accept");
      csv << buf;
    }
  }
}

struct CvOptions {
  std::string input;
  std::vector<int> dfs;
  std::vector<std::string> basis_files;
  int folds = 5;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string out;
};

void run_cv(const CvOptions& opt) {
  using namespace expfam;
  Dataset ds = read_raw_csv(opt.input);
  std::vector<CvCandidate> candidates;
  for (int df : opt.dfs) candidates.push_back(spline_candidate(df));
  for (const auto& path : opt.basis_files)
    candidates.push_back(fixed_candidate("file:" + path, load_basis_file(path)));
  require(candidates.size() >= 2, errc::invalid_argument,
          "cv: need at least 2 candidates (use --dfs and/or --basis-files)");

  CvReport report = cross_validate(ds, candidates, opt.folds, opt.alpha,
                                   opt.seed);
  for (std::size_t c = 0; c < report.names.size(); ++c)
    std::printf("%s df=%d rejections=%d%s\n", report.names[c].c_str(),
                report.dfs[c], report.rejections[c],
                static_cast<int>(c) == report.chosen ? "  <- chosen" : "");
  if (!opt.out.empty()) {
    std::ofstream csv(opt.out);
    require(csv.good(), errc::io_error, "cannot write " + opt.out);
    csv << "basis,df,rejections,chosen\n";
    for (std::size_t c = 0; c < report.names.size(); ++c)
      csv << report.names[c] << ',' << report.dfs[c] << ','
          << report.rejections[c] << ','
          << (static_cast<int>(c) == report.chosen ? 1 : 0) << '\n';
  }
}

struct SimOptions {
  std::string family = "laplace";
  int m = 100;
  int n = 100;
  double theta_mean = 0.0;
  double theta_sd = 0.1;
  std::uint64_t seed = 0;
  int workers = expfam::default_workers();
  std::string out;
  std::string truth;
};

void run_sim(const SimOptions& opt) {
  using namespace expfam;
  SimConfig cfg;
  cfg.family =
      opt.family == "loggamma" ? SimFamily::loggamma : SimFamily::laplace;
  cfg.m = opt.m;
  cfg.n_per_group = opt.n;
  cfg.theta_mean = opt.theta_mean;
  cfg.theta_sd = opt.theta_sd;
  cfg.seed = opt.seed;
  SimData sim = generate(cfg, opt.workers);
  write_raw_csv(sim.data, opt.out);
  if (!opt.truth.empty()) write_truth_csv(sim, opt.truth);
  std::printf("wrote %d groups x %d observations to %s\n", opt.m, opt.n,
              opt.out.c_str());
}

struct ReplicateOptions {
  std::string study = "laplace";
  std::uint64_t seed = 1;
  int workers = expfam::default_workers();
  std::string outdir;
};

void run_replicate(const ReplicateOptions& opt) {
  using namespace expfam;
  std::filesystem::create_directories(opt.outdir);
  if (opt.study == "laplace") {
    LaplaceStudy s = run_laplace_study(opt.seed, opt.workers, opt.outdir);
    std::printf("laplace: rho2=%.4f misses=%d/%d mean_width=%.4f "
                "t_width=%.4f RE(x)=%.3f RE(log1p)=%.3f RE(true)=%.3f "
                "[%.1fs]\n",
                s.rho2, s.coverage_misses, s.groups, s.mean_width,
                s.mean_t_width, s.re_identity, s.re_log1p, s.re_true,
                s.seconds);
  } else if (opt.study == "loggamma") {
    LoggammaStudy s = run_loggamma_study(opt.seed, opt.workers, opt.outdir);
    std::printf("loggamma: rho2=%.4f mu_cover=%d/%d width_ratio=%.3f "
                "RE(x)=%.3f RE(log1p)=%.3f RE(true)=%.3f [%.1fs]\n",
                s.rho2, s.mu_covered, s.groups, s.width_ratio, s.re_identity,
                s.re_log1p, s.re_true, s.seconds);
  } else {
    HeavyTailStudy s = run_heavytail_study(opt.seed, opt.workers, opt.outdir);
    std::printf("heavytail: rejections fitted=%d identity=%d of %d, "
                "mcnemar_p=%.3g [%.1fs]\n",
                s.rej_fitted, s.rej_identity, s.experiments, s.mcnemar_p,
                s.seconds);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"expfam: learned exponential-family testing for repeated experiments"};
  app.require_subcommand(1);

  FitOptions fit_opt;
  auto* fit = app.add_subcommand("fit", "fit the statistic and base measure");
  fit->add_option("--input", fit_opt.input, "input CSV")->required();
  fit->add_option("--format", fit_opt.format, "raw|binned")
      ->check(CLI::IsMember({"raw", "binned"}));
  fit->add_option("--basis", fit_opt.basis, "spline|file")
      ->check(CLI::IsMember({"spline", "file"}));
  fit->add_option("--basis-file", fit_opt.basis_file, "piecewise basis JSON");
  fit->add_option("--df", fit_opt.df, "spline degrees of freedom");
  fit->add_option("--k", fit_opt.k, "number of components");
  fit->add_option("--ridge", fit_opt.ridge, "ridge for the within matrix");
  fit->add_option("--nbins", fit_opt.nbins, "bins for the base measure");
  fit->add_flag("--no-base-measure", fit_opt.no_base_measure,
                "skip the base-measure GLM");
  fit->add_option("--bootstrap", fit_opt.bootstrap, "bootstrap replicates");
  fit->add_option("--workers", fit_opt.workers, "worker threads");
  fit->add_option("--seed", fit_opt.seed, "seed (bootstrap, metadata)");
  fit->add_option("--out", fit_opt.out, "output model path")->required();
  fit->add_option("--outdir", fit_opt.outdir, "directory for plot CSVs");
  fit->callback([&] { run_fit(fit_opt); });

  TestOptions test_opt;
  auto* test = app.add_subcommand("test", "two-sample test with the model");
  test->add_option("--model", test_opt.model, "model JSON")->required();
  test->add_option("--a", test_opt.a, "sample A (one value per line)")
      ->required();
  test->add_option("--b", test_opt.b, "sample B")->required();
  test->add_option("--method", test_opt.method, "perm|z")
      ->check(CLI::IsMember({"perm", "z"}));
  test->add_option("--alt", test_opt.alt, "two|greater|less")
      ->check(CLI::IsMember({"two", "greater", "less"}));
  test->add_option("--alpha", test_opt.alpha, "test level");
  test->add_option("--nperm", test_opt.nperm, "permutations");
  test->add_option("--seed", test_opt.seed, "permutation seed");
  test->add_option("--workers", test_opt.workers, "worker threads");
  test->add_option("--out", test_opt.out, "results CSV");
  test->callback([&] { run_test(test_opt); });

  CvOptions cv_opt;
  auto* cv = app.add_subcommand("cv", "cross-validate basis candidates");
  cv->add_option("--input", cv_opt.input, "input CSV")->required();
  cv->add_option("--dfs", cv_opt.dfs, "spline df candidates")->delimiter(',');
  cv->add_option("--basis-files", cv_opt.basis_files, "piecewise candidates")
      ->delimiter(',');
  cv->add_option("--folds", cv_opt.folds, "fold count");
  cv->add_option("--alpha", cv_opt.alpha, "test level");
  cv->add_option("--seed", cv_opt.seed, "fold-assignment seed");
  cv->add_option("--out", cv_opt.out, "report CSV");
  cv->callback([&] { run_cv(cv_opt); });

  SimOptions sim_opt;
  auto* sim = app.add_subcommand("sim", "generate synthetic experiments");
  sim->add_option("--family", sim_opt.family, "laplace|loggamma")
      ->check(CLI::IsMember({"laplace", "loggamma"}));
  sim->add_option("--m", sim_opt.m, "number of groups");
  sim->add_option("--n", sim_opt.n, "observations per group");
  sim->add_option("--theta-mean", sim_opt.theta_mean, "theta law mean");
  sim->add_option("--theta-sd", sim_opt.theta_sd, "theta law sd");
  sim->add_option("--seed", sim_opt.seed, "seed");
  sim->add_option("--workers", sim_opt.workers, "worker threads");
  sim->add_option("--out", sim_opt.out, "data CSV")->required();
  sim->add_option("--truth", sim_opt.truth, "ground-truth sidecar CSV");
  sim->callback([&] { run_sim(sim_opt); });

  ReplicateOptions rep_opt;
  auto* rep = app.add_subcommand("replicate", "run a built-in study");
  rep->add_option("--study", rep_opt.study, "laplace|loggamma|heavytail")
      ->check(CLI::IsMember({"laplace", "loggamma", "heavytail"}));
  rep->add_option("--seed", rep_opt.seed, "seed");
  rep->add_option("--workers", rep_opt.workers, "worker threads");
  rep->add_option("--outdir", rep_opt.outdir, "output directory")->required();
  rep->callback([&] { run_replicate(rep_opt); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  } catch (const expfam::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFitExit;
  }
  return 0;
}
