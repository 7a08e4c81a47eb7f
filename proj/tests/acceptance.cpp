// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <Eigen/Eigenvalues>
#include <boost/math/distributions/inverse_gamma.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "nsgp/bhm.hpp"
#include "nsgp/cli.hpp"
#include "nsgp/covariance.hpp"
#include "nsgp/log.hpp"
#include "nsgp/scoring.hpp"
#include "nsgp/sim.hpp"
#include "nsgp/transfer.hpp"
#include "nsgp/window_mle.hpp"
#include "test_util.hpp"

using namespace nsgp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// Stationary Matérn written out independently of the library: closed forms
// for nu = 0.5, 1.5, 2.5 in terms of x = 2 sqrt(nu) d / rho.
double matern_oracle(double d, double nu, double rho, double sigma2) {
  const double x = 2.0 * std::sqrt(nu) * d / rho;
  if (nu == 0.5) return sigma2 * std::exp(-x);
  if (nu == 1.5) return sigma2 * (1.0 + x) * std::exp(-x);
  if (nu == 2.5) return sigma2 * (1.0 + x + x * x / 3.0) * std::exp(-x);
  throw std::logic_error("oracle order");
}

// ---------------------------------------------------------------------------

Outcome kernel_correctness() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> loc(0, 50), rho(0.5, 20), s2(0.1, 10), nu(0.2, 3.0);
  double worst = 0.0, worst_exp = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Location a{loc(rng), loc(rng)}, b{loc(rng), loc(rng)};
    const SiteParams p{rho(rng), s2(rng)};
    const double n = nu(rng);
    const double d = distance(a, b);
    worst = std::max(worst, std::abs(ns_cov(a, b, p, p, n) - matern_stationary(d, n, p.rho, p.sigma2)));
    worst_exp = std::max(worst_exp, std::abs(ns_cov(a, b, p, p, 0.5) -
                                             p.sigma2 * std::exp(-std::sqrt(2.0) * d / p.rho)));
  }
  return {worst <= 1e-12 && worst_exp <= 1e-10,
          "max|ns-stationary|=" + fmt(worst) + " max|nu=0.5 - exp|=" + fmt(worst_exp)};
}

Outcome psd_validity() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> loc(0, 30), lr(std::log(0.5), std::log(20.0)), ls(std::log(0.1), std::log(10.0)),
      nu(0.3, 3.0);
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 200; ++k) {
    std::vector<Location> locs(50);
    for (auto& s : locs) s = {loc(rng), loc(rng)};
    LocalParams p;
    p.rho.resize(50);
    p.sigma2.resize(50);
    for (int i = 0; i < 50; ++i) {
      p.rho(i) = std::exp(lr(rng));
      p.sigma2(i) = std::exp(ls(rng));
    }
    const Eigen::MatrixXd c = build_cov_matrix(locs, p, KernelConfig{nu(rng), 0.0});
    const double lam = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c, Eigen::EigenvaluesOnly).eigenvalues()(0);
    worst = std::min(worst, lam / c.trace());
  }
  return {worst >= -1e-8, "min eigenvalue / trace = " + fmt(worst)};
}

Outcome window_recovery() {
  // 6 x 6 grid at spacing 4, 30 independent replicates per seed.
  std::vector<Location> locs;
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 6; ++i) locs.push_back({4.0 * i, 4.0 * j});
  Eigen::MatrixXd c(36, 36);
  for (int i = 0; i < 36; ++i)
    for (int j = 0; j < 36; ++j) c(i, j) = matern_oracle(distance(locs[i], locs[j]), 1.5, 10.0, 3.0);
  const Eigen::MatrixXd l = Eigen::LLT<Eigen::MatrixXd>(c).matrixL();
  int hits = 0;
  std::ostringstream misses;
  for (int seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(3000 + seed);
    std::normal_distribution<double> n;
    Eigen::MatrixXd z(36, 30);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
    const Eigen::MatrixXd y = l * z;
    WindowFitOptions opt;
    opt.nu = 1.5;
    const auto fit = fit_window(y, locs, opt);
    if (fit.rho_hat >= 5 && fit.rho_hat <= 20 && fit.sigma2_hat >= 1.5 && fit.sigma2_hat <= 6)
      ++hits;
    else
      misses << " (" << fmt(fit.rho_hat) << "," << fmt(fit.sigma2_hat) << ")";
  }
  return {hits >= 45, std::to_string(hits) + "/50 seeds in range" + misses.str()};
}

Outcome stationary_collapse() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> loc(0, 40), u(-1, 1);
  WindowGrid grid;
  grid.window_size = 20;
  grid.windows = {{0, 20, 0, 20}, {20, 40, 0, 20}, {0, 20, 20, 40}, {20, 40, 20, 40}};
  WindowEstimates est;
  for (double r : {2.0, 5.0, 9.0, 14.0}) {
    WindowFit f;
    f.rho_hat = r;
    f.sigma2_hat = 20.0 / r;
    f.converged = true;
    est.fits.push_back(f);
  }
  std::vector<Location> locs(80);
  for (auto& s : locs) s = {loc(rng), loc(rng)};
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    const TransferCoefficients coef{1.5 + u(rng), 0.0, 0.5 + u(rng), 0.0};
    const auto params = resolve_params(coef, est, grid, locs);
    for (double nu : {0.5, 1.5, 2.5}) {
      const Eigen::MatrixXd c = build_cov_matrix(locs, params, KernelConfig{nu, 0.0});
      for (std::size_t i = 0; i < locs.size(); ++i)
        for (std::size_t j = 0; j < locs.size(); ++j) {
          const double o = matern_oracle(distance(locs[i], locs[j]), nu, std::exp(coef.a1), std::exp(coef.a2));
          worst = std::max(worst, std::abs(c(Eigen::Index(i), Eigen::Index(j)) - o));
        }
    }
  }
  // The S baseline: a stationary chain never moves b1, b2 off zero.
  SimConfig cfg;
  cfg.grid_size = 12;
  cfg.niter = 150;
  const auto truth = simulate_truth(cfg, 7);
  const auto design = sample_design(cfg, truth, 7);
  const auto ref = simulate_reference(cfg, 7);
  const auto g = partition(ref, cfg.window_size());
  WindowFitOptions wopt;
  const auto e = fit_all_windows(ref, g, wopt);
  CoordinateCovariates cov;
  const auto problem = make_problem(design.training, cov, e, g);
  ModelSpec spec;
  spec.num_eofs = 0;
  spec.nu_fixed = 1.5;
  spec.stationary = true;
  McmcOptions mopt;
  mopt.niter = 150;
  const auto s = run_mcmc(problem, spec, mopt);
  bool b_zero = true;
  for (const auto& d : s.draws) b_zero = b_zero && d.coef.b1 == 0.0 && d.coef.b2 == 0.0;
  return {worst <= 1e-12 && b_zero,
          "max entry diff = " + fmt(worst) + (b_zero ? ", S chain keeps b=0" : ", S chain moved b")};
}

Outcome sampler_conjugacy() {
  // Small frozen problem: only tau2 moves, so its draws are iid from the
  // full conditional InvGamma(a0 + N/2, b0 + SSR/2).
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0, 10);
  std::normal_distribution<double> n;
  WindowGrid grid;
  grid.window_size = 10;
  grid.windows = {{0, 10, 0, 10}};
  WindowFit f;
  f.rho_hat = 3;
  f.sigma2_hat = 1;
  f.converged = true;
  WindowEstimates est{{f}};
  MonitorSet m;
  std::vector<Location> sites(8);
  for (auto& s : sites) s = {u(rng), u(rng)};
  for (long d : {1L, 2L, 3L})
    for (const auto& s : sites) m.records.push_back({d, s, 0.2 * s.lon - 0.1 * s.lat + n(rng)});
  CoordinateCovariates cov;
  const auto problem = make_problem(m, cov, est, grid);
  McmcState init;
  init.beta = Eigen::MatrixXd::Constant(3, 2, 0.1);
  init.w = Eigen::VectorXd::Zero(8);
  init.tau2 = 1.0;
  init.omega2 = 1.0;
  init.coef = {0, 1, 0, 1};
  init.nu = 1.5;
  McmcOptions opt;
  opt.niter = 5000;
  opt.burnin_fraction = 0.0;
  opt.seed = 55;
  opt.initial = init;
  opt.frozen = kBeta | kLatent | kOmega2 | kTransfer | kSmoothness;
  ModelSpec spec;
  spec.num_eofs = 0;
  spec.nu_fixed = 1.5;
  const auto s = run_mcmc(problem, spec, opt);
  double ssr = 0.0;
  for (const auto& r : m.records) {
    const double e = r.value - 0.1 * r.site.lon - 0.1 * r.site.lat;
    ssr += e * e;
  }
  boost::math::inverse_gamma_distribution<double> ig(0.1 + 0.5 * double(m.records.size()), 0.1 + 0.5 * ssr);
  std::vector<double> x;
  for (const auto& d : s.draws) x.push_back(d.tau2);
  std::sort(x.begin(), x.end());
  double ks = 0.0;
  const double nx = double(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = boost::math::cdf(ig, x[i]);
    ks = std::max({ks, std::abs(c - double(i) / nx), std::abs(c - double(i + 1) / nx)});
  }
  return {x.size() == 5000 && ks < 0.05, "KS = " + fmt(ks) + " over " + std::to_string(x.size()) + " draws"};
}

// Shared desk-scale study for the transfer and ordering criteria.
struct DeskStudy {
  StudyResult study;
  std::vector<TransferCoefficients> ns_means;  // 10 seeds
};

DeskStudy run_desk_study() {
  SimConfig cfg;
  cfg.replicates = 5;
  cfg.niter = 2000;
  cfg.predict_thin = 5;
  DeskStudy out;
  out.study = run_study(cfg);
  for (const auto& r : out.study.replicates) out.ns_means.push_back(r.ns_mean);
  ReplicateOptions opt;
  opt.stationary_chain = false;
  opt.predict = false;
  for (int r = 5; r < 10; ++r) {
    try {
      out.ns_means.push_back(run_replicate(cfg, r, opt).ns_mean);
    } catch (const Error& e) {
      std::cerr << "replicate " << r << " failed: " << e.what() << '\n';
    }
  }
  return out;
}

Outcome transfer_recovery(const DeskStudy& d) {
  int hits = 0;
  std::ostringstream s;
  for (const auto& m : d.ns_means) {
    const bool ok = std::abs(m.b1 - 1.0) <= 0.5 && std::abs(m.b2 - 1.0) <= 0.5 && std::abs(m.a2 - 0.5) <= 0.5;
    hits += ok;
    s << " [a1=" << fmt(m.a1) << " b1=" << fmt(m.b1) << " a2=" << fmt(m.a2) << " b2=" << fmt(m.b2) << "]";
  }
  return {hits >= 7, std::to_string(hits) + "/" + std::to_string(d.ns_means.size()) + " seeds within bounds" + s.str()};
}

Outcome table_ordering(const DeskStudy& d) {
  const auto& t = d.study.pooled;
  if (d.study.replicates.size() != 5) return {false, std::to_string(d.study.failed.size()) + " replicate(s) failed"};
  const auto& ns = t.at("NS", kOverall);
  const auto& st = t.at("S", kOverall);
  const bool a = ns.crps < st.crps, b = ns.log_loss < st.log_loss, c = ns.rmse <= 1.02 * st.rmse;
  const bool strat = t.at("NS", kPartialMissing).rmse < t.at("NS", kAllMissing).rmse &&
                     t.at("S", kPartialMissing).rmse < t.at("S", kAllMissing).rmse;
  std::ostringstream s;
  s << "NS crps/logloss/rmse=" << fmt(ns.crps / ns.n) << "/" << fmt(ns.log_loss / ns.n) << "/" << fmt(ns.rmse)
    << " S=" << fmt(st.crps / st.n) << "/" << fmt(st.log_loss / st.n) << "/" << fmt(st.rmse)
    << " rmse partial/all NS=" << fmt(t.at("NS", kPartialMissing).rmse) << "/" << fmt(t.at("NS", kAllMissing).rmse)
    << " S=" << fmt(t.at("S", kPartialMissing).rmse) << "/" << fmt(t.at("S", kAllMissing).rmse);
  return {a && b && c && strat, s.str()};
}

Outcome scoring_oracles() {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> m(-10, 10), sd(0.05, 5);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double mu = m(rng), s = sd(rng), y = m(rng);
    boost::math::normal_distribution<double> nd(mu, s);
    const double lo = std::min(mu, y) - 40 * s, hi = std::max(mu, y) + 40 * s;
    const double integral =
        GK::integrate([&](double x) { const double f = boost::math::cdf(nd, x); return f * f; }, lo, y, 15, 1e-12) +
        GK::integrate([&](double x) { const double f = boost::math::cdf(nd, x); return (1 - f) * (1 - f); }, y, hi, 15,
                      1e-12);
    worst = std::max(worst, std::abs(crps_gaussian(mu, s, y) - integral));
  }
  std::normal_distribution<double> n;
  std::vector<double> lo, hi, t;
  for (int k = 0; k < 10000; ++k) {
    const double mu = m(rng), s = sd(rng);
    lo.push_back(mu - 1.96 * s);
    hi.push_back(mu + 1.96 * s);
    t.push_back(mu + s * n(rng));
  }
  const double cov = coverage95(lo, hi, t);
  return {worst <= 1e-6 && std::abs(cov - 0.95) <= 0.01,
          "max|crps - integral|=" + fmt(worst) + " coverage=" + fmt(cov)};
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), {"nonstat_gp", "--log-level", "warn"});
  return cli::dispatch(args);
}

// Regular files under dir (relative path -> contents), manifests excluded.
std::map<std::string, std::string> artifacts(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name.ends_with(".manifest.json") || name.ends_with(".toml")) continue;
    out[fs::relative(e.path(), dir).string()] = testutil::read_text(e.path());
  }
  return out;
}

Outcome determinism() {
  testutil::TempDir tmp("accept9");
  const auto sim_config = tmp / "sim.toml";
  testutil::write_text(sim_config, "replicates = 1\niters = 300\nthin = 5\nseed = 9\n");
  std::vector<std::map<std::string, std::string>> runs;
  for (int k = 0; k < 2; ++k) {
    const auto root = tmp / ("run" + std::to_string(k));
    if (cli({"simulate", "--config", sim_config.string(), "--out-dir", (root / "sim").string()}) != 0)
      return {false, "simulate failed"};
    const auto rep = root / "sim" / "replicate_0";
    const auto cfg = root / "pipeline.toml";
    testutil::write_text(cfg, "[inputs]\nfield = \"sim/replicate_0/reference.csv\"\nobs = \"sim/replicate_0/training.csv\"\n"
                              "test = \"sim/replicate_0/test.csv\"\nstrata = \"sim/replicate_0/strata.csv\"\n"
                              "[eof]\nnum_eofs = 0\n[windows]\nsize = 24.75\nsource = \"field\"\n"
                              "[model]\ncovariates = \"coordinates\"\niters = 300\nnu_fixed = 1.5\nseed = 9\n"
                              "[predict]\nthin = 5\n[output]\ndir = \"pipeline\"\n");
    if (cli({"pipeline", "--config", cfg.string()}) != 0) return {false, "pipeline failed"};
    runs.push_back(artifacts(root));
  }
  std::size_t differing = 0;
  for (const auto& [name, body] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != body) {
      ++differing;
      std::cerr << "differs: " << name << '\n';
    }
  }
  const bool same_set = runs[0].size() == runs[1].size();
  const bool has_fit = runs[0].count("pipeline/samples_ns.csv") == 1;
  return {differing == 0 && same_set && has_fit,
          std::to_string(runs[0].size()) + " artifacts compared, " + std::to_string(differing) + " differ"};
}

Outcome application_run() {
  AppConfig cfg;
  const auto data = simulate_application(cfg, 2024);
  const auto cv = cross_validate(cfg, data, 2024);
  const auto& ns = cv.table.at("NS", kOverall);
  const auto& st = cv.table.at("S", kOverall);
  return {cv.folds_completed == cfg.folds && ns.log_loss <= st.log_loss,
          std::to_string(cv.folds_completed) + "/" + std::to_string(cfg.folds) + " folds; log-loss NS=" +
              fmt(ns.log_loss) + " S=" + fmt(st.log_loss) + " crps NS=" + fmt(ns.crps) + " S=" + fmt(st.crps) +
              " rmse NS=" + fmt(ns.rmse) + " S=" + fmt(st.rmse) + " cov NS=" + fmt(ns.coverage95) +
              " S=" + fmt(st.coverage95)};
}

}  // namespace

int main() {
  log::set_level("warn");
  int failed = 0;
  std::optional<DeskStudy> desk;
  auto desk_study = [&]() -> const DeskStudy& {
    if (!desk) desk = run_desk_study();
    return *desk;
  };
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // wall-clock limit; 0 = none
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "kernel correctness", 1.0, kernel_correctness},
      {2, "PSD validity", 30.0, psd_validity},
      {3, "window MLE recovery", 120.0, window_recovery},
      {4, "stationary collapse", 0.0, stationary_collapse},
      {5, "sampler conjugacy", 60.0, sampler_conjugacy},
      {6, "transfer coefficient recovery", 1800.0, [&] { return transfer_recovery(desk_study()); }},
      {7, "desk-scale score ordering", 3600.0, [&] { return table_ordering(desk_study()); }},
      {8, "scoring oracles", 60.0, scoring_oracles},
      {9, "determinism", 0.0, determinism},
      {10, "application-style run", 0.0, application_run},
  };
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    if (c.budget_s > 0 && secs > c.budget_s) {
      pass = false;
      o.detail += " (over time budget " + fmt(c.budget_s) + " s)";
    }
    failed += !pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << ": " << o.detail << " ["
              << fmt(secs) << " s]" << std::endl;
  }
  return failed;
}
