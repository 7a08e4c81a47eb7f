#include "nsgp/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <toml.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <memory>
#include <sstream>

#include "nsgp/bhm.hpp"
#include "nsgp/csv.hpp"
#include "nsgp/eof.hpp"
#include "nsgp/error.hpp"
#include "nsgp/field_store.hpp"
#include "nsgp/log.hpp"
#include "nsgp/samples_io.hpp"
#include "nsgp/scoring.hpp"
#include "nsgp/sim.hpp"
#include "nsgp/window_mle.hpp"

namespace nsgp::cli {
namespace fs = std::filesystem;
namespace {

// A failure inside a pipeline stage; keeps the underlying code for the exit status.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& inner)
      : Error(ErrorCode::StageFailed, "stage '" + stage + "': " + std::string(to_string(inner.code())) +
                                          ": " + inner.what()),
        inner_(inner.code()) {}
  ErrorCode inner() const { return inner_; }

 private:
  ErrorCode inner_;
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Timestamps live only here so the artifacts themselves stay reproducible.
void write_manifest(const fs::path& artifact, const std::string& command, std::uint64_t config_hash,
                    std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["artifact"] = artifact.filename().string();
  j["command"] = command;
  j["config_hash"] = hex(config_hash);
  j["seed"] = seed;
  j["version"] = kVersion;
  j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  j["created_utc"] = utc_timestamp();
  auto out = csv::open_for_write(fs::path(artifact.string() + ".manifest.json"));
  out << j.dump(2) << '\n';
}

fs::path absolute_path(const fs::path& p) { return fs::weakly_canonical(fs::absolute(p)); }

// ---------------------------------------------------------------------------
// Shared stages

struct ModelRequest {
  std::string covariates = "eof";  // eof | coordinates
  int num_eofs = 7;
  bool reference_covariate = true;
  int iters = 10000;
  double burnin = 0.15;
  std::optional<double> nu_fixed;
  bool stationary = false;
  bool log_transform = false;  // field and monitor values on the log scale
  std::uint64_t seed = 1;
  int threads = 0;
};

ModelSpec model_spec(const ModelRequest& req) {
  ModelSpec spec;
  spec.num_eofs = req.covariates == "eof" ? req.num_eofs : 0;
  spec.include_reference_covariate = req.reference_covariate;
  spec.nu_fixed = req.nu_fixed;
  spec.stationary = req.stationary;
  return spec;
}

std::unique_ptr<CovariateModel> make_covariates(const ModelRequest& req, const SpaceTimeField* field,
                                                const EofBasis* basis) {
  if (req.covariates == "coordinates") return std::make_unique<CoordinateCovariates>();
  if (req.covariates != "eof")
    throw Error(ErrorCode::InvalidArgument, "covariates must be 'eof' or 'coordinates'");
  if (!field) throw Error(ErrorCode::InvalidArgument, "EOF covariates need the reference field");
  const auto spec = model_spec(req);
  EofBasis own;
  if (!basis || basis->num_eofs() < spec.num_eofs) {
    own = compute_eofs(*field, spec.num_eofs);
    basis = &own;
  }
  EofBasis trimmed = *basis;
  trimmed.eofs = basis->eofs.leftCols(spec.num_eofs);
  return std::make_unique<EofCovariates>(spec, std::move(trimmed), *field);
}

// Input paths are stored relative to the samples file so that artifacts do not
// depend on where the output directory lives.
Metadata fit_metadata(const ModelRequest& req, const fs::path& field, const fs::path& windows,
                      const fs::path& samples_path) {
  const auto base = absolute_path(samples_path).parent_path();
  auto rel = [&](const fs::path& p) { return absolute_path(p).lexically_relative(base).generic_string(); };
  Metadata meta = {{"covariates", req.covariates},
                   {"num_eofs", std::to_string(req.num_eofs)},
                   {"reference_covariate", req.reference_covariate ? "1" : "0"},
                   {"log_transform", req.log_transform ? "1" : "0"},
                   {"windows", rel(windows)}};
  if (!field.empty()) meta.emplace_back("field", rel(field));
  if (req.nu_fixed) meta.emplace_back("nu_fixed", csv::format(*req.nu_fixed));
  return meta;
}

PosteriorSamples fit_model(const ModelRequest& req, const MonitorSet& obs, const CovariateModel& cov,
                           const WindowEstimates& est, const WindowGrid& grid) {
  const auto problem = make_problem(obs, cov, est, grid);
  McmcOptions opt;
  opt.niter = req.iters;
  opt.burnin_fraction = req.burnin;
  opt.seed = req.seed;
  opt.threads = req.threads > 0 ? req.threads : 1;
  return run_mcmc(problem, model_spec(req), opt);
}

// Rebuilds what prediction needs from a samples file and its metadata.
struct LoadedFit {
  SamplesFile file;
  ModelRequest req;
  std::optional<SpaceTimeField> field;
  WindowTable windows;
  std::unique_ptr<CovariateModel> covariates;
  FitProblem problem;
};

LoadedFit load_fit(const fs::path& samples_path) {
  LoadedFit f;
  f.file = read_samples_csv(samples_path);
  const auto& meta = f.file.meta;
  auto need = [&](const std::string& key) -> const std::string& {
    const auto* v = find_meta(meta, key);
    if (!v) throw Error(ErrorCode::ParseError, samples_path.string() + ": missing metadata '" + key + "'");
    return *v;
  };
  f.req.covariates = need("covariates");
  f.req.num_eofs = static_cast<int>(csv::parse_long(need("num_eofs"), "num_eofs"));
  f.req.reference_covariate = need("reference_covariate") == "1";
  f.req.stationary = f.file.samples.stationary;
  if (const auto* nu = find_meta(meta, "nu_fixed")) f.req.nu_fixed = csv::parse_double(*nu, "nu_fixed");
  const auto base = absolute_path(samples_path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  if (const auto* lt = find_meta(meta, "log_transform")) f.req.log_transform = *lt == "1";
  if (const auto* field = find_meta(meta, "field")) {
    f.field = load_gridded_csv(resolve(*field));
    if (f.req.log_transform) f.field = log_transform(std::move(*f.field));
  }
  f.windows = read_windows_csv(resolve(need("windows")));
  f.covariates = make_covariates(f.req, f.field ? &*f.field : nullptr, nullptr);
  f.problem.data.sites = f.file.samples.sites;
  f.problem.data.days = f.file.samples.days;
  f.problem.data.x.resize(0, static_cast<Eigen::Index>(f.covariates->dim()));
  f.problem.reference = reference_logs(f.windows.estimates, f.windows.grid, f.file.samples.sites);
  return f;
}

struct Truth {
  std::map<std::tuple<long, double, double>, double> values;
};

Truth load_truth(const fs::path& path, bool log_scale = false) {
  Truth t;
  auto set = load_monitor_csv(path);
  if (log_scale) set = log_transform(std::move(set));
  for (const auto& r : set.records) t.values[{r.day, r.site.lon, r.site.lat}] = r.value;
  return t;
}

std::map<std::pair<double, double>, std::string> load_strata(const fs::path& path) {
  const auto t = csv::read(path);
  const auto clon = t.column("lon"), clat = t.column("lat"), cs = t.column("stratum");
  std::map<std::pair<double, double>, std::string> out;
  for (const auto& r : t.rows)
    out[{csv::parse_double(r[clon], path.string()), csv::parse_double(r[clat], path.string())}] = r[cs];
  return out;
}

ScoreTable score_predictions(const std::string& model, const PredictiveSummary& pred, const Truth& truth,
                             const std::optional<fs::path>& strata_path) {
  std::optional<std::map<std::pair<double, double>, std::string>> strata;
  if (strata_path) strata = load_strata(*strata_path);
  std::vector<ScoredCase> cases;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < pred.points.size(); ++i) {
    const auto& p = pred.points[i];
    const auto it = truth.values.find({p.day, p.site.lon, p.site.lat});
    if (it == truth.values.end())
      throw Error(ErrorCode::StratumMismatch, "no truth value for a predicted point on day " +
                                                  std::to_string(p.day));
    const auto k = static_cast<Eigen::Index>(i);
    cases.push_back({pred.mean(k), pred.sd(k), pred.lower95(k), pred.upper95(k), it->second});
    if (strata) {
      const auto s = strata->find({p.site.lon, p.site.lat});
      if (s == strata->end())
        throw Error(ErrorCode::StratumMismatch, "predicted location has no stratum label");
      labels.push_back(s->second);
    } else {
      labels.emplace_back("all");
    }
  }
  return score_table(model, cases, labels);
}

// ---------------------------------------------------------------------------
// Simulation config

SimConfig load_sim_config(const fs::path& path) {
  SimConfig c;
  toml::table t;
  try {
    t = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + std::string(e.description()));
  }
  c.grid_size = t["grid_size"].value_or(c.grid_size);
  c.domain_min = t["domain_min"].value_or(c.domain_min);
  c.domain_max = t["domain_max"].value_or(c.domain_max);
  c.days = t["days"].value_or(c.days);
  auto read4 = [&](const char* key, std::array<double, 4>& dest) {
    if (const auto* arr = t[key].as_array()) {
      if (arr->size() != 4) throw Error(ErrorCode::InvalidArgument, std::string(key) + " needs 4 values");
      for (std::size_t i = 0; i < 4; ++i) dest[i] = (*arr)[i].value_or(dest[i]);
    }
  };
  read4("rho0", c.rho0);
  read4("sigma2_0", c.sigma2_0);
  c.nu = t["nu"].value_or(c.nu);
  c.transfer_a = t["transfer_a"].value_or(c.transfer_a);
  c.transfer_b = t["transfer_b"].value_or(c.transfer_b);
  c.noise_var = t["noise_var"].value_or(c.noise_var);
  c.mean_s1 = t["mean_s1"].value_or(c.mean_s1);
  c.mean_s2 = t["mean_s2"].value_or(c.mean_s2);
  c.train_fraction = t["train_fraction"].value_or(c.train_fraction);
  c.replicates = t["replicates"].value_or(c.replicates);
  c.niter = t["iters"].value_or(c.niter);
  c.burnin_fraction = t["burnin"].value_or(c.burnin_fraction);
  c.predict_thin = t["thin"].value_or(c.predict_thin);
  if (auto s = t["seed"].value<std::int64_t>()) c.seed = static_cast<std::uint64_t>(*s);
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
  fs::path field, obs, test;
  std::optional<fs::path> strata;
  int num_eofs = 7;
  double window_size = 2.0;
  std::string window_source = "residual";  // residual | field
  double window_nu = 1.5;
  ModelRequest model;
  int thin = 1;
  fs::path out_dir = "pipeline_out";
};

PipelineConfig load_pipeline_config(const fs::path& path) {
  toml::table t;
  try {
    t = toml::parse_file(path.string());
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + std::string(e.description()));
  }
  const fs::path base = path.parent_path();
  auto resolve = [&](std::optional<std::string> v, const char* key, bool required) -> std::optional<fs::path> {
    if (!v) {
      if (required) throw Error(ErrorCode::MissingFlag, path.string() + ": missing '" + key + "'");
      return std::nullopt;
    }
    fs::path p(*v);
    return p.is_absolute() ? p : base / p;
  };
  PipelineConfig c;
  c.field = *resolve(t["inputs"]["field"].value<std::string>(), "inputs.field", true);
  c.obs = *resolve(t["inputs"]["obs"].value<std::string>(), "inputs.obs", true);
  c.test = *resolve(t["inputs"]["test"].value<std::string>(), "inputs.test", true);
  c.strata = resolve(t["inputs"]["strata"].value<std::string>(), "inputs.strata", false);
  c.num_eofs = t["eof"]["num_eofs"].value_or(c.num_eofs);
  c.model.log_transform = t["eof"]["log_transform"].value_or(false);
  c.window_size = t["windows"]["size"].value_or(c.window_size);
  c.window_source = t["windows"]["source"].value_or(c.window_source);
  c.window_nu = t["windows"]["nu"].value_or(c.window_nu);
  c.model.covariates = t["model"]["covariates"].value_or(c.model.covariates);
  c.model.num_eofs = c.num_eofs;
  c.model.reference_covariate = t["model"]["reference_covariate"].value_or(true);
  c.model.iters = t["model"]["iters"].value_or(c.model.iters);
  c.model.burnin = t["model"]["burnin"].value_or(c.model.burnin);
  if (auto nu = t["model"]["nu_fixed"].value<double>()) c.model.nu_fixed = *nu;
  if (auto s = t["model"]["seed"].value<std::int64_t>()) c.model.seed = static_cast<std::uint64_t>(*s);
  c.thin = t["predict"]["thin"].value_or(c.thin);
  c.out_dir = *resolve(t["output"]["dir"].value_or(std::string("pipeline_out")), "output.dir", true);
  if (c.window_source != "residual" && c.window_source != "field")
    throw Error(ErrorCode::InvalidArgument, "windows.source must be 'residual' or 'field'");
  for (const auto* p : {&c.field, &c.obs, &c.test})
    if (!fs::exists(*p)) throw Error(ErrorCode::IoError, "input not found: " + p->string());
  if (c.strata && !fs::exists(*c.strata))
    throw Error(ErrorCode::IoError, "input not found: " + c.strata->string());
  return c;
}

template <class F>
auto stage(const std::string& name, F&& body) {
  try {
    log::info("pipeline: stage " + name);
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

void run_pipeline(const fs::path& config_path, bool resume, std::optional<std::uint64_t> seed_override,
                  int threads) {
  auto cfg = load_pipeline_config(config_path);
  if (seed_override) cfg.model.seed = *seed_override;
  cfg.model.threads = threads;
  std::ifstream cfg_in(config_path);
  std::stringstream raw;
  raw << cfg_in.rdbuf();
  const std::uint64_t hash = fnv1a(raw.str() + "\nseed=" + std::to_string(cfg.model.seed));
  const auto& dir = cfg.out_dir;
  const fs::path basis_path = dir / "basis.csv", residual_path = dir / "residual.csv",
                 windows_path = dir / "windows.csv", ns_samples = dir / "samples_ns.csv",
                 s_samples = dir / "samples_s.csv", ns_pred = dir / "predictions_ns.csv",
                 s_pred = dir / "predictions_s.csv", scores_path = dir / "scores.csv",
                 summary_path = dir / "summary.csv";
  auto done = [&](std::initializer_list<fs::path> outs) {
    if (!resume) return false;
    for (const auto& p : outs)
      if (!fs::exists(p)) return false;
    return true;
  };
  auto manifest = [&](const fs::path& p) { write_manifest(p, "pipeline", hash, cfg.model.seed); };

  const auto field = stage("load", [&] {
    auto f = load_gridded_csv(cfg.field);
    return cfg.model.log_transform ? log_transform(std::move(f)) : f;
  });
  const auto obs = stage("load", [&] {
    auto m = load_monitor_csv(cfg.obs);
    return cfg.model.log_transform ? log_transform(std::move(m)) : m;
  });

  const auto basis = stage("eof", [&] {
    if (done({basis_path})) {
      log::info("pipeline: eof skipped");
      return read_basis_csv(basis_path, field);
    }
    auto b = compute_eofs(field, cfg.num_eofs);
    write_basis_csv(basis_path, b);
    write_basis_summary_csv(dir / "eof_summary.csv", b);
    manifest(basis_path);
    manifest(dir / "eof_summary.csv");
    return b;
  });

  const auto residual = stage("detrend", [&] {
    if (done({residual_path})) return load_gridded_csv(residual_path);
    auto r = detrend_by_eofs(field, basis);
    write_gridded_csv(residual_path, r);
    manifest(residual_path);
    return r;
  });

  const auto windows = stage("windows", [&] {
    if (done({windows_path})) return read_windows_csv(windows_path);
    const auto& source = cfg.window_source == "field" ? field : residual;
    auto grid = partition(source, cfg.window_size);
    WindowFitOptions opt;
    opt.nu = cfg.window_nu;
    auto est = fit_all_windows(source, grid, opt, threads);
    write_windows_csv(windows_path, grid, est);
    manifest(windows_path);
    return WindowTable{std::move(grid), std::move(est)};
  });

  const auto covariates = make_covariates(cfg.model, &field, &basis);
  const auto problem = stage("fit", [&] { return make_problem(obs, *covariates, windows.estimates, windows.grid); });
  const auto samples = stage("fit", [&] {
    std::pair<PosteriorSamples, PosteriorSamples> out;
    for (bool stationary : {false, true}) {
      const auto& path = stationary ? s_samples : ns_samples;
      auto& dest = stationary ? out.second : out.first;
      if (done({path})) {
        dest = read_samples_csv(path).samples;
        continue;
      }
      ModelRequest req = cfg.model;
      req.stationary = stationary;
      req.seed = derive_seed(cfg.model.seed, stationary ? 2 : 1);
      dest = fit_model(req, obs, *covariates, windows.estimates, windows.grid);
      write_samples_csv(path, dest, fit_metadata(req, cfg.field, windows_path, path));
      manifest(path);
    }
    return out;
  });

  const auto test_truth = stage("predict", [&] { return load_truth(cfg.test, cfg.model.log_transform); });
  const auto test_points = stage("predict", [&] { return read_points_csv(cfg.test); });
  const auto predictions = stage("predict", [&] {
    std::pair<PredictiveSummary, PredictiveSummary> out;
    PredictOptions opt;
    opt.threads = threads;
    opt.thin = cfg.thin;
    for (bool stationary : {false, true}) {
      const auto& path = stationary ? s_pred : ns_pred;
      auto& dest = stationary ? out.second : out.first;
      if (done({path})) {
        dest = read_predictions_csv(path);
        continue;
      }
      dest = predict(stationary ? samples.second : samples.first, problem, *covariates,
                     windows.estimates, windows.grid, test_points, opt);
      write_predictions_csv(path, dest);
      manifest(path);
    }
    return out;
  });

  stage("score", [&] {
    ScoreTable table = score_predictions("NS", predictions.first, test_truth, cfg.strata);
    append(table, score_predictions("S", predictions.second, test_truth, cfg.strata));
    write_score_csv(scores_path, table);
    manifest(scores_path);
    ScoreTable summary;
    for (const auto& r : table.rows)
      if (r.stratum == kOverall) summary.rows.push_back(r);
    write_score_csv(summary_path, summary);
    manifest(summary_path);
    return 0;
  });
}

int fail(const Error& e) {
  const ErrorCode code = e.code();
  std::cerr << "ERROR:" << to_string(code) << ": " << e.what() << '\n';
  if (const auto* stage_error = dynamic_cast<const StageError*>(&e))
    return is_numerical(stage_error->inner()) ? 2 : 1;
  return is_numerical(code) ? 2 : 1;
}

// Arguments relevant to the result, for the config hash.
std::string canonical_args(const std::vector<std::string>& args) {
  std::string out;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--threads" || args[i] == "--log-level") {
      ++i;
      continue;
    }
    if (args[i].rfind("--threads=", 0) == 0 || args[i].rfind("--log-level=", 0) == 0) continue;
    out += args[i];
    out += '\x1f';
  }
  return out;
}

}  // namespace

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args);
}

int dispatch(const std::vector<std::string>& args_in) {
  std::vector<std::string> args = args_in;
  if (args.empty()) args.emplace_back("nonstat-gp");
  static const std::set<std::string> kCommands = {"eof",      "windows",  "fit",     "predict",
                                                  "score",    "simulate", "pipeline"};
  if (args.size() < 2) {
    std::cerr << "ERROR:" << to_string(ErrorCode::UnknownSubcommand)
              << ": expected one of eof, windows, fit, predict, score, simulate, pipeline\n";
    return 1;
  }
  {
    // First non-flag word must be a subcommand.
    std::size_t i = 1;
    while (i < args.size() && args[i].rfind("-", 0) == 0) {
      if (args[i] == "-h" || args[i] == "--help" || args[i] == "--version") break;
      const bool has_value = args[i].find('=') == std::string::npos;
      i += has_value ? 2 : 1;
    }
    if (i < args.size() && args[i].rfind("-", 0) != 0 && !kCommands.count(args[i])) {
      std::cerr << "ERROR:" << to_string(ErrorCode::UnknownSubcommand) << ": unknown subcommand '"
                << args[i] << "'\n";
      return 1;
    }
  }

  CLI::App app{"Nonstationary Gaussian-process fusion of gridded reference fields and monitors",
               "nonstat-gp"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  int threads = 0;
  std::string log_level = "warn";
  app.add_option("--seed", seed, "Random seed")->check(CLI::NonNegativeNumber);
  app.add_option("--threads", threads, "Worker threads (0: all available)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", log_level, "debug|info|warn|error|off");

  // eof
  auto* eof = app.add_subcommand("eof", "Leading EOFs of a gridded field")->fallthrough();
  fs::path eof_in, eof_out;
  std::optional<fs::path> eof_residual, eof_summary;
  int eof_m = 0;
  bool eof_log = false;
  eof->add_option("--input", eof_in, "Gridded CSV day,lon,lat,value")->required()->check(CLI::ExistingFile);
  eof->add_option("--num-eofs", eof_m, "Number of EOFs")->required();
  eof->add_option("--out", eof_out, "Basis CSV")->required();
  eof->add_option("--residual-out", eof_residual, "Detrended field CSV");
  eof->add_option("--summary-out", eof_summary, "Singular value summary CSV");
  eof->add_flag("--log-transform", eof_log, "Take logs of the field first");

  // windows
  auto* win = app.add_subcommand("windows", "Moving-window covariance estimates")->fallthrough();
  fs::path win_in, win_out;
  double win_size = 2.0, win_nu = 1.5;
  win->add_option("--input", win_in, "Gridded (residual) CSV")->required()->check(CLI::ExistingFile);
  win->add_option("--size", win_size, "Window side length")->capture_default_str();
  win->add_option("--nu", win_nu, "Matérn smoothness")->capture_default_str();
  win->add_option("--out", win_out, "Windows CSV")->required();

  // fit
  auto* fit = app.add_subcommand("fit", "Run the MCMC sampler")->fallthrough();
  fs::path fit_obs, fit_windows, fit_out;
  std::optional<fs::path> fit_field;
  ModelRequest fit_req;
  bool fit_no_ref = false;
  fit->add_option("--obs", fit_obs, "Monitor CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--field", fit_field, "Reference gridded CSV")->check(CLI::ExistingFile);
  fit->add_option("--windows", fit_windows, "Windows CSV")->required()->check(CLI::ExistingFile);
  fit->add_option("--covariates", fit_req.covariates, "eof|coordinates")->capture_default_str();
  fit->add_option("--num-eofs", fit_req.num_eofs)->capture_default_str();
  fit->add_flag("--no-reference-covariate", fit_no_ref);
  fit->add_flag("--log-transform", fit_req.log_transform, "Model log field and monitor values");
  fit->add_option("--iters", fit_req.iters)->capture_default_str();
  fit->add_option("--burnin", fit_req.burnin, "Burn-in fraction")->capture_default_str();
  fit->add_option("--nu-fixed", fit_req.nu_fixed, "Hold the smoothness fixed");
  fit->add_flag("--stationary", fit_req.stationary, "Clamp b1 = b2 = 0");
  fit->add_option("--out", fit_out, "Samples CSV")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Posterior predictive summaries")->fallthrough();
  fs::path pred_samples, pred_at, pred_out;
  int pred_thin = 1;
  pred->add_option("--samples", pred_samples)->required()->check(CLI::ExistingFile);
  pred->add_option("--at", pred_at, "CSV with day,lon,lat")->required()->check(CLI::ExistingFile);
  pred->add_option("--thin", pred_thin)->capture_default_str()->check(CLI::PositiveNumber);
  pred->add_option("--out", pred_out)->required();

  // score
  auto* score = app.add_subcommand("score", "Score predictions against held-out truth")->fallthrough();
  fs::path score_pred, score_truth, score_out;
  std::optional<fs::path> score_strata;
  bool score_log = false;
  std::string score_model = "model";
  score->add_option("--pred", score_pred)->required()->check(CLI::ExistingFile);
  score->add_option("--truth", score_truth, "CSV day,lon,lat,value")->required()->check(CLI::ExistingFile);
  score->add_option("--strata", score_strata, "CSV lon,lat,stratum")->check(CLI::ExistingFile);
  score->add_flag("--log-transform", score_log, "Compare against log truth values");
  score->add_option("--model", score_model)->capture_default_str();
  score->add_option("--out", score_out)->required();

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulation study")->fallthrough();
  std::optional<fs::path> sim_config;
  std::optional<int> sim_reps, sim_iters;
  fs::path sim_out;
  bool sim_full = false;
  sim->add_option("--config", sim_config, "TOML")->check(CLI::ExistingFile);
  sim->add_option("--replicates", sim_reps);
  sim->add_option("--iters", sim_iters);
  sim->add_flag("--full-scale", sim_full, "50 replicates x 10000 iterations");
  sim->add_option("--out-dir", sim_out)->required();

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "eof, detrend, windows, fit, predict, score")->fallthrough();
  fs::path pipe_config;
  bool pipe_resume = false;
  pipe->add_option("--config", pipe_config, "TOML")->required()->check(CLI::ExistingFile);
  pipe->add_flag("--resume", pipe_resume, "Skip stages whose outputs exist");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::RequiredError& e) {
    std::cerr << "ERROR:" << to_string(ErrorCode::MissingFlag) << ": " << e.what() << '\n';
    return 1;
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR:" << to_string(ErrorCode::InvalidArgument) << ": " << e.what() << '\n';
    return 1;
  }

  try {
    if (!log::set_level(log_level))
      throw Error(ErrorCode::InvalidArgument, "unknown log level '" + log_level + "'");
    const std::uint64_t the_seed = seed.value_or(1);
    const std::uint64_t hash = fnv1a(canonical_args(args) + "\x1eseed=" + std::to_string(the_seed));

    if (eof->parsed()) {
      auto field = load_gridded_csv(eof_in);
      if (eof_log) field = log_transform(std::move(field));
      const auto basis = compute_eofs(field, eof_m);
      write_basis_csv(eof_out, basis);
      write_manifest(eof_out, "eof", hash, the_seed);
      if (eof_summary) {
        write_basis_summary_csv(*eof_summary, basis);
        write_manifest(*eof_summary, "eof", hash, the_seed);
      }
      if (eof_residual) {
        write_gridded_csv(*eof_residual, detrend_by_eofs(field, basis));
        write_manifest(*eof_residual, "eof", hash, the_seed);
      }
    } else if (win->parsed()) {
      const auto field = load_gridded_csv(win_in);
      const auto grid = partition(field, win_size);
      WindowFitOptions opt;
      opt.nu = win_nu;
      const auto est = fit_all_windows(field, grid, opt, threads);
      write_windows_csv(win_out, grid, est);
      write_manifest(win_out, "windows", hash, the_seed);
    } else if (fit->parsed()) {
      fit_req.reference_covariate = !fit_no_ref;
      fit_req.seed = the_seed;
      fit_req.threads = threads;
      std::optional<SpaceTimeField> field;
      if (fit_field) field = load_gridded_csv(*fit_field);
      if (field && fit_req.log_transform) field = log_transform(std::move(*field));
      if (fit_req.covariates == "eof" && !field)
        throw Error(ErrorCode::MissingFlag, "--field is required with EOF covariates");
      auto obs = load_monitor_csv(fit_obs);
      if (fit_req.log_transform) obs = log_transform(std::move(obs));
      const auto windows = read_windows_csv(fit_windows);
      const auto cov = make_covariates(fit_req, field ? &*field : nullptr, nullptr);
      const auto samples = fit_model(fit_req, obs, *cov, windows.estimates, windows.grid);
      write_samples_csv(fit_out, samples, fit_metadata(fit_req, fit_field.value_or(fs::path{}), fit_windows, fit_out));
      write_manifest(fit_out, "fit", hash, the_seed);
    } else if (pred->parsed()) {
      const auto loaded = load_fit(pred_samples);
      const auto points = read_points_csv(pred_at);
      PredictOptions opt;
      opt.threads = threads;
      opt.thin = pred_thin;
      const auto summary = predict(loaded.file.samples, loaded.problem, *loaded.covariates,
                                   loaded.windows.estimates, loaded.windows.grid, points, opt);
      write_predictions_csv(pred_out, summary);
      write_manifest(pred_out, "predict", hash, loaded.file.samples.seed);
    } else if (score->parsed()) {
      const auto table = score_predictions(score_model, read_predictions_csv(score_pred),
                                           load_truth(score_truth, score_log), score_strata);
      write_score_csv(score_out, table);
      write_manifest(score_out, "score", hash, the_seed);
    } else if (sim->parsed()) {
      SimConfig cfg = sim_config ? load_sim_config(*sim_config) : SimConfig{};
      if (sim_full) {
        cfg.replicates = 50;
        cfg.niter = 10000;
      }
      if (sim_reps) cfg.replicates = *sim_reps;
      if (sim_iters) cfg.niter = *sim_iters;
      if (seed) cfg.seed = *seed;
      cfg.threads = threads;
      const auto study = run_study(cfg, sim_out);
      write_study(sim_out, study);
      for (const char* name : {"scores.csv", "summary.csv", "transfer.csv"})
        write_manifest(sim_out / name, "simulate", hash, cfg.seed);
      if (!study.failed.empty())
        log::warn(std::to_string(study.failed.size()) + " replicate(s) failed and were excluded");
    } else if (pipe->parsed()) {
      run_pipeline(pipe_config, pipe_resume, seed, threads);
    }
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::cerr << "ERROR:" << to_string(ErrorCode::IoError) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace nsgp::cli
