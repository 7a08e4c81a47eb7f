#include "nsgp/sim.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nsgp/csv.hpp"
#include "nsgp/eof.hpp"
#include "nsgp/error.hpp"
#include "nsgp/log.hpp"
#include "nsgp/samples_io.hpp"

namespace nsgp {
namespace {

Eigen::MatrixXd standard_normals(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = normal(rng);
  return z;
}

// Columns are independent draws from N(0, C).
Eigen::MatrixXd gp_draws(std::span<const Location> locs, const LocalParams& params, double nu,
                         std::mt19937_64& rng, Eigen::Index count, int threads) {
  const auto chol = chol_with_jitter(build_cov_matrix(locs, params, KernelConfig{nu, 0.0}, threads));
  return chol.llt.matrixL() * standard_normals(rng, static_cast<Eigen::Index>(locs.size()), count);
}

std::vector<long> day_range(long first, int count) {
  std::vector<long> days(static_cast<std::size_t>(count));
  std::iota(days.begin(), days.end(), first);
  return days;
}

TransferCoefficients mean_coef(const std::vector<McmcState>& draws) {
  TransferCoefficients m{0.0, 0.0, 0.0, 0.0};
  for (const auto& d : draws) {
    m.a1 += d.coef.a1;
    m.b1 += d.coef.b1;
    m.a2 += d.coef.a2;
    m.b2 += d.coef.b2;
  }
  const double n = static_cast<double>(draws.size());
  return {m.a1 / n, m.b1 / n, m.a2 / n, m.b2 / n};
}

std::vector<ScoredCase> to_cases(const PredictiveSummary& p, const std::vector<double>& truth) {
  std::vector<ScoredCase> cases(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    cases[i] = {p.mean(k), p.sd(k), p.lower95(k), p.upper95(k), truth[i]};
  }
  return cases;
}

ScoreTable two_model_table(const std::vector<ScoredCase>& ns, const std::vector<ScoredCase>& s,
                           const std::vector<std::string>& strata) {
  ScoreTable t = score_table("NS", ns, strata);
  append(t, score_table("S", s, strata));
  return t;
}

}  // namespace

void SimConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  bool ok = grid_size >= 4 && grid_size % 2 == 0 && domain_max > domain_min && days >= 1 &&
            positive(nu) && noise_var >= 0.0 && train_fraction > 0.0 && train_fraction <= 1.0 &&
            replicates >= 1 && niter >= 100 && burnin_fraction >= 0.0 && burnin_fraction < 1.0 &&
            predict_thin >= 1;
  for (int k = 0; k < 4; ++k) ok = ok && positive(rho0[k]) && positive(sigma2_0[k]);
  if (!ok) throw Error(ErrorCode::InvalidArgument, "invalid simulation configuration");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::vector<Location> sim_grid(const SimConfig& config) {
  const int g = config.grid_size;
  const double step = (config.domain_max - config.domain_min) / (g - 1);
  std::vector<Location> locs;
  locs.reserve(static_cast<std::size_t>(g * g));
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i)
      locs.push_back({config.domain_min + step * i, config.domain_min + step * j});
  return locs;
}

std::size_t band_of(const SimConfig& config, const Location& s) {
  const double u = (s.lat - config.domain_min) / (config.domain_max - config.domain_min);
  return static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(4.0 * u)), 0, 3));
}

LocalParams band_params(const SimConfig& config, std::span<const Location> locs, double a, double b) {
  LocalParams p;
  p.rho.resize(static_cast<Eigen::Index>(locs.size()));
  p.sigma2.resize(static_cast<Eigen::Index>(locs.size()));
  for (std::size_t i = 0; i < locs.size(); ++i) {
    const auto band = band_of(config, locs[i]);
    p.rho(static_cast<Eigen::Index>(i)) = std::exp(a + b * std::log(config.rho0[band]));
    p.sigma2(static_cast<Eigen::Index>(i)) = std::exp(a + b * std::log(config.sigma2_0[band]));
  }
  return p;
}

SpaceTimeField simulate_reference(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  auto locs = sim_grid(config);
  std::mt19937_64 rng(derive_seed(seed, 1));
  Eigen::MatrixXd values =
      gp_draws(locs, band_params(config, locs, 0.0, 1.0), config.nu, rng, config.days, config.threads);
  return make_field(std::move(locs), day_range(1, config.days), std::move(values));
}

SpaceTimeField simulate_truth(const SimConfig& config, std::uint64_t seed) {
  config.validate();
  auto locs = sim_grid(config);
  const auto n = static_cast<Eigen::Index>(locs.size());
  std::mt19937_64 rng(derive_seed(seed, 2));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  if (config.include_latent)
    w = gp_draws(locs, band_params(config, locs, config.transfer_a, config.transfer_b), config.nu,
                 rng, 1, config.threads)
            .col(0);
  Eigen::MatrixXd values(n, config.days);
  const Eigen::MatrixXd noise = standard_normals(rng, n, config.days) * std::sqrt(config.noise_var);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = locs[static_cast<std::size_t>(i)];
    const double mean = config.mean_s1 * s.lon + config.mean_s2 * s.lat;
    for (Eigen::Index t = 0; t < config.days; ++t)
      values(i, t) = mean + w(i) + (config.include_noise ? noise(i, t) : 0.0);
  }
  return make_field(std::move(locs), day_range(1, config.days), std::move(values));
}

SimDesign sample_design(const SimConfig& config, const SpaceTimeField& truth, std::uint64_t seed) {
  const double mid = 0.5 * (config.domain_min + config.domain_max);
  std::vector<std::size_t> upper_left, lower_right;
  std::vector<bool> partial(truth.n(), false);
  for (std::size_t i = 0; i < truth.n(); ++i) {
    const auto& s = truth.locations[i];
    const bool left = s.lon < mid, upper = s.lat >= mid;
    if (left && upper) upper_left.push_back(i);
    if (!left && !upper) lower_right.push_back(i);
    partial[i] = (left == upper);
  }
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::vector<bool> train(truth.n(), false);
  for (auto* quadrant : {&upper_left, &lower_right}) {
    std::shuffle(quadrant->begin(), quadrant->end(), rng);
    const auto k = static_cast<std::size_t>(std::llround(config.train_fraction * quadrant->size()));
    for (std::size_t j = 0; j < k; ++j) train[(*quadrant)[j]] = true;
  }
  SimDesign d;
  for (std::size_t t = 0; t < truth.p(); ++t) {
    for (std::size_t i = 0; i < truth.n(); ++i) {
      const double v = truth.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t));
      if (train[i]) {
        d.training.records.push_back({truth.days[t], truth.locations[i], v});
      } else {
        d.test.push_back({truth.days[t], truth.locations[i]});
        d.test_truth.push_back(v);
        d.strata.emplace_back(partial[i] ? kPartialMissing : kAllMissing);
      }
    }
  }
  return d;
}

TransferCoefficients posterior_mean(const PosteriorSamples& samples) {
  if (samples.draws.empty()) throw Error(ErrorCode::NoSamples, "no draws");
  return mean_coef(samples.draws);
}

ReplicateResult run_replicate(const SimConfig& config, int index, const ReplicateOptions& options) {
  config.validate();
  ReplicateResult out;
  out.index = index;
  out.seed = config.seed + static_cast<std::uint64_t>(index);
  SimConfig local = config;
  local.threads = options.threads;

  const auto reference = simulate_reference(local, out.seed);
  const auto truth = simulate_truth(local, out.seed);
  const auto design = sample_design(local, truth, out.seed);
  const auto grid = partition(reference, local.window_size());
  WindowFitOptions wopt;
  wopt.nu = local.nu;
  const auto estimates = fit_all_windows(reference, grid, wopt, options.threads);

  const CoordinateCovariates covariates;
  const auto problem = make_problem(design.training, covariates, estimates, grid);
  ModelSpec spec;
  spec.num_eofs = 0;
  spec.nu_fixed = local.nu;
  McmcOptions mopt;
  mopt.niter = local.niter;
  mopt.burnin_fraction = local.burnin_fraction;
  mopt.threads = options.threads;
  mopt.seed = derive_seed(out.seed, 10);
  const auto ns = run_mcmc(problem, spec, mopt);
  out.ns_mean = posterior_mean(ns);
  out.ns_acceptance = ns.acceptance;

  std::optional<PosteriorSamples> st;
  if (options.stationary_chain) {
    ModelSpec sspec = spec;
    sspec.stationary = true;
    mopt.seed = derive_seed(out.seed, 11);
    st = run_mcmc(problem, sspec, mopt);
    out.s_mean = posterior_mean(*st);
    out.s_acceptance = st->acceptance;
  }

  PredictOptions popt;
  popt.threads = options.threads;
  popt.thin = local.predict_thin;
  std::optional<PredictiveSummary> ns_pred, s_pred;
  if (options.predict) {
    ns_pred = predict(ns, problem, covariates, estimates, grid, design.test, popt);
    out.ns_cases = to_cases(*ns_pred, design.test_truth);
    if (st) {
      s_pred = predict(*st, problem, covariates, estimates, grid, design.test, popt);
      out.s_cases = to_cases(*s_pred, design.test_truth);
    }
    out.strata = design.strata;
  }

  if (options.out_dir) {
    const auto dir = *options.out_dir / ("replicate_" + std::to_string(index));
    write_gridded_csv(dir / "reference.csv", reference);
    write_gridded_csv(dir / "truth.csv", truth);
    write_monitor_csv(dir / "training.csv", design.training);
    MonitorSet test;
    for (std::size_t i = 0; i < design.test.size(); ++i)
      test.records.push_back({design.test[i].day, design.test[i].site, design.test_truth[i]});
    write_monitor_csv(dir / "test.csv", test);
    auto strata = csv::open_for_write(dir / "strata.csv");
    strata << "lon,lat,stratum\n";
    for (std::size_t i = 0; i < design.test.size(); ++i)
      if (design.test[i].day == design.test.front().day)
        strata << csv::format(design.test[i].site.lon) << ',' << csv::format(design.test[i].site.lat)
               << ',' << design.strata[i] << '\n';
    write_windows_csv(dir / "windows.csv", grid, estimates);
    if (ns_pred) write_predictions_csv(dir / "predictions_ns.csv", *ns_pred);
    if (s_pred) write_predictions_csv(dir / "predictions_s.csv", *s_pred);
    if (ns_pred && s_pred)
      write_score_csv(dir / "scores.csv", two_model_table(out.ns_cases, out.s_cases, out.strata));
  }
  return out;
}

StudyResult run_study(const SimConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  config.validate();
  const int n = config.replicates;
  std::vector<std::optional<ReplicateResult>> results(static_cast<std::size_t>(n));
  const int threads = config.threads > 0 ? config.threads : omp_get_max_threads();
  ReplicateOptions ropt;
  ropt.out_dir = out_dir;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (int r = 0; r < n; ++r) {
    try {
      results[static_cast<std::size_t>(r)] = run_replicate(config, r, ropt);
    } catch (const Error& e) {
      log::warn("replicate " + std::to_string(r) + " failed: " + e.what());
    }
  }
  StudyResult study;
  std::vector<ScoredCase> ns, s;
  std::vector<std::string> strata;
  for (int r = 0; r < n; ++r) {
    auto& res = results[static_cast<std::size_t>(r)];
    if (!res) {
      study.failed.push_back(r);
      continue;
    }
    ns.insert(ns.end(), res->ns_cases.begin(), res->ns_cases.end());
    s.insert(s.end(), res->s_cases.begin(), res->s_cases.end());
    strata.insert(strata.end(), res->strata.begin(), res->strata.end());
    study.replicates.push_back(std::move(*res));
  }
  if (study.replicates.empty()) throw Error(ErrorCode::StageFailed, "every replicate failed");
  study.pooled = two_model_table(ns, s, strata);
  return study;
}

void write_study(const std::filesystem::path& dir, const StudyResult& study) {
  write_score_csv(dir / "scores.csv", study.pooled);
  ScoreTable summary;
  for (const auto& r : study.pooled.rows)
    if (r.stratum == kOverall) summary.rows.push_back(r);
  write_score_csv(dir / "summary.csv", summary);
  auto out = csv::open_for_write(dir / "transfer.csv");
  out << "replicate,model,a1,b1,a2,b2\n";
  for (const auto& r : study.replicates) {
    for (const auto& [label, c] : {std::pair{"NS", r.ns_mean}, std::pair{"S", r.s_mean}})
      out << r.index << ',' << label << ',' << csv::format(c.a1) << ',' << csv::format(c.b1) << ','
          << csv::format(c.a2) << ',' << csv::format(c.b2) << '\n';
  }
  auto failed = csv::open_for_write(dir / "failed.csv");
  failed << "replicate\n";
  for (int r : study.failed) failed << r << '\n';
}

// ---------------------------------------------------------------------------

AppData simulate_application(const AppConfig& config, std::uint64_t seed) {
  if (config.grid_size < 4 || config.reference_days < 2 || config.observed_days < 1 ||
      config.observed_days > config.reference_days || config.monitors < 2 || !(config.extent > 0.0))
    throw Error(ErrorCode::InvalidArgument, "invalid application configuration");
  const int g = config.grid_size;
  const double step = config.extent / (g - 1);
  std::vector<Location> locs;
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) locs.push_back({config.origin + step * i, config.origin + step * j});
  const auto n = static_cast<Eigen::Index>(locs.size());
  const int p = config.reference_days;
  std::mt19937_64 rng(derive_seed(seed, 21));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Base parameters: range grows west to east, variance south to north.
  auto base = [&](const Location& s) {
    const double u = (s.lon - config.origin) / config.extent;
    const double v = (s.lat - config.origin) / config.extent;
    return SiteParams{0.6 + 2.4 * u, 0.3 + 1.7 * v};
  };
  auto params_at = [&](std::span<const Location> pts, double a) {
    LocalParams lp;
    lp.rho.resize(static_cast<Eigen::Index>(pts.size()));
    lp.sigma2.resize(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto b = base(pts[i]);
      lp.rho(static_cast<Eigen::Index>(i)) = std::exp(a) * b.rho;
      lp.sigma2(static_cast<Eigen::Index>(i)) = std::exp(a) * b.sigma2;
    }
    return lp;
  };

  // Large-scale patterns with day-varying amplitudes.
  constexpr int kPatterns = 5;
  const double sds[kPatterns] = {3.0, 2.0, 1.5, 1.0, 0.7};
  Eigen::MatrixXd patterns(n, kPatterns);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = (locs[static_cast<std::size_t>(i)].lon - config.origin) / config.extent;
    const double v = (locs[static_cast<std::size_t>(i)].lat - config.origin) / config.extent;
    patterns(i, 0) = 1.0;
    patterns(i, 1) = u - 0.5;
    patterns(i, 2) = std::sin(std::numbers::pi * v);
    patterns(i, 3) = std::cos(2.0 * std::numbers::pi * u) * v;
    patterns(i, 4) = std::exp(-8.0 * ((u - 0.3) * (u - 0.3) + (v - 0.6) * (v - 0.6)));
  }
  Eigen::MatrixXd amplitudes(kPatterns, p);
  for (int t = 0; t < p; ++t)
    for (int k = 0; k < kPatterns; ++k) amplitudes(k, t) = sds[k] * normal(rng);
  Eigen::MatrixXd values = ((patterns * amplitudes).array() + 10.0).matrix();
  values += gp_draws(locs, params_at(locs, 0.0), 1.5, rng, p, config.threads);
  AppData data;
  data.reference = make_field(locs, day_range(1, p), values);

  // Monitors: scattered sites following the reference plus a latent field.
  std::uniform_real_distribution<double> unif(config.origin, config.origin + config.extent);
  std::vector<Location> sites;
  while (static_cast<int>(sites.size()) < config.monitors) {
    const Location s{unif(rng), unif(rng)};
    bool clash = false;
    for (const auto& o : sites) clash = clash || squared_distance(o, s) < 1e-6;
    if (!clash) sites.push_back(s);
  }
  const Eigen::VectorXd w = gp_draws(sites, params_at(sites, 0.3), 1.5, rng, 1, config.threads).col(0);
  for (int t = p - config.observed_days; t < p; ++t) {
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const auto cell = static_cast<Eigen::Index>(nearest_cell(data.reference, sites[i]));
      const double y = 0.5 + 0.9 * data.reference.values(cell, t) + w(static_cast<Eigen::Index>(i)) +
                       std::sqrt(config.noise_var) * normal(rng);
      data.monitors.records.push_back({data.reference.days[static_cast<std::size_t>(t)], sites[i], y});
    }
  }
  return data;
}

CvResult cross_validate(const AppConfig& config, const AppData& data, std::uint64_t seed) {
  if (config.folds < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 folds");
  ModelSpec spec;
  spec.num_eofs = config.num_eofs;
  const auto basis = compute_eofs(data.reference, config.num_eofs);
  const auto residual = detrend_by_eofs(data.reference, basis);
  const auto grid = partition(residual, config.window_size);
  const auto estimates = fit_all_windows(residual, grid, WindowFitOptions{}, config.threads);
  const EofCovariates covariates(spec, basis, data.reference);

  auto sites = data.monitors.distinct_sites();
  std::mt19937_64 rng(derive_seed(seed, 31));
  std::shuffle(sites.begin(), sites.end(), rng);
  std::vector<ScoredCase> ns_cases, s_cases;
  std::vector<std::string> strata;
  CvResult out;
  for (int k = 0; k < config.folds; ++k) {
    auto held_out = [&](const Location& s) {
      const auto pos = std::find(sites.begin(), sites.end(), s) - sites.begin();
      return pos % config.folds == k;
    };
    MonitorSet train;
    std::vector<PredictionPoint> test;
    std::vector<double> truth;
    for (const auto& r : data.monitors.records) {
      if (held_out(r.site)) {
        test.push_back({r.day, r.site});
        truth.push_back(r.value);
      } else {
        train.records.push_back(r);
      }
    }
    if (test.empty()) continue;
    const auto problem = make_problem(train, covariates, estimates, grid);
    McmcOptions mopt;
    mopt.niter = config.niter;
    mopt.burnin_fraction = config.burnin_fraction;
    mopt.threads = config.threads > 0 ? config.threads : 1;
    PredictOptions popt;
    popt.threads = config.threads;
    for (bool stationary : {false, true}) {
      ModelSpec s = spec;
      s.stationary = stationary;
      mopt.seed = derive_seed(seed, 100 + 2 * static_cast<std::uint64_t>(k) + (stationary ? 1 : 0));
      const auto samples = run_mcmc(problem, s, mopt);
      const auto pred = predict(samples, problem, covariates, estimates, grid, test, popt);
      auto cases = to_cases(pred, truth);
      auto& dest = stationary ? s_cases : ns_cases;
      dest.insert(dest.end(), cases.begin(), cases.end());
    }
    strata.insert(strata.end(), test.size(), "cv");
    ++out.folds_completed;
  }
  out.table = two_model_table(ns_cases, s_cases, strata);
  return out;
}

}  // namespace nsgp
