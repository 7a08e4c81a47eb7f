#include "nsgp/bhm.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "nsgp/error.hpp"
#include "nsgp/log.hpp"

namespace nsgp {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_normal_prior(double x, double sd) {
  const double z = x / sd;
  return -0.5 * kLog2Pi - std::log(sd) - 0.5 * z * z;
}

double log_inv_gamma(double x, double shape, double rate) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

// log N(w; 0, LL') from a factor.
double gp_log_density(const CholeskyFactor& f, const Eigen::VectorXd& w) {
  const Eigen::VectorXd z = f.llt.matrixL().solve(w);
  return -0.5 * static_cast<double>(w.size()) * kLog2Pi - 0.5 * f.log_det() - 0.5 * z.squaredNorm();
}

bool state_finite(const McmcState& s) {
  return s.beta.allFinite() && s.w.allFinite() && std::isfinite(s.tau2) &&
         std::isfinite(s.omega2) && std::isfinite(s.coef.a1) && std::isfinite(s.coef.b1) &&
         std::isfinite(s.coef.a2) && std::isfinite(s.coef.b2) && std::isfinite(s.nu) &&
         s.tau2 > 0.0 && s.omega2 > 0.0;
}

struct LocationLess {
  bool operator()(const Location& a, const Location& b) const { return location_less(a, b); }
};

double& coef_ref(TransferCoefficients& c, int k) {
  switch (k) {
    case 0: return c.a1;
    case 1: return c.b1;
    case 2: return c.a2;
    default: return c.b2;
  }
}

// Metropolis-within-Gibbs sampler for one chain.
class Sampler {
 public:
  Sampler(const FitProblem& problem, const ModelSpec& spec, const McmcOptions& options)
      : problem_(problem),
        data_(problem.data),
        spec_(spec),
        options_(options),
        rng_(options.seed),
        sqdist_(squared_distances(problem.data.sites)) {
    const auto n_days = data_.days.size();
    day_records_.resize(n_days);
    for (std::size_t r = 0; r < data_.size(); ++r)
      day_records_[static_cast<std::size_t>(data_.day_of[r])].push_back(static_cast<Eigen::Index>(r));
    xtx_.reserve(n_days);
    for (const auto& rows : day_records_) {
      const Eigen::MatrixXd xt = data_.x(rows, Eigen::all);
      xtx_.push_back(xt.transpose() * xt);
    }
    site_counts_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data_.sites.size()));
    for (auto s : data_.site_of) site_counts_(s) += 1.0;
    init_state();
  }

  PosteriorSamples run() {
    const int niter = options_.niter;
    const int burnin = static_cast<int>(std::llround(options_.burnin_fraction * niter));
    PosteriorSamples out;
    out.seed = options_.seed;
    out.niter = niter;
    out.burnin = burnin;
    out.stationary = spec_.stationary;
    out.sites = data_.sites;
    out.days = data_.days;
    out.draws.reserve(static_cast<std::size_t>(std::max(0, niter - burnin)));

    for (int iter = 0; iter < niter; ++iter) {
      const bool adapting = iter < burnin;
      if (!(options_.frozen & kBeta)) update_beta();
      if (!(options_.frozen & kLatent)) update_latent();
      if (!(options_.frozen & kTau2)) update_tau2();
      if (!(options_.frozen & kOmega2)) update_omega2();
      if (!(options_.frozen & kTransfer)) update_transfer();
      if (!(options_.frozen & kSmoothness) && !spec_.nu_fixed) update_smoothness();
      if (!state_finite(state_))
        throw Error(ErrorCode::ChainDiverged,
                    "non-finite sampler state at iteration " + std::to_string(iter));
      if (adapting) {
        if ((iter + 1) % options_.adapt_interval == 0) adapt();
      } else {
        if (iter == burnin) reset_counts();
        out.draws.push_back(state_);
      }
      if (iter == burnin - 1) reset_counts();
    }
    auto rate = [this](int k) { return tries_[k] > 0 ? double(accepts_[k]) / tries_[k] : 0.0; };
    out.acceptance = {rate(0), rate(1), rate(2), rate(3), rate(4)};
    return out;
  }

 private:
  void init_state() {
    const auto k = static_cast<Eigen::Index>(data_.dim());
    const auto n_days = static_cast<Eigen::Index>(data_.days.size());
    const auto n_sites = static_cast<Eigen::Index>(data_.sites.size());
    if (options_.initial) {
      state_ = *options_.initial;
      if (state_.beta.rows() != n_days || state_.beta.cols() != k || state_.w.size() != n_sites)
        throw Error(ErrorCode::GeometryMismatch, "initial state does not match the data");
    } else {
      state_.beta = Eigen::MatrixXd::Zero(n_days, k);
      Eigen::VectorXd resid = data_.y;
      for (Eigen::Index t = 0; t < n_days; ++t) {
        const auto& rows = day_records_[static_cast<std::size_t>(t)];
        if (rows.empty()) continue;
        const Eigen::MatrixXd xt = data_.x(rows, Eigen::all);
        const Eigen::VectorXd yt = data_.y(rows);
        Eigen::MatrixXd gram = xtx_[static_cast<std::size_t>(t)];
        gram.diagonal().array() += 1e-6 * (1.0 + gram.diagonal().maxCoeff());
        state_.beta.row(t) = gram.ldlt().solve(xt.transpose() * yt).transpose();
        resid(rows) = yt - xt * state_.beta.row(t).transpose();
      }
      const double var = (resid.array() - resid.mean()).square().mean();
      state_.w = Eigen::VectorXd::Zero(n_sites);
      state_.tau2 = std::max(0.5 * var, 1e-6);
      state_.omega2 = std::max(state_.beta.squaredNorm() / std::max<double>(1, state_.beta.size()), 1.0);
      if (spec_.stationary) {
        state_.coef = {problem_.reference.log_rho.mean(), 0.0,
                       problem_.reference.log_sigma2.mean(), 0.0};
      } else {
        state_.coef = {0.0, 1.0, 0.0, 1.0};
      }
      state_.nu = spec_.nu_fixed.value_or(std::min(1.5, 0.5 * spec_.nu_upper));
    }
    if (spec_.stationary) {
      state_.coef.b1 = 0.0;
      state_.coef.b2 = 0.0;
    }
    if (spec_.nu_fixed) state_.nu = *spec_.nu_fixed;
    if (!(state_.nu > 0.0) || !(state_.nu < spec_.nu_upper || spec_.nu_fixed))
      throw Error(ErrorCode::DomainError, "initial smoothness outside (0, nu_upper)");
    if (!apply_link(state_.coef, problem_.reference, params_))
      throw Error(ErrorCode::DomainError, "initial transfer coefficients overflow the link");
    chol_ = factor(params_, state_.nu);
    gp_logdens_ = gp_log_density(chol_, state_.w);
  }

  CholeskyFactor factor(const LocalParams& params, double nu) const {
    return chol_with_jitter(build_cov_matrix(sqdist_, params, KernelConfig{nu, 0.0}, options_.threads));
  }

  Eigen::VectorXd standard_normal(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z(i) = normal_(rng_);
    return z;
  }

  double inv_gamma(double shape, double rate) {
    std::gamma_distribution<double> g(shape, 1.0 / rate);
    return 1.0 / g(rng_);
  }

  // Residual y - x beta_t for every record.
  Eigen::VectorXd mean_residual() const {
    Eigen::VectorXd r(static_cast<Eigen::Index>(data_.size()));
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      r(ii) = data_.y(ii) - data_.x.row(ii).dot(state_.beta.row(data_.day_of[i]));
    }
    return r;
  }

  void update_beta() {
    const auto k = static_cast<Eigen::Index>(data_.dim());
    for (std::size_t t = 0; t < day_records_.size(); ++t) {
      const auto& rows = day_records_[t];
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
      for (auto r : rows)
        rhs += data_.x.row(r).transpose() * (data_.y(r) - state_.w(data_.site_of[static_cast<std::size_t>(r)]));
      Eigen::MatrixXd prec = xtx_[t] / state_.tau2;
      prec.diagonal().array() += 1.0 / state_.omega2;
      Eigen::LLT<Eigen::MatrixXd> llt(prec);
      const Eigen::VectorXd mean = llt.solve(rhs / state_.tau2);
      const Eigen::VectorXd noise = llt.matrixU().solve(standard_normal(k));
      state_.beta.row(static_cast<Eigen::Index>(t)) = (mean + noise).transpose();
    }
  }

  // w | rest ~ N(m, (C^-1 + D)^-1), D = diag(n_s / tau2). Drawn with
  // Matheron's update: w = w0 + C (C + D^-1)^-1 (ybar - w0 - e), with
  // w0 ~ N(0, C), e ~ N(0, D^-1), ybar the per-site mean residual.
  void update_latent() {
    const auto n = static_cast<Eigen::Index>(data_.sites.size());
    const Eigen::VectorXd r = mean_residual();
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < data_.size(); ++i) ybar(data_.site_of[i]) += r(static_cast<Eigen::Index>(i));
    ybar.array() /= site_counts_.array();
    const Eigen::VectorXd noise_var = state_.tau2 / site_counts_.array();

    const Eigen::VectorXd w0 = chol_.llt.matrixL() * standard_normal(n);
    const Eigen::VectorXd e = noise_var.array().sqrt() * standard_normal(n).array();

    Eigen::MatrixXd cov = build_cov_matrix(sqdist_, params_, KernelConfig{state_.nu, 0.0}, options_.threads);
    cov.diagonal().array() += chol_.jitter;
    Eigen::MatrixXd sum = cov;
    sum.diagonal() += noise_var;
    Eigen::LLT<Eigen::MatrixXd> llt(sum);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::ChainDiverged, "latent update: C + D^-1 not positive definite");
    state_.w = w0 + cov * llt.solve(ybar - w0 - e);
    gp_logdens_ = gp_log_density(chol_, state_.w);
  }

  void update_tau2() {
    const Eigen::VectorXd r = mean_residual();
    double ssr = 0.0;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const double e = r(static_cast<Eigen::Index>(i)) - state_.w(data_.site_of[i]);
      ssr += e * e;
    }
    state_.tau2 = inv_gamma(spec_.variance_prior_shape + 0.5 * static_cast<double>(data_.size()),
                            spec_.variance_prior_rate + 0.5 * ssr);
  }

  void update_omega2() {
    state_.omega2 = inv_gamma(spec_.variance_prior_shape + 0.5 * static_cast<double>(state_.beta.size()),
                              spec_.variance_prior_rate + 0.5 * state_.beta.squaredNorm());
  }

  // Accepts or rejects a proposal for (coef, nu) with extra log-density
  // `log_ratio_extra` (prior and Jacobian terms).
  bool metropolis(const TransferCoefficients& coef, double nu, double log_ratio_extra, int slot) {
    ++tries_[slot];
    ++window_tries_[slot];
    LocalParams params;
    if (!apply_link(coef, problem_.reference, params)) return false;
    CholeskyFactor chol;
    try {
      chol = factor(params, nu);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotPositiveDefinite) throw;
      return false;
    }
    const double logdens = gp_log_density(chol, state_.w);
    const double log_alpha = logdens - gp_logdens_ + log_ratio_extra;
    if (!(std::log(uniform_(rng_)) < log_alpha)) return false;
    params_ = std::move(params);
    chol_ = std::move(chol);
    gp_logdens_ = logdens;
    state_.coef = coef;
    state_.nu = nu;
    ++accepts_[slot];
    ++window_accepts_[slot];
    return true;
  }

  void update_transfer() {
    const double sd = spec_.transfer_prior_sd;
    for (int k = 0; k < 4; ++k) {
      if (spec_.stationary && (k == 1 || k == 3)) continue;
      TransferCoefficients prop = state_.coef;
      double& v = coef_ref(prop, k);
      const double old = v;
      v = old + scale_[k] * normal_(rng_);
      metropolis(prop, state_.nu, log_normal_prior(v, sd) - log_normal_prior(old, sd), k);
    }
  }

  // Random walk on u = log(nu / (upper - nu)); the uniform prior contributes
  // only the Jacobian nu (upper - nu).
  void update_smoothness() {
    const double upper = spec_.nu_upper;
    const double nu = state_.nu;
    const double u = std::log(nu / (upper - nu));
    const double u_new = u + scale_[4] * normal_(rng_);
    const double nu_new = upper / (1.0 + std::exp(-u_new));
    if (!(nu_new > 0.0 && nu_new < upper)) {
      ++tries_[4];
      ++window_tries_[4];
      return;
    }
    const double log_jac = std::log(nu_new * (upper - nu_new)) - std::log(nu * (upper - nu));
    metropolis(state_.coef, nu_new, log_jac, 4);
  }

  void adapt() {
    for (int k = 0; k < 5; ++k) {
      if (window_tries_[k] == 0) continue;
      const double rate = double(window_accepts_[k]) / window_tries_[k];
      if (rate < 0.25 || rate > 0.45) scale_[k] *= std::exp(2.0 * (rate - 0.35));
      window_tries_[k] = window_accepts_[k] = 0;
    }
  }

  void reset_counts() {
    for (int k = 0; k < 5; ++k) tries_[k] = accepts_[k] = window_tries_[k] = window_accepts_[k] = 0;
  }

  const FitProblem& problem_;
  const ObservationData& data_;
  ModelSpec spec_;
  McmcOptions options_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  Eigen::MatrixXd sqdist_;
  std::vector<std::vector<Eigen::Index>> day_records_;
  std::vector<Eigen::MatrixXd> xtx_;
  Eigen::VectorXd site_counts_;

  McmcState state_;
  LocalParams params_;
  CholeskyFactor chol_;
  double gp_logdens_ = 0.0;

  double scale_[5] = {0.1, 0.1, 0.1, 0.1, 0.3};
  long tries_[5] = {0, 0, 0, 0, 0};
  long accepts_[5] = {0, 0, 0, 0, 0};
  long window_tries_[5] = {0, 0, 0, 0, 0};
  long window_accepts_[5] = {0, 0, 0, 0, 0};
};

// Shared set-up for both predictors.
struct PredictionLayout {
  std::vector<Location> locations;     // distinct new locations
  std::vector<std::size_t> loc_of;     // point -> location
  std::vector<Eigen::Index> day_of;    // point -> row of beta
  Eigen::MatrixXd x;                   // points x dim
  ReferenceLogs reference;
  std::vector<bool> at_training_site;
};

PredictionLayout layout_points(const PosteriorSamples& samples, const FitProblem& problem,
                               const CovariateModel& covariates, const WindowEstimates& estimates,
                               const WindowGrid& grid, std::span<const PredictionPoint> points) {
  if (samples.draws.empty()) throw Error(ErrorCode::NoSamples, "no posterior draws to predict from");
  PredictionLayout lay;
  std::map<Location, std::size_t, LocationLess> index;
  const auto k = static_cast<Eigen::Index>(covariates.dim());
  if (static_cast<std::size_t>(k) != problem.data.dim())
    throw Error(ErrorCode::GeometryMismatch, "covariate dimension differs from the fitted model");
  lay.x.resize(static_cast<Eigen::Index>(points.size()), k);
  std::set<Location, LocationLess> training(problem.data.sites.begin(), problem.data.sites.end());
  for (std::size_t p = 0; p < points.size(); ++p) {
    const auto& pt = points[p];
    auto [it, inserted] = index.emplace(pt.site, lay.locations.size());
    if (inserted) lay.locations.push_back(pt.site);
    lay.loc_of.push_back(it->second);
    auto d = std::lower_bound(samples.days.begin(), samples.days.end(), pt.day);
    if (d == samples.days.end() || *d != pt.day)
      throw Error(ErrorCode::InvalidArgument,
                  "day " + std::to_string(pt.day) + " has no fitted mean coefficients");
    lay.day_of.push_back(d - samples.days.begin());
    lay.x.row(static_cast<Eigen::Index>(p)) = covariates.row(pt.site, pt.day).transpose();
    lay.at_training_site.push_back(training.count(pt.site) > 0);
  }
  lay.reference = reference_logs(estimates, grid, lay.locations);
  return lay;
}

PredictiveSummary finish(std::span<const PredictionPoint> points, const Eigen::VectorXd& mean,
                         const Eigen::VectorXd& var, std::vector<bool> at_training) {
  PredictiveSummary out;
  out.points.assign(points.begin(), points.end());
  out.mean = mean;
  out.sd = var.cwiseMax(0.0).cwiseSqrt();
  out.lower95 = mean - 1.96 * out.sd;
  out.upper95 = mean + 1.96 * out.sd;
  out.at_training_site = std::move(at_training);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Covariates and data

Eigen::VectorXd design_row(const ModelSpec& spec, const EofBasis& basis,
                           const SpaceTimeField& field, const Location& s, long day) {
  if (basis.locations.size() != field.n())
    throw Error(ErrorCode::GeometryMismatch, "basis and field geometry differ");
  if (spec.num_eofs > basis.num_eofs())
    throw Error(ErrorCode::GeometryMismatch, "model asks for more EOFs than the basis holds");
  const int m = spec.num_eofs;
  Eigen::VectorXd row(m + (spec.include_reference_covariate ? 1 : 0));
  const auto cell = static_cast<Eigen::Index>(nearest_cell(field, s));
  for (int j = 0; j < m; ++j) row(j) = basis.eofs(cell, j);
  if (spec.include_reference_covariate)
    row(m) = field.values(cell, static_cast<Eigen::Index>(field.day_index(day)));
  return row;
}

EofCovariates::EofCovariates(ModelSpec spec, EofBasis basis, SpaceTimeField field)
    : spec_(std::move(spec)), basis_(std::move(basis)), field_(std::move(field)) {
  if (basis_.locations != field_.locations)
    throw Error(ErrorCode::GeometryMismatch, "basis and field geometry differ");
  if (spec_.num_eofs > basis_.num_eofs() || spec_.num_eofs < 0)
    throw Error(ErrorCode::GeometryMismatch, "model asks for more EOFs than the basis holds");
  if (dim() == 0) throw Error(ErrorCode::InvalidArgument, "mean model has no covariates");
}

std::size_t EofCovariates::dim() const {
  return static_cast<std::size_t>(spec_.num_eofs) + (spec_.include_reference_covariate ? 1u : 0u);
}

Eigen::VectorXd EofCovariates::row(const Location& s, long day) const {
  return design_row(spec_, basis_, field_, s, day);
}

ObservationData prepare_data(const MonitorSet& monitors, const CovariateModel& covariates) {
  if (monitors.records.empty()) throw Error(ErrorCode::EmptyInput, "no monitor records");
  ObservationData data;
  data.sites = monitors.distinct_sites();
  std::map<Location, int, LocationLess> site_index;
  for (std::size_t i = 0; i < data.sites.size(); ++i) site_index[data.sites[i]] = static_cast<int>(i);
  std::set<long> days;
  for (const auto& r : monitors.records) days.insert(r.day);
  data.days.assign(days.begin(), days.end());

  const auto n = static_cast<Eigen::Index>(monitors.records.size());
  data.y.resize(n);
  data.x.resize(n, static_cast<Eigen::Index>(covariates.dim()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = monitors.records[static_cast<std::size_t>(i)];
    if (!std::isfinite(r.value)) throw Error(ErrorCode::ParseError, "non-finite observation");
    data.y(i) = r.value;
    data.x.row(i) = covariates.row(r.site, r.day).transpose();
    data.site_of.push_back(site_index.at(r.site));
    data.day_of.push_back(static_cast<int>(
        std::lower_bound(data.days.begin(), data.days.end(), r.day) - data.days.begin()));
  }
  return data;
}

FitProblem make_problem(const MonitorSet& monitors, const CovariateModel& covariates,
                        const WindowEstimates& estimates, const WindowGrid& grid) {
  FitProblem problem;
  problem.data = prepare_data(monitors, covariates);
  if (problem.data.sites.size() < 2)
    throw Error(ErrorCode::InvalidArgument, "need observations at >= 2 distinct sites");
  problem.reference = reference_logs(estimates, grid, problem.data.sites);
  return problem;
}

// ---------------------------------------------------------------------------
// Densities

double log_likelihood_data(const McmcState& state, const ObservationData& data) {
  double ssr = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double e = data.y(ii) - data.x.row(ii).dot(state.beta.row(data.day_of[i])) -
                     state.w(data.site_of[i]);
    ssr += e * e;
  }
  const double n = static_cast<double>(data.size());
  return -0.5 * n * (kLog2Pi + std::log(state.tau2)) - 0.5 * ssr / state.tau2;
}

double log_posterior(const McmcState& state, const ObservationData& data, const ModelSpec& spec,
                     const LocalParams& params) {
  if (!(state.tau2 > 0.0) || !(state.omega2 > 0.0)) return kNegInf;
  if (!spec.nu_fixed && !(state.nu > 0.0 && state.nu < spec.nu_upper)) return kNegInf;
  double lp = log_likelihood_data(state, data);
  try {
    const auto f = chol_with_jitter(
        build_cov_matrix(std::span<const Location>(data.sites), params, KernelConfig{state.nu, 0.0}, 1));
    lp += gp_log_density(f, state.w);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotPositiveDefinite) throw;
    return kNegInf;
  }
  const double sd_beta = std::sqrt(state.omega2);
  for (Eigen::Index i = 0; i < state.beta.size(); ++i)
    lp += log_normal_prior(state.beta.data()[i], sd_beta);
  lp += log_inv_gamma(state.tau2, spec.variance_prior_shape, spec.variance_prior_rate);
  lp += log_inv_gamma(state.omega2, spec.variance_prior_shape, spec.variance_prior_rate);
  const double sd = spec.transfer_prior_sd;
  lp += log_normal_prior(state.coef.a1, sd) + log_normal_prior(state.coef.a2, sd);
  if (!spec.stationary)
    lp += log_normal_prior(state.coef.b1, sd) + log_normal_prior(state.coef.b2, sd);
  if (!spec.nu_fixed) lp -= std::log(spec.nu_upper);
  return lp;
}

// ---------------------------------------------------------------------------
// Sampling

PosteriorSamples run_mcmc(const FitProblem& problem, const ModelSpec& spec,
                          const McmcOptions& options) {
  if (problem.data.sites.size() < 2)
    throw Error(ErrorCode::InvalidArgument, "need observations at >= 2 distinct sites");
  if (options.niter < 100) throw Error(ErrorCode::InvalidArgument, "niter must be >= 100");
  if (!(options.burnin_fraction >= 0.0 && options.burnin_fraction < 1.0))
    throw Error(ErrorCode::InvalidArgument, "burn-in fraction must lie in [0, 1)");
  if (problem.reference.size() != problem.data.sites.size())
    throw Error(ErrorCode::GeometryMismatch, "reference estimates not aligned with sites");
  Sampler sampler(problem, spec, options);
  return sampler.run();
}

// ---------------------------------------------------------------------------
// Prediction

PredictiveSummary predict(const PosteriorSamples& samples, const FitProblem& problem,
                          const CovariateModel& covariates, const WindowEstimates& estimates,
                          const WindowGrid& grid, std::span<const PredictionPoint> points,
                          const PredictOptions& options) {
  const auto lay = layout_points(samples, problem, covariates, estimates, grid, points);
  const auto& sites = problem.data.sites;
  const Eigen::MatrixXd sqdist = squared_distances(sites);
  const auto n_points = static_cast<Eigen::Index>(points.size());

  std::vector<std::size_t> chosen;
  for (std::size_t d = 0; d < samples.draws.size(); d += static_cast<std::size_t>(std::max(1, options.thin)))
    chosen.push_back(d);

  auto per_draw = [&](const McmcState& s, Eigen::Ref<Eigen::VectorXd> mean,
                      Eigen::Ref<Eigen::VectorXd> var) {
    LocalParams train, fresh;
    apply_link(s.coef, problem.reference, train);
    apply_link(s.coef, lay.reference, fresh);
    const auto f = chol_with_jitter(build_cov_matrix(sqdist, train, KernelConfig{s.nu, 0.0}, 1));
    const Eigen::MatrixXd cross = build_cross_cov(lay.locations, fresh, sites, train, s.nu, 1);
    const Eigen::VectorXd alpha = f.llt.solve(s.w);
    const Eigen::VectorXd w_mean = cross * alpha;
    const Eigen::MatrixXd v = f.llt.matrixL().solve(cross.transpose());
    const Eigen::VectorXd w_var =
        (fresh.sigma2 - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
    for (Eigen::Index p = 0; p < n_points; ++p) {
      const auto up = static_cast<std::size_t>(p);
      const auto loc = static_cast<Eigen::Index>(lay.loc_of[up]);
      mean(p) = lay.x.row(p).dot(s.beta.row(lay.day_of[up])) + w_mean(loc);
      var(p) = w_var(loc) + s.tau2;
    }
  };

  // Welford accumulation in draw order keeps results independent of the
  // thread count.
  Eigen::VectorXd run_mean = Eigen::VectorXd::Zero(n_points);
  Eigen::VectorXd run_m2 = Eigen::VectorXd::Zero(n_points);
  Eigen::VectorXd run_within = Eigen::VectorXd::Zero(n_points);
  double count = 0.0;
  const std::size_t block = static_cast<std::size_t>(std::max(1, options.block_size));
  const int nthreads = options.threads > 0 ? options.threads : omp_get_max_threads();
  for (std::size_t start = 0; start < chosen.size(); start += block) {
    const std::size_t nb = std::min(block, chosen.size() - start);
    Eigen::MatrixXd means(n_points, static_cast<Eigen::Index>(nb));
    Eigen::MatrixXd vars(n_points, static_cast<Eigen::Index>(nb));
    std::vector<std::exception_ptr> errors(nb);
#pragma omp parallel for schedule(dynamic, 1) num_threads(nthreads)
    for (long b = 0; b < static_cast<long>(nb); ++b) {
      try {
        per_draw(samples.draws[chosen[start + static_cast<std::size_t>(b)]], means.col(b), vars.col(b));
      } catch (...) {
        errors[static_cast<std::size_t>(b)] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    for (std::size_t b = 0; b < nb; ++b) {
      count += 1.0;
      const auto col = static_cast<Eigen::Index>(b);
      const Eigen::VectorXd delta = means.col(col) - run_mean;
      run_mean += delta / count;
      run_m2 += delta.cwiseProduct(means.col(col) - run_mean);
      run_within += vars.col(col);
    }
  }
  const Eigen::VectorXd total_var = run_m2 / count + run_within / count;
  return finish(points, run_mean, total_var, lay.at_training_site);
}

namespace reference {

PredictiveSummary predict(const PosteriorSamples& samples, const FitProblem& problem,
                          const CovariateModel& covariates, const WindowEstimates& estimates,
                          const WindowGrid& grid, std::span<const PredictionPoint> points,
                          int thin) {
  const auto lay = layout_points(samples, problem, covariates, estimates, grid, points);
  const auto& sites = problem.data.sites;
  const auto n_points = static_cast<Eigen::Index>(points.size());
  std::vector<Eigen::VectorXd> draw_means, draw_vars;
  for (std::size_t d = 0; d < samples.draws.size(); d += static_cast<std::size_t>(std::max(1, thin))) {
    const auto& s = samples.draws[d];
    LocalParams train, fresh;
    apply_link(s.coef, problem.reference, train);
    apply_link(s.coef, lay.reference, fresh);
    const auto f = chol_with_jitter(nsgp::reference::build_cov_matrix(sites, train, KernelConfig{s.nu, 0.0}));
    const Eigen::VectorXd alpha = f.llt.solve(s.w);
    Eigen::VectorXd m(n_points), v(n_points);
    for (Eigen::Index p = 0; p < n_points; ++p) {
      const auto up = static_cast<std::size_t>(p);
      const auto loc = lay.loc_of[up];
      Eigen::VectorXd c(static_cast<Eigen::Index>(sites.size()));
      for (std::size_t j = 0; j < sites.size(); ++j)
        c(static_cast<Eigen::Index>(j)) =
            ns_cov(lay.locations[loc], sites[j], fresh.at(loc), train.at(j), s.nu);
      const double kvar = std::max(0.0, fresh.sigma2(static_cast<Eigen::Index>(loc)) - c.dot(f.llt.solve(c)));
      m(p) = lay.x.row(p).dot(s.beta.row(lay.day_of[up])) + c.dot(alpha);
      v(p) = kvar + s.tau2;
    }
    draw_means.push_back(m);
    draw_vars.push_back(v);
  }
  const double count = static_cast<double>(draw_means.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n_points);
  Eigen::VectorXd within = Eigen::VectorXd::Zero(n_points);
  for (std::size_t d = 0; d < draw_means.size(); ++d) {
    mean += draw_means[d];
    within += draw_vars[d];
  }
  mean /= count;
  Eigen::VectorXd between = Eigen::VectorXd::Zero(n_points);
  for (const auto& m : draw_means) between += (m - mean).cwiseAbs2();
  return finish(points, mean, between / count + within / count, lay.at_training_site);
}

}  // namespace reference

}  // namespace nsgp
