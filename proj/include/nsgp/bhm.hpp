#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "nsgp/covariance.hpp"
#include "nsgp/eof.hpp"
#include "nsgp/field_store.hpp"
#include "nsgp/transfer.hpp"
#include "nsgp/window_mle.hpp"

namespace nsgp {

// Hierarchy:
//   y_t(s) | beta_t, w  ~ N(x_t(s)' beta_t + w(s), tau2)
//   w ~ GP(0, C) with C the nonstationary Matérn under the transfer link
//   beta_{t,m} ~ N(0, omega2);  tau2, omega2 ~ InvGamma(0.1, 0.1)
//   a1, b1, a2, b2 ~ N(0, 10^2);  nu ~ Uniform(0, 3)
struct ModelSpec {
  int num_eofs = 7;
  bool include_reference_covariate = true;
  double variance_prior_shape = 0.1;
  double variance_prior_rate = 0.1;
  double transfer_prior_sd = 10.0;
  double nu_upper = 3.0;
  std::optional<double> nu_fixed;
  // Clamp b1 = b2 = 0: the stationary baseline on the same code path.
  bool stationary = false;
};

// Mean covariates x_t(s).
class CovariateModel {
 public:
  virtual ~CovariateModel() = default;
  virtual std::size_t dim() const = 0;
  virtual Eigen::VectorXd row(const Location& s, long day) const = 0;
};

// [e_1(s), ..., e_M(s), x_t(s)] read from the nearest reference-grid cell.
Eigen::VectorXd design_row(const ModelSpec& spec, const EofBasis& basis,
                           const SpaceTimeField& field, const Location& s, long day);

class EofCovariates final : public CovariateModel {
 public:
  EofCovariates(ModelSpec spec, EofBasis basis, SpaceTimeField field);
  std::size_t dim() const override;
  Eigen::VectorXd row(const Location& s, long day) const override;

 private:
  ModelSpec spec_;
  EofBasis basis_;
  SpaceTimeField field_;
};

// The raw coordinates (s1, s2) as the two covariates.
class CoordinateCovariates final : public CovariateModel {
 public:
  std::size_t dim() const override { return 2; }
  Eigen::VectorXd row(const Location& s, long) const override {
    return Eigen::Vector2d(s.lon, s.lat);
  }
};

// Monitor records flattened against distinct sites and days.
struct ObservationData {
  std::vector<Location> sites;  // first-appearance order
  std::vector<long> days;       // ascending
  Eigen::VectorXd y;            // one entry per record
  Eigen::MatrixXd x;            // records x dim
  std::vector<int> site_of;
  std::vector<int> day_of;

  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t size() const { return static_cast<std::size_t>(y.size()); }
};

ObservationData prepare_data(const MonitorSet& monitors, const CovariateModel& covariates);

struct FitProblem {
  ObservationData data;
  ReferenceLogs reference;  // at data.sites
};

// Throws InvalidArgument with fewer than 2 distinct sites.
FitProblem make_problem(const MonitorSet& monitors, const CovariateModel& covariates,
                        const WindowEstimates& estimates, const WindowGrid& grid);

struct McmcState {
  Eigen::MatrixXd beta;  // days x dim
  Eigen::VectorXd w;     // one value per site, shared across days
  double tau2 = 1.0;
  double omega2 = 1.0;
  TransferCoefficients coef;
  double nu = 1.5;
};

double log_likelihood_data(const McmcState& state, const ObservationData& data);

// Data term + GP density of w under `params` + all priors, up to a constant.
// Returns -inf when the covariance cannot be factorised or a parameter
// leaves its support.
double log_posterior(const McmcState& state, const ObservationData& data, const ModelSpec& spec,
                     const LocalParams& params);

// Sampler blocks, usable as a bitmask of updates to hold fixed.
enum Block : unsigned {
  kBeta = 1u << 0,
  kLatent = 1u << 1,
  kTau2 = 1u << 2,
  kOmega2 = 1u << 3,
  kTransfer = 1u << 4,
  kSmoothness = 1u << 5,
};

struct McmcOptions {
  int niter = 10000;
  double burnin_fraction = 0.15;
  std::uint64_t seed = 1;
  unsigned frozen = 0;                 // Block bits held at their initial value
  std::optional<McmcState> initial;
  int adapt_interval = 25;
  int threads = 1;                     // for covariance assembly
};

struct AcceptanceRates {
  double a1 = 0.0, b1 = 0.0, a2 = 0.0, b2 = 0.0, nu = 0.0;
};

struct PosteriorSamples {
  std::vector<McmcState> draws;  // retained, in iteration order
  AcceptanceRates acceptance;    // over retained iterations
  std::uint64_t seed = 0;
  int niter = 0;
  int burnin = 0;
  bool stationary = false;
  std::vector<Location> sites;
  std::vector<long> days;
};

// One Metropolis-within-Gibbs sweep per iteration: beta_t, w, tau2, omega2
// (conjugate), then a1, b1, a2, b2 one at a time and nu on the logit scale
// (random-walk MH). Step sizes adapt during burn-in and are frozen after.
// Deterministic given options.seed. Throws ChainDiverged.
PosteriorSamples run_mcmc(const FitProblem& problem, const ModelSpec& spec,
                          const McmcOptions& options);

struct PredictionPoint {
  long day = 0;
  Location site;
};

struct PredictiveSummary {
  std::vector<PredictionPoint> points;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::VectorXd lower95;
  Eigen::VectorXd upper95;
  std::vector<bool> at_training_site;
};

struct PredictOptions {
  int threads = 0;
  int thin = 1;        // use every thin-th retained draw
  int block_size = 32; // draws evaluated concurrently before the ordered reduction
};

// Per draw: kriging of w at the new sites given the sampled w, plus the mean
// from beta_t and the nugget tau2. Summaries combine draws by the law of
// total variance; bounds are mean +/- 1.96 sd. Throws NoSamples.
PredictiveSummary predict(const PosteriorSamples& samples, const FitProblem& problem,
                          const CovariateModel& covariates, const WindowEstimates& estimates,
                          const WindowGrid& grid, std::span<const PredictionPoint> points,
                          const PredictOptions& options = {});

namespace reference {

// Point-by-point serial evaluation of the same predictive summary.
PredictiveSummary predict(const PosteriorSamples& samples, const FitProblem& problem,
                          const CovariateModel& covariates, const WindowEstimates& estimates,
                          const WindowGrid& grid, std::span<const PredictionPoint> points,
                          int thin = 1);

}  // namespace reference

}  // namespace nsgp
