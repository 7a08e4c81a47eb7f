#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nsgp/bhm.hpp"
#include "nsgp/field_store.hpp"
#include "nsgp/scoring.hpp"
#include "nsgp/window_mle.hpp"

namespace nsgp {

inline constexpr const char* kPartialMissing = "partial-missing";
inline constexpr const char* kAllMissing = "all-missing";

struct SimConfig {
  int grid_size = 40;
  double domain_min = 1.0;
  double domain_max = 100.0;
  int days = 4;
  // Per horizontal band, band 0 at the lowest latitudes.
  std::array<double, 4> rho0{15.0, 10.0, 5.0, 2.5};
  std::array<double, 4> sigma2_0{2.0, 3.0, 7.0, 10.0};
  double nu = 1.5;
  // Truth parameters: log theta = a + b log theta0 for both rho and sigma2.
  double transfer_a = 0.5;
  double transfer_b = 1.0;
  double noise_var = 1.0;
  double mean_s1 = 0.05;
  double mean_s2 = 0.1;
  bool include_latent = true;  // the shared w draw in the truth
  bool include_noise = true;
  double train_fraction = 0.25;  // of each partial-missing quadrant
  int replicates = 5;
  int niter = 2000;
  double burnin_fraction = 0.15;
  int predict_thin = 1;
  std::uint64_t seed = 1;
  int threads = 0;

  // Band-aligned windows: a quarter of the domain.
  double window_size() const { return (domain_max - domain_min) / 4.0; }
  void validate() const;  // throws InvalidArgument
};

// Independent stream for (seed, tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

std::vector<Location> sim_grid(const SimConfig& config);
std::size_t band_of(const SimConfig& config, const Location& s);
// Per-cell parameters exp(a) * theta0^b by band.
LocalParams band_params(const SimConfig& config, std::span<const Location> locs, double a, double b);

// T independent zero-mean draws with the base parameters.
SpaceTimeField simulate_reference(const SimConfig& config, std::uint64_t seed);
// Mean + one shared latent draw under the truth parameters + noise.
SpaceTimeField simulate_truth(const SimConfig& config, std::uint64_t seed);

struct SimDesign {
  MonitorSet training;                  // every training cell on every day
  std::vector<PredictionPoint> test;    // every other cell on every day
  std::vector<double> test_truth;
  std::vector<std::string> strata;      // aligned with test
};

// Upper-left and lower-right quadrants are partially observed; the other two
// contribute no training data.
SimDesign sample_design(const SimConfig& config, const SpaceTimeField& truth, std::uint64_t seed);

struct ReplicateOptions {
  bool stationary_chain = true;
  bool predict = true;
  int threads = 1;
  std::optional<std::filesystem::path> out_dir;  // per-replicate artifacts
};

struct ReplicateResult {
  int index = 0;
  std::uint64_t seed = 0;
  TransferCoefficients ns_mean;  // posterior means
  TransferCoefficients s_mean;
  AcceptanceRates ns_acceptance;
  AcceptanceRates s_acceptance;
  std::vector<ScoredCase> ns_cases;
  std::vector<ScoredCase> s_cases;
  std::vector<std::string> strata;
};

TransferCoefficients posterior_mean(const PosteriorSamples& samples);

ReplicateResult run_replicate(const SimConfig& config, int index, const ReplicateOptions& options = {});

struct StudyResult {
  std::vector<ReplicateResult> replicates;  // successful ones, by index
  std::vector<int> failed;
  ScoreTable pooled;  // NS and S rows per stratum and overall, pooled over replicates
};

// Replicates run in parallel with seeds config.seed + r.
StudyResult run_study(const SimConfig& config, const std::optional<std::filesystem::path>& out_dir = {});

// scores.csv (pooled), summary.csv (overall rows only), transfer.csv.
void write_study(const std::filesystem::path& dir, const StudyResult& study);

// ---------------------------------------------------------------------------
// Application-style synthetic scenario: a reference field with large-scale
// patterns plus a nonstationary residual, and scattered monitors whose values
// follow the reference with a nonstationary latent field.

struct AppConfig {
  int grid_size = 24;
  double origin = 0.0;
  double extent = 12.0;
  int reference_days = 20;
  int observed_days = 5;  // the last days of the reference period
  int monitors = 60;
  double window_size = 2.0;
  int num_eofs = 7;
  int folds = 5;
  int niter = 1500;
  double burnin_fraction = 0.15;
  double noise_var = 0.05;
  int threads = 0;
};

struct AppData {
  SpaceTimeField reference;
  MonitorSet monitors;
};

AppData simulate_application(const AppConfig& config, std::uint64_t seed);

struct CvResult {
  ScoreTable table;  // NS and S rows, one stratum per fold set and overall
  int folds_completed = 0;
};

// EOFs and detrended windows from the reference, then K-fold spatial cross
// validation over monitor sites for NS and S chains with nu sampled.
CvResult cross_validate(const AppConfig& config, const AppData& data, std::uint64_t seed);

}  // namespace nsgp
