#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nsgp {

// Gaussian predictive scores for a single case. Throw DomainError if sd <= 0.
double crps_gaussian(double mean, double sd, double y);
double log_loss_gaussian(double mean, double sd, double y);

// Throw EmptyInput on empty input, GeometryMismatch on length mismatch.
double rmse(std::span<const double> predicted, std::span<const double> observed);
double coverage95(std::span<const double> lower, std::span<const double> upper,
                  std::span<const double> observed);

struct ScoredCase {
  double mean = 0.0;
  double sd = 1.0;
  double lower95 = 0.0;
  double upper95 = 0.0;
  double truth = 0.0;
};

// Log-loss and CRPS are sums over cases; RMSE is a root-mean; coverage a fraction.
struct ScoreRow {
  std::string model;
  std::string stratum;
  std::size_t n = 0;
  double log_loss = 0.0;
  double crps = 0.0;
  double rmse = 0.0;
  double coverage95 = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;

  // Throws InvalidArgument when absent.
  const ScoreRow& at(const std::string& model, const std::string& stratum) const;
};

inline constexpr const char* kOverall = "overall";

// One row per distinct stratum (in first-appearance order) and an "overall"
// row. Throws StratumMismatch when strata and cases differ in length,
// EmptyInput when there are no cases.
ScoreTable score_table(const std::string& model, std::span<const ScoredCase> cases,
                       std::span<const std::string> strata);

// Concatenates rows; helper for multi-model summaries.
void append(ScoreTable& into, const ScoreTable& from);

// `model,stratum,n,log_loss,crps,rmse,coverage95`
void write_score_csv(const std::filesystem::path& path, const ScoreTable& table);
ScoreTable read_score_csv(const std::filesystem::path& path);

}  // namespace nsgp
