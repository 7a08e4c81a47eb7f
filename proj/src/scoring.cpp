#include "nsgp/scoring.hpp"

#include <cmath>
#include <numbers>

#include "nsgp/csv.hpp"
#include "nsgp/error.hpp"

namespace nsgp {
namespace {

void require_sd(double sd) {
  if (!(sd > 0.0) || !std::isfinite(sd))
    throw Error(ErrorCode::DomainError, "predictive sd must be positive and finite");
}

double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

ScoreRow score_subset(const std::string& model, const std::string& stratum,
                      std::span<const ScoredCase> cases, const std::vector<std::size_t>& idx) {
  ScoreRow row{model, stratum, idx.size()};
  double sq = 0.0;
  std::size_t inside = 0;
  for (auto i : idx) {
    const auto& c = cases[i];
    row.log_loss += log_loss_gaussian(c.mean, c.sd, c.truth);
    row.crps += crps_gaussian(c.mean, c.sd, c.truth);
    sq += (c.mean - c.truth) * (c.mean - c.truth);
    if (c.truth >= c.lower95 && c.truth <= c.upper95) ++inside;
  }
  row.rmse = std::sqrt(sq / static_cast<double>(idx.size()));
  row.coverage95 = static_cast<double>(inside) / static_cast<double>(idx.size());
  return row;
}

}  // namespace

double crps_gaussian(double mean, double sd, double y) {
  require_sd(sd);
  const double z = (y - mean) / sd;
  return sd * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) -
               1.0 / std::sqrt(std::numbers::pi));
}

double log_loss_gaussian(double mean, double sd, double y) {
  require_sd(sd);
  const double z = (y - mean) / sd;
  return 0.5 * std::log(2.0 * std::numbers::pi * sd * sd) + 0.5 * z * z;
}

double rmse(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.empty()) throw Error(ErrorCode::EmptyInput, "rmse of no cases");
  if (predicted.size() != observed.size())
    throw Error(ErrorCode::GeometryMismatch, "rmse inputs differ in length");
  double sq = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    sq += (predicted[i] - observed[i]) * (predicted[i] - observed[i]);
  return std::sqrt(sq / static_cast<double>(predicted.size()));
}

double coverage95(std::span<const double> lower, std::span<const double> upper,
                  std::span<const double> observed) {
  if (observed.empty()) throw Error(ErrorCode::EmptyInput, "coverage of no cases");
  if (lower.size() != observed.size() || upper.size() != observed.size())
    throw Error(ErrorCode::GeometryMismatch, "coverage inputs differ in length");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < observed.size(); ++i)
    if (observed[i] >= lower[i] && observed[i] <= upper[i]) ++inside;
  return static_cast<double>(inside) / static_cast<double>(observed.size());
}

const ScoreRow& ScoreTable::at(const std::string& model, const std::string& stratum) const {
  for (const auto& r : rows)
    if (r.model == model && r.stratum == stratum) return r;
  throw Error(ErrorCode::InvalidArgument, "no score row for " + model + "/" + stratum);
}

ScoreTable score_table(const std::string& model, std::span<const ScoredCase> cases,
                       std::span<const std::string> strata) {
  if (cases.size() != strata.size())
    throw Error(ErrorCode::StratumMismatch, "strata labels do not align with predictions");
  if (cases.empty()) throw Error(ErrorCode::EmptyInput, "no cases to score");
  std::vector<std::string> names;
  std::vector<std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < strata.size(); ++i) {
    std::size_t k = 0;
    while (k < names.size() && names[k] != strata[i]) ++k;
    if (k == names.size()) {
      names.push_back(strata[i]);
      members.emplace_back();
    }
    members[k].push_back(i);
  }
  ScoreTable table;
  for (std::size_t k = 0; k < names.size(); ++k)
    table.rows.push_back(score_subset(model, names[k], cases, members[k]));
  std::vector<std::size_t> all(cases.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  table.rows.push_back(score_subset(model, kOverall, cases, all));
  return table;
}

void append(ScoreTable& into, const ScoreTable& from) {
  into.rows.insert(into.rows.end(), from.rows.begin(), from.rows.end());
}

void write_score_csv(const std::filesystem::path& path, const ScoreTable& table) {
  auto out = csv::open_for_write(path);
  out << "model,stratum,n,log_loss,crps,rmse,coverage95\n";
  for (const auto& r : table.rows)
    out << r.model << ',' << r.stratum << ',' << r.n << ',' << csv::format(r.log_loss) << ','
        << csv::format(r.crps) << ',' << csv::format(r.rmse) << ',' << csv::format(r.coverage95)
        << '\n';
}

ScoreTable read_score_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto cm = t.column("model"), cs = t.column("stratum"), cn = t.column("n"),
             cl = t.column("log_loss"), cc = t.column("crps"), cr = t.column("rmse"),
             cv = t.column("coverage95");
  ScoreTable table;
  for (const auto& row : t.rows) {
    ScoreRow r;
    r.model = row[cm];
    r.stratum = row[cs];
    r.n = static_cast<std::size_t>(csv::parse_long(row[cn], "n"));
    r.log_loss = csv::parse_double(row[cl], "log_loss");
    r.crps = csv::parse_double(row[cc], "crps");
    r.rmse = csv::parse_double(row[cr], "rmse");
    r.coverage95 = csv::parse_double(row[cv], "coverage95");
    table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace nsgp
