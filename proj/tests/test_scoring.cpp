#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <random>

#include "nsgp/scoring.hpp"
#include "test_util.hpp"

using namespace nsgp;

namespace {

// CRPS as the integral of (F(x) - 1{x >= y})^2, split at y.
double crps_integral(double mean, double sd, double y) {
  boost::math::normal_distribution<double> nd(mean, sd);
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  const double lo = std::min(mean, y) - 40.0 * sd, hi = std::max(mean, y) + 40.0 * sd;
  const double left = GK::integrate([&](double x) { const double f = boost::math::cdf(nd, x); return f * f; },
                                    lo, y, 15, 1e-13);
  const double right = GK::integrate([&](double x) { const double f = 1.0 - boost::math::cdf(nd, x); return f * f; },
                                     y, hi, 15, 1e-13);
  return left + right;
}

}  // namespace

TEST(Crps, ClosedFormValues) {
  EXPECT_NEAR(crps_gaussian(0, 1, 0), 2.0 / std::sqrt(2 * M_PI) - 1.0 / std::sqrt(M_PI), 1e-15);
  EXPECT_NEAR(crps_gaussian(0, 1, 0), 0.23369, 1e-5);
  EXPECT_NEAR(crps_gaussian(0, 1, 0), crps_integral(0, 1, 0), 1e-9);
  EXPECT_LT(crps_gaussian(2.0, 1e-9, 2.0), 1e-9);
  EXPECT_NSGP_ERROR(crps_gaussian(0, 0, 1), ErrorCode::DomainError);
  EXPECT_NSGP_ERROR(log_loss_gaussian(0, -1, 1), ErrorCode::DomainError);
}

TEST(Crps, RandomTriplesAndDominance) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> m(-5, 5), s(0.1, 4);
  for (int k = 0; k < 40; ++k) {
    const double mu = m(rng), sd = s(rng), y = m(rng);
    const double c = crps_gaussian(mu, sd, y);
    EXPECT_NEAR(c, crps_integral(mu, sd, y), 1e-8);
    // CRPS = E|X - y| - E|X - X'| / 2 with E|X - X'| = 2 sd / sqrt(pi), and
    // E|X - y| >= |mu - y|.
    const double z = (y - mu) / sd;
    boost::math::normal_distribution<double> unit;
    const double abs_err = sd * (2 * boost::math::pdf(unit, z) + z * (2 * boost::math::cdf(unit, z) - 1));
    EXPECT_NEAR(c, abs_err - sd / std::sqrt(M_PI), 1e-12);
    EXPECT_GE(c, std::abs(y - mu) - sd / std::sqrt(M_PI) - 1e-12);
    EXPECT_GE(c, 0.0);
  }
}

TEST(LogLoss, Values) {
  EXPECT_NEAR(log_loss_gaussian(1, 1, 1), 0.5 * std::log(2 * M_PI), 1e-15);
  EXPECT_NEAR(log_loss_gaussian(0, 0.5, 0), 0.5 * std::log(2 * M_PI * 0.25), 1e-15);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> m(-5, 5), s(0.1, 4);
  for (int k = 0; k < 50; ++k) {
    const double mu = m(rng), sd = s(rng), y = m(rng);
    boost::math::normal_distribution<double> nd(mu, sd);
    EXPECT_NEAR(log_loss_gaussian(mu, sd, y), -std::log(boost::math::pdf(nd, y)), 1e-12);
  }
}

TEST(Metrics, RmseCoverage) {
  const std::vector<double> p{1, 2, 3}, o{1, 2, 3};
  EXPECT_EQ(rmse(p, o), 0.0);
  const std::vector<double> e1{3, 4}, z{0, 0};
  EXPECT_NEAR(rmse(e1, z), std::sqrt(12.5), 1e-15);
  const std::vector<double> lo{0, 0, 0}, hi{2, 2, 2}, t{1, 3, 2};
  EXPECT_NEAR(coverage95(lo, hi, t), 2.0 / 3.0, 1e-15);
  EXPECT_NSGP_ERROR(rmse(std::vector<double>{}, std::vector<double>{}), ErrorCode::EmptyInput);
  EXPECT_NSGP_ERROR(coverage95(std::vector<double>{}, std::vector<double>{}, std::vector<double>{}), ErrorCode::EmptyInput);
}

TEST(Metrics, Propriety) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(1.0, 2.0);
  std::vector<double> y(10000);
  for (auto& v : y) v = n(rng);
  auto avg = [&](double mu, double sd, bool crps) {
    double s = 0;
    for (double v : y) s += crps ? crps_gaussian(mu, sd, v) : log_loss_gaussian(mu, sd, v);
    return s / double(y.size());
  };
  for (bool crps : {true, false}) {
    const double truth = avg(1.0, 2.0, crps);
    for (double d : {-0.5, 0.3, 1.0}) EXPECT_LE(truth, avg(1.0 + d, 2.0, crps));
    for (double f : {0.7, 1.4}) EXPECT_LE(truth, avg(1.0, 2.0 * f, crps));
  }
}

TEST(ScoreTable, StrataAndAdditivity) {
  std::vector<ScoredCase> cases;
  std::vector<std::string> strata;
  for (int i = 0; i < 10; ++i) {
    cases.push_back({0.1 * i, 1.0 + 0.05 * i, 0.1 * i - 1.96, 0.1 * i + 1.96, 0.3 * i - 0.5});
    strata.emplace_back(i % 2 ? "a" : "b");
  }
  const auto t = score_table("NS", cases, strata);
  ASSERT_EQ(t.rows.size(), 3u);
  const auto& a = t.at("NS", "a");
  const auto& b = t.at("NS", "b");
  const auto& all = t.at("NS", kOverall);
  EXPECT_NEAR(a.log_loss + b.log_loss, all.log_loss, 1e-12);
  EXPECT_NEAR(a.crps + b.crps, all.crps, 1e-12);
  EXPECT_EQ(a.n + b.n, all.n);
  EXPECT_NEAR(std::sqrt((a.rmse * a.rmse * 5 + b.rmse * b.rmse * 5) / 10), all.rmse, 1e-12);

  // Invariant to case order.
  std::vector<ScoredCase> rc(cases.rbegin(), cases.rend());
  std::vector<std::string> rs(strata.rbegin(), strata.rend());
  const auto r = score_table("NS", rc, rs);
  EXPECT_NEAR(r.at("NS", kOverall).crps, all.crps, 1e-12);
  EXPECT_NEAR(r.at("NS", "a").rmse, a.rmse, 1e-12);

  std::vector<std::string> one(10, "x");
  const auto single = score_table("S", cases, one);
  EXPECT_NEAR(single.at("S", "x").crps, single.at("S", kOverall).crps, 0.0);

  std::vector<std::string> short_strata(3, "x");
  EXPECT_NSGP_ERROR(score_table("S", cases, short_strata), ErrorCode::StratumMismatch);
  EXPECT_NSGP_ERROR(score_table("S", std::vector<ScoredCase>{}, std::vector<std::string>{}), ErrorCode::EmptyInput);

  testutil::TempDir dir("score");
  write_score_csv(dir / "s.csv", t);
  const auto back = read_score_csv(dir / "s.csv");
  EXPECT_EQ(back.at("NS", "a").crps, a.crps);
}
