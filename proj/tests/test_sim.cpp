#include <gtest/gtest.h>

#include <set>

#include "nsgp/sim.hpp"
#include "test_util.hpp"

using namespace nsgp;

TEST(Sim, GridAndBands) {
  SimConfig c;
  const auto g = sim_grid(c);
  ASSERT_EQ(g.size(), 1600u);
  EXPECT_DOUBLE_EQ(g.front().lon, 1.0);
  EXPECT_DOUBLE_EQ(g.back().lat, 100.0);
  EXPECT_EQ(band_of(c, {50, 1}), 0u);
  EXPECT_EQ(band_of(c, {50, 100}), 3u);
  const auto p = band_params(c, std::vector<Location>{{1, 1}}, 0.5, 1.0);
  EXPECT_NEAR(p.rho(0), 15.0 * std::exp(0.5), 1e-12);
  // Windows and bands coincide.
  const auto ref = simulate_reference(c, 1);
  const auto grid = partition(ref, c.window_size());
  for (std::size_t i = 0; i < ref.n(); ++i)
    EXPECT_EQ(band_of(c, grid.windows[grid.assignment[i]].center()), band_of(c, ref.locations[i]));
}

TEST(Sim, ReferenceDeterministicAndOrdered) {
  SimConfig c;
  c.days = 4;
  EXPECT_EQ(simulate_reference(c, 3).values, simulate_reference(c, 3).values);
  int ordered = 0;
  double lag_low = 0.0, lag_high = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto f = simulate_reference(c, static_cast<std::uint64_t>(100 + s));
    std::array<double, 4> var{};
    std::array<int, 4> count{};
    for (std::size_t i = 0; i < f.n(); ++i) {
      const auto b = band_of(c, f.locations[i]);
      var[b] += f.values.row(static_cast<Eigen::Index>(i)).squaredNorm();
      count[b] += 4;
    }
    for (int b = 0; b < 4; ++b) var[b] /= count[b];
    if (var[0] < var[1] && var[1] < var[2] && var[2] < var[3]) ++ordered;
    // Lag-2 neighbours along a row (about 5 units apart) in bands 0 and 3.
    auto lag_corr = [&](std::size_t band) {
      double sxy = 0, sxx = 0, syy = 0;
      for (std::size_t i = 0; i + 2 < f.n(); ++i) {
        if (band_of(c, f.locations[i]) != band || f.locations[i + 2].lat != f.locations[i].lat) continue;
        for (Eigen::Index t = 0; t < 4; ++t) {
          const double a = f.values(static_cast<Eigen::Index>(i), t), b = f.values(static_cast<Eigen::Index>(i + 2), t);
          sxy += a * b;
          sxx += a * a;
          syy += b * b;
        }
      }
      return sxy / std::sqrt(sxx * syy);
    };
    lag_low += lag_corr(0);
    lag_high += lag_corr(3);
  }
  EXPECT_GE(ordered, 18);
  EXPECT_GT(lag_low / seeds, lag_high / seeds);
}

TEST(Sim, TruthMeanAndNoise) {
  SimConfig c;
  c.include_latent = false;
  c.include_noise = false;
  c.grid_size = 10;
  c.domain_min = 0;
  c.domain_max = 90;  // 10-unit spacing puts a cell at (10, 20)
  const auto f = simulate_truth(c, 1);
  const auto i = nearest_cell(f, {10, 20});
  ASSERT_EQ(f.locations[i], (Location{10, 20}));
  for (Eigen::Index t = 0; t < f.values.cols(); ++t) EXPECT_NEAR(f.values(static_cast<Eigen::Index>(i), t), 2.5, 1e-12);

  c.include_noise = true;
  c.grid_size = 40;
  const auto g = simulate_truth(c, 2);
  double ss = 0.0;
  for (std::size_t k = 0; k < g.n(); ++k)
    for (Eigen::Index t = 0; t < 4; ++t) {
      const auto& s = g.locations[k];
      const double e = g.values(static_cast<Eigen::Index>(k), t) - 0.05 * s.lon - 0.1 * s.lat;
      ss += e * e;
    }
  EXPECT_NEAR(ss / (1600.0 * 4.0), 1.0, 0.06);
}

TEST(Sim, TruthRangeInLowestBand) {
  // One noiseless latent draw per seed, pooled as replicates over the band.
  SimConfig c;
  c.include_noise = false;
  std::vector<Location> band;
  std::vector<std::size_t> rows;
  const auto grid = sim_grid(c);
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (band_of(c, grid[i]) == 0) {
      band.push_back(grid[i]);
      rows.push_back(i);
    }
  const int reps = 12;
  Eigen::MatrixXd y(static_cast<Eigen::Index>(band.size()), reps);
  for (int r = 0; r < reps; ++r) {
    const auto f = simulate_truth(c, static_cast<std::uint64_t>(500 + r));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& s = f.locations[rows[k]];
      y(static_cast<Eigen::Index>(k), r) = f.values(static_cast<Eigen::Index>(rows[k]), 0) - 0.05 * s.lon - 0.1 * s.lat;
    }
  }
  WindowFitOptions opt;
  const auto fit = fit_window(y, band, opt);
  const double expected = std::exp(0.5) * 15.0;
  EXPECT_GT(fit.rho_hat, 0.5 * expected);
  EXPECT_LT(fit.rho_hat, 1.5 * expected);
}

TEST(Sim, Design) {
  SimConfig c;
  const auto truth = simulate_truth(c, 4);
  const auto d = sample_design(c, truth, 4);
  const auto sites = d.training.distinct_sites();
  EXPECT_EQ(sites.size(), 200u);
  EXPECT_EQ(d.training.records.size(), 800u);
  for (const auto& s : sites) {
    const bool left = s.lon < 50.5, upper = s.lat >= 50.5;
    EXPECT_EQ(left, upper) << "training site in an all-missing quadrant";
  }
  EXPECT_EQ(d.test.size(), 1400u * 4u);
  std::set<std::string> labels(d.strata.begin(), d.strata.end());
  EXPECT_EQ(labels, (std::set<std::string>{kPartialMissing, kAllMissing}));
  std::size_t partial = 0;
  for (const auto& s : d.strata) partial += s == kPartialMissing;
  EXPECT_EQ(partial, 600u * 4u);
  const auto again = sample_design(c, truth, 4);
  EXPECT_EQ(again.training.distinct_sites(), sites);
}

TEST(Sim, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(9, 3), derive_seed(9, 3));
}

TEST(Sim, SmallStudyRunsAndIsReproducible) {
  SimConfig c;
  c.grid_size = 16;
  c.replicates = 2;
  c.niter = 150;
  c.predict_thin = 5;
  testutil::TempDir d1("sim1"), d2("sim2");
  const auto a = run_study(c, d1.path());
  const auto b = run_study(c, d2.path());
  write_study(d1.path(), a);
  write_study(d2.path(), b);
  EXPECT_TRUE(a.failed.empty());
  ASSERT_EQ(a.replicates.size(), 2u);
  for (const char* f : {"scores.csv", "summary.csv", "transfer.csv", "replicate_1/predictions_ns.csv",
                        "replicate_0/windows.csv"})
    EXPECT_EQ(testutil::read_text(d1 / f), testutil::read_text(d2 / f)) << f;
  EXPECT_NO_THROW(a.pooled.at("NS", kPartialMissing));
  EXPECT_NO_THROW(a.pooled.at("S", kOverall));
}

TEST(Sim, ApplicationScenario) {
  AppConfig c;
  c.grid_size = 12;
  c.reference_days = 12;
  c.monitors = 20;
  c.num_eofs = 3;
  c.folds = 2;
  c.niter = 150;
  c.window_size = 4.0;
  const auto data = simulate_application(c, 1);
  EXPECT_EQ(data.reference.n(), 144u);
  EXPECT_EQ(data.monitors.records.size(), 20u * 5u);
  const auto cv = cross_validate(c, data, 1);
  EXPECT_EQ(cv.folds_completed, 2);
  EXPECT_EQ(cv.table.at("NS", kOverall).n, 100u);
}
