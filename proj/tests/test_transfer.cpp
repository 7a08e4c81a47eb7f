#include <gtest/gtest.h>

#include "nsgp/transfer.hpp"
#include "test_util.hpp"

using namespace nsgp;

namespace {

struct TwoWindows {
  WindowGrid grid;
  WindowEstimates est;
  TwoWindows() {
    grid.windows = {{0, 2, 0, 2}, {2, 4, 0, 2}};
    grid.window_size = 2;
    WindowFit a, b;
    a.rho_hat = 15.0;
    a.sigma2_hat = 2.0;
    a.converged = true;
    b.rho_hat = 5.0;
    b.sigma2_hat = 7.0;
    b.converged = true;
    est.fits = {a, b};
  }
};

}  // namespace

TEST(Transfer, IdentityAndCollapse) {
  TwoWindows w;
  const std::vector<Location> locs{{1, 1}, {3, 1}, {0.5, 0.2}};
  const auto id = resolve_params({0, 1, 0, 1}, w.est, w.grid, locs);
  EXPECT_NEAR(id.rho(0), 15.0, 1e-12);
  EXPECT_NEAR(id.sigma2(1), 7.0, 1e-12);
  EXPECT_EQ(id.rho(0), id.rho(2));

  const auto st = resolve_params({0.3, 0, -0.2, 0}, w.est, w.grid, locs);
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(st.rho(i), std::exp(0.3));
    EXPECT_DOUBLE_EQ(st.sigma2(i), std::exp(-0.2));
  }
  const auto shifted = resolve_params({0.5, 1, 0.5, 1}, w.est, w.grid, locs);
  EXPECT_NEAR(shifted.rho(0), 24.730819, 1e-6);
  // b1 > 0 keeps the ordering of the window ranges.
  const auto pos = resolve_params({-1.0, 0.4, 0.0, 1.0}, w.est, w.grid, locs);
  EXPECT_GT(pos.rho(0), pos.rho(1));
}

TEST(Transfer, CollapseBuildsStationaryMatrix) {
  TwoWindows w;
  const std::vector<Location> locs{{1, 1}, {3, 1}, {0.5, 0.2}, {3.5, 1.7}};
  const auto p = resolve_params({1.1, 0, 0.4, 0}, w.est, w.grid, locs);
  const auto ns = build_cov_matrix(locs, p, KernelConfig{1.5, 0.0});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      EXPECT_NEAR(ns(i, j), matern_stationary(distance(locs[i], locs[j]), 1.5, std::exp(1.1), std::exp(0.4)), 1e-12);
}

TEST(Transfer, ClampAndFlag) {
  TwoWindows w;
  const std::vector<Location> locs{{1, 1}};
  const auto ref = reference_logs(w.est, w.grid, locs);
  LocalParams out;
  EXPECT_TRUE(apply_link({0, 1, 0, 1}, ref, out));
  EXPECT_FALSE(apply_link({100, 1, 0, 1}, ref, out));
  EXPECT_DOUBLE_EQ(out.rho(0), std::exp(kLinkClamp));

  EXPECT_TRUE(is_stationary_collapse({0.4, 0, -1, 0}));
  EXPECT_FALSE(is_stationary_collapse({0, 1, 0, 1}));
  EXPECT_TRUE(is_stationary_collapse({0, 1e-12, 0, 0}));
}
