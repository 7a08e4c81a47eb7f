#pragma once

#include <Eigen/Dense>
#include <span>

#include "nsgp/field_store.hpp"

namespace nsgp {

// Range and marginal variance at one location.
struct SiteParams {
  double rho = 1.0;
  double sigma2 = 1.0;
};

// Per-location parameters aligned with a list of locations.
struct LocalParams {
  Eigen::VectorXd rho;
  Eigen::VectorXd sigma2;

  std::size_t size() const { return static_cast<std::size_t>(rho.size()); }
  SiteParams at(std::size_t i) const {
    return {rho(static_cast<Eigen::Index>(i)), sigma2(static_cast<Eigen::Index>(i))};
  }
  static LocalParams constant(std::size_t n, double rho, double sigma2);
};

struct KernelConfig {
  double nu = 1.5;
  double nugget = 0.0;  // added to the diagonal
};

// Matérn correlation 2^{1-nu}/Gamma(nu) x^nu K_nu(x); equals 1 at x = 0.
// Half-integer orders 1/2, 3/2, 5/2 use their closed forms.
double matern_correlation(double x, double nu);

// sigma2 * matern_correlation(2 sqrt(nu) d / rho, nu).
double matern_stationary(double d, double nu, double rho, double sigma2);

// Nonstationary Matérn with isotropic kernel matrices Sigma_i = rho_i^2 I_2:
//   C = s_i s_j * rho_i rho_j / h * M(2 sqrt(nu Q)),   h = (rho_i^2 + rho_j^2) / 2,
//   Q = |s_i - s_j|^2 / h.
double ns_cov(const Location& si, const Location& sj, const SiteParams& pi, const SiteParams& pj,
              double nu);

// Same kernel from a precomputed squared distance.
double ns_cov_sq(double d2, const SiteParams& pi, const SiteParams& pj, double nu);

Eigen::MatrixXd squared_distances(std::span<const Location> locs);

// Symmetric n x n covariance, diagonal sigma2_i + nugget. Rows are assembled
// in parallel with `threads` OpenMP threads (0 = runtime default).
// Throws DuplicateLocations.
Eigen::MatrixXd build_cov_matrix(std::span<const Location> locs, const LocalParams& params,
                                 const KernelConfig& config, int threads = 0);

// Same, from squared distances (locations assumed distinct).
Eigen::MatrixXd build_cov_matrix(const Eigen::MatrixXd& sqdist, const LocalParams& params,
                                 const KernelConfig& config, int threads = 0);

// m x n cross-covariance between `rows` and `cols` (no nugget).
Eigen::MatrixXd build_cross_cov(std::span<const Location> rows, const LocalParams& row_params,
                                std::span<const Location> cols, const LocalParams& col_params,
                                double nu, int threads = 0);

struct CholeskyFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  Eigen::MatrixXd lower() const { return llt.matrixL(); }
  double log_det() const;
};

// Factors A + jitter I with jitter escalating 0, 1e-10 mean(diag), x10 per
// retry up to 1e-4 mean(diag). Throws NotPositiveDefinite beyond that.
CholeskyFactor chol_with_jitter(const Eigen::MatrixXd& a);

namespace reference {

// Entry-by-entry serial assembly through ns_cov.
Eigen::MatrixXd build_cov_matrix(std::span<const Location> locs, const LocalParams& params,
                                 const KernelConfig& config);
Eigen::MatrixXd build_cross_cov(std::span<const Location> rows, const LocalParams& row_params,
                                std::span<const Location> cols, const LocalParams& col_params,
                                double nu);

}  // namespace reference

}  // namespace nsgp
