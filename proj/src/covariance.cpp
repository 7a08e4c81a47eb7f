#include "nsgp/covariance.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "nsgp/bessel.hpp"
#include "nsgp/error.hpp"

namespace nsgp {
namespace {

enum class Order { Half, ThreeHalves, FiveHalves, General };

// Matérn correlation with the order-dependent constants hoisted.
class MaternCorrelation {
 public:
  explicit MaternCorrelation(double nu) : nu_(nu) {
    if (!(nu > 0.0) || !std::isfinite(nu))
      throw Error(ErrorCode::DomainError, "Matérn smoothness must be positive");
    if (nu == 0.5) order_ = Order::Half;
    else if (nu == 1.5) order_ = Order::ThreeHalves;
    else if (nu == 2.5) order_ = Order::FiveHalves;
    log_norm_ = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu);
  }

  double operator()(double x) const {
    if (x <= 0.0) return 1.0;
    switch (order_) {
      case Order::Half: return std::exp(-x);
      case Order::ThreeHalves: return (1.0 + x) * std::exp(-x);
      case Order::FiveHalves: return (1.0 + x + x * x / 3.0) * std::exp(-x);
      case Order::General: break;
    }
    if (x < 1e-30) {
      // x^nu K_nu(x) -> 2^{nu-1} Gamma(nu); the first correction only
      // matters for nu < 1.
      if (nu_ >= 1.0) return 1.0;
      return 1.0 - std::tgamma(1.0 - nu_) / std::tgamma(1.0 + nu_) * std::pow(0.5 * x, 2.0 * nu_);
    }
    if (x > 745.0) return 0.0;
    const double v = std::exp(log_norm_ + nu_ * std::log(x) - x) * bessel_k_scaled(nu_, x);
    return std::min(v, 1.0);
  }

  double nu() const { return nu_; }

 private:
  double nu_;
  Order order_ = Order::General;
  double log_norm_ = 0.0;
};

inline double ns_entry(double d2, double rho_i, double s2_i, double rho_j, double s2_j,
                       const MaternCorrelation& corr) {
  const double h = 0.5 * (rho_i * rho_i + rho_j * rho_j);
  const double pref = std::sqrt(s2_i * s2_j) * (rho_i * rho_j) / h;
  const double x = 2.0 * std::sqrt(corr.nu() * d2 / h);
  return pref * corr(x);
}

void check_params(const SiteParams& p) {
  if (!(p.rho > 0.0) || !(p.sigma2 > 0.0) || !std::isfinite(p.rho) || !std::isfinite(p.sigma2))
    throw Error(ErrorCode::DomainError, "range and variance must be positive and finite");
}

void check_params(const LocalParams& params, std::size_t n) {
  if (params.size() != n || static_cast<std::size_t>(params.sigma2.size()) != n)
    throw Error(ErrorCode::GeometryMismatch, "parameters not aligned with locations");
  for (std::size_t i = 0; i < n; ++i) check_params(params.at(i));
}

void check_distinct(std::span<const Location> locs) {
  std::vector<Location> sorted(locs.begin(), locs.end());
  std::sort(sorted.begin(), sorted.end(), location_less);
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw Error(ErrorCode::DuplicateLocations, "covariance locations must be distinct");
}

int thread_count(int threads) { return threads > 0 ? threads : omp_get_max_threads(); }

}  // namespace

LocalParams LocalParams::constant(std::size_t n, double rho, double sigma2) {
  LocalParams p;
  p.rho = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), rho);
  p.sigma2 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), sigma2);
  return p;
}

double matern_correlation(double x, double nu) { return MaternCorrelation(nu)(x); }

double matern_stationary(double d, double nu, double rho, double sigma2) {
  check_params({rho, sigma2});
  if (!(d >= 0.0)) throw Error(ErrorCode::DomainError, "distance must be nonnegative");
  return sigma2 * MaternCorrelation(nu)(2.0 * std::sqrt(nu) * d / rho);
}

double ns_cov_sq(double d2, const SiteParams& pi, const SiteParams& pj, double nu) {
  check_params(pi);
  check_params(pj);
  return ns_entry(d2, pi.rho, pi.sigma2, pj.rho, pj.sigma2, MaternCorrelation(nu));
}

double ns_cov(const Location& si, const Location& sj, const SiteParams& pi, const SiteParams& pj,
              double nu) {
  return ns_cov_sq(squared_distance(si, sj), pi, pj, nu);
}

Eigen::MatrixXd squared_distances(std::span<const Location> locs) {
  const auto n = static_cast<Eigen::Index>(locs.size());
  Eigen::MatrixXd d2(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    d2(j, j) = 0.0;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      d2(i, j) = squared_distance(locs[static_cast<std::size_t>(i)],
                                  locs[static_cast<std::size_t>(j)]);
      d2(j, i) = d2(i, j);
    }
  }
  return d2;
}

Eigen::MatrixXd build_cov_matrix(const Eigen::MatrixXd& sqdist, const LocalParams& params,
                                 const KernelConfig& config, int threads) {
  const auto n = sqdist.rows();
  check_params(params, static_cast<std::size_t>(n));
  if (!(config.nugget >= 0.0)) throw Error(ErrorCode::DomainError, "nugget must be >= 0");
  const MaternCorrelation corr(config.nu);
  const double* rho = params.rho.data();
  const double* s2 = params.sigma2.data();
  Eigen::MatrixXd c(n, n);
  // Column j holds rows i > j; column-major keeps the inner loop contiguous.
#pragma omp parallel for schedule(dynamic, 16) num_threads(thread_count(threads))
  for (Eigen::Index j = 0; j < n; ++j) {
    c(j, j) = s2[j] + config.nugget;
    for (Eigen::Index i = j + 1; i < n; ++i)
      c(i, j) = ns_entry(sqdist(i, j), rho[i], s2[i], rho[j], s2[j], corr);
  }
  c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
  return c;
}

Eigen::MatrixXd build_cov_matrix(std::span<const Location> locs, const LocalParams& params,
                                 const KernelConfig& config, int threads) {
  check_distinct(locs);
  return build_cov_matrix(squared_distances(locs), params, config, threads);
}

Eigen::MatrixXd build_cross_cov(std::span<const Location> rows, const LocalParams& row_params,
                                std::span<const Location> cols, const LocalParams& col_params,
                                double nu, int threads) {
  check_params(row_params, rows.size());
  check_params(col_params, cols.size());
  const MaternCorrelation corr(nu);
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = static_cast<Eigen::Index>(cols.size());
  Eigen::MatrixXd c(m, n);
#pragma omp parallel for schedule(static) num_threads(thread_count(threads))
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& sj = cols[static_cast<std::size_t>(j)];
    for (Eigen::Index i = 0; i < m; ++i) {
      c(i, j) = ns_entry(squared_distance(rows[static_cast<std::size_t>(i)], sj),
                         row_params.rho(i), row_params.sigma2(i), col_params.rho(j),
                         col_params.sigma2(j), corr);
    }
  }
  return c;
}

double CholeskyFactor::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

CholeskyFactor chol_with_jitter(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw Error(ErrorCode::DomainError, "matrix must be square");
  if (!a.allFinite()) throw Error(ErrorCode::NotPositiveDefinite, "matrix has non-finite entries");
  const double mean_diag = a.diagonal().mean();
  if (!(mean_diag > 0.0))
    throw Error(ErrorCode::NotPositiveDefinite, "matrix diagonal is not positive");
  const double max_jitter = 1e-4 * mean_diag;
  // Pivots below this are treated as a failed factorisation.
  const double pivot_floor = 1e-14 * mean_diag;

  CholeskyFactor out;
  double jitter = 0.0;
  Eigen::MatrixXd work;
  while (true) {
    work = a;
    if (jitter > 0.0) work.diagonal().array() += jitter;
    out.llt.compute(work);
    if (out.llt.info() == Eigen::Success) {
      const auto diag = out.llt.matrixLLT().diagonal();
      if ((diag.array() * diag.array()).minCoeff() > pivot_floor) {
        out.jitter = jitter;
        return out;
      }
    }
    jitter = jitter == 0.0 ? 1e-10 * mean_diag : jitter * 10.0;
    if (jitter > max_jitter * (1.0 + 1e-12)) break;
  }
  std::ostringstream msg;
  msg << "Cholesky failed with jitter up to " << max_jitter;
  throw Error(ErrorCode::NotPositiveDefinite, msg.str());
}

namespace reference {

Eigen::MatrixXd build_cov_matrix(std::span<const Location> locs, const LocalParams& params,
                                 const KernelConfig& config) {
  check_distinct(locs);
  const auto n = static_cast<Eigen::Index>(locs.size());
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      c(i, j) = i == j ? params.sigma2(i) + config.nugget
                       : ns_cov(locs[ui], locs[uj], params.at(ui), params.at(uj), config.nu);
    }
  }
  return c;
}

Eigen::MatrixXd build_cross_cov(std::span<const Location> rows, const LocalParams& row_params,
                                std::span<const Location> cols, const LocalParams& col_params,
                                double nu) {
  Eigen::MatrixXd c(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          ns_cov(rows[i], cols[j], row_params.at(i), col_params.at(j), nu);
  return c;
}

}  // namespace reference

}  // namespace nsgp
