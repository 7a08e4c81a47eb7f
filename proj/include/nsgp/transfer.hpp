#pragma once

#include <Eigen/Dense>
#include <span>

#include "nsgp/covariance.hpp"
#include "nsgp/window_mle.hpp"

namespace nsgp {

// Log-linear link from reference-field estimates to model parameters:
//   log rho_i    = a1 + b1 log rho_hat_i
//   log sigma2_i = a2 + b2 log sigma2_hat_i
struct TransferCoefficients {
  double a1 = 0.0;
  double b1 = 1.0;
  double a2 = 0.0;
  double b2 = 1.0;

  friend bool operator==(const TransferCoefficients&, const TransferCoefficients&) = default;
};

// Exponents beyond this magnitude are clamped.
inline constexpr double kLinkClamp = 50.0;

// log rho_hat and log sigma2_hat at each location, looked up once.
struct ReferenceLogs {
  Eigen::VectorXd log_rho;
  Eigen::VectorXd log_sigma2;

  std::size_t size() const { return static_cast<std::size_t>(log_rho.size()); }
};

ReferenceLogs reference_logs(const WindowEstimates& estimates, const WindowGrid& grid,
                             std::span<const Location> locs);

// Applies the link. Returns false when any exponent had to be clamped.
bool apply_link(const TransferCoefficients& coef, const ReferenceLogs& ref, LocalParams& out);

// Link applied to the window estimates at each location; clamping is logged
// as a warning.
LocalParams resolve_params(const TransferCoefficients& coef, const WindowEstimates& estimates,
                           const WindowGrid& grid, std::span<const Location> locs);

bool is_stationary_collapse(const TransferCoefficients& coef, double tolerance = 1e-8);

}  // namespace nsgp
