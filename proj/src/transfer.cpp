#include "nsgp/transfer.hpp"

#include <algorithm>
#include <cmath>

#include "nsgp/log.hpp"

namespace nsgp {
namespace {

double clamped_exp(double e, bool& clamped) {
  if (e > kLinkClamp) {
    clamped = true;
    e = kLinkClamp;
  } else if (e < -kLinkClamp) {
    clamped = true;
    e = -kLinkClamp;
  }
  return std::exp(e);
}

}  // namespace

ReferenceLogs reference_logs(const WindowEstimates& estimates, const WindowGrid& grid,
                             std::span<const Location> locs) {
  ReferenceLogs ref;
  const auto n = static_cast<Eigen::Index>(locs.size());
  ref.log_rho.resize(n);
  ref.log_sigma2.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto p = estimate_at(estimates, grid, locs[static_cast<std::size_t>(i)]);
    ref.log_rho(i) = std::log(p.rho);
    ref.log_sigma2(i) = std::log(p.sigma2);
  }
  return ref;
}

bool apply_link(const TransferCoefficients& coef, const ReferenceLogs& ref, LocalParams& out) {
  const auto n = static_cast<Eigen::Index>(ref.size());
  out.rho.resize(n);
  out.sigma2.resize(n);
  bool clamped = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.rho(i) = clamped_exp(coef.a1 + coef.b1 * ref.log_rho(i), clamped);
    out.sigma2(i) = clamped_exp(coef.a2 + coef.b2 * ref.log_sigma2(i), clamped);
  }
  return !clamped;
}

LocalParams resolve_params(const TransferCoefficients& coef, const WindowEstimates& estimates,
                           const WindowGrid& grid, std::span<const Location> locs) {
  LocalParams out;
  if (!apply_link(coef, reference_logs(estimates, grid, locs), out))
    log::warn("transfer link exponent clamped to +/-50");
  return out;
}

bool is_stationary_collapse(const TransferCoefficients& coef, double tolerance) {
  return std::abs(coef.b1) < tolerance && std::abs(coef.b2) < tolerance;
}

}  // namespace nsgp
