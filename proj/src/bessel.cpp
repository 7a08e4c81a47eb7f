#include "nsgp/bessel.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "nsgp/error.hpp"

namespace nsgp {
namespace {

constexpr double kEps = 1e-16;
constexpr int kMaxIter = 10000;
constexpr double kSeriesCutoff = 2.0;

// Temme's gamma combinations for |mu| <= 1/2:
//   gam1 = (1/G(1-mu) - 1/G(1+mu)) / (2 mu),  gam2 = (1/G(1-mu) + 1/G(1+mu)) / 2.
struct TemmeGammas {
  double gam1, gam2, gampl, gammi;
};

TemmeGammas temme_gammas(double mu) {
  TemmeGammas g{};
  g.gampl = 1.0 / std::tgamma(1.0 + mu);
  g.gammi = 1.0 / std::tgamma(1.0 - mu);
  g.gam2 = 0.5 * (g.gammi + g.gampl);
  if (std::abs(mu) < 1e-2) {
    // Even part of the Taylor series of 1/Gamma(1+x).
    const double m2 = mu * mu;
    g.gam1 = -0.5772156649015329 +
             m2 * (0.0420026350340952 +
                   m2 * (0.0421977345555443 + m2 * (-0.0072189432466630 + m2 * 0.0002152416741149)));
  } else {
    g.gam1 = (g.gammi - g.gampl) / (2.0 * mu);
  }
  return g;
}

// K_mu(x) and K_{mu+1}(x), both multiplied by exp(x) when `scaled`.
void k_pair(double mu, double x, bool scaled, double& kmu, double& kmu1) {
  const double mu2 = mu * mu;
  if (x < kSeriesCutoff) {
    const auto g = temme_gammas(mu);
    const double x2 = 0.5 * x;
    const double pimu = std::numbers::pi * mu;
    const double fact = std::abs(pimu) < kEps ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(x2);
    double e = mu * d;
    const double fact2 = std::abs(e) < kEps ? 1.0 : std::sinh(e) / e;
    double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / g.gampl;
    double q = 0.5 / (e * g.gammi);
    double c = 1.0;
    d = x2 * x2;
    double sum1 = p;
    for (int i = 1; i <= kMaxIter; ++i) {
      const double di = i;
      ff = (di * ff + p + q) / (di * di - mu2);
      c *= d / di;
      p /= di - mu;
      q /= di + mu;
      const double del = c * ff;
      sum += del;
      sum1 += c * (p - di * ff);
      if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    kmu = sum;
    kmu1 = sum1 * 2.0 / x;
    if (scaled) {
      const double ex = std::exp(x);
      kmu *= ex;
      kmu1 *= ex;
    }
    return;
  }
  // Steed's algorithm for CF2 with Temme's normalisation.
  double b = 2.0 * (1.0 + x);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 2; i <= kMaxIter; ++i) {
    a -= 2.0 * (i - 1);
    c = -a * c / i;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < kEps) break;
  }
  h = a1 * h;
  kmu = std::sqrt(std::numbers::pi / (2.0 * x)) / s;
  if (!scaled) kmu *= std::exp(-x);
  kmu1 = kmu * (mu + x + 0.5 - h) / x;
}

double evaluate(double nu, double x, bool scaled) {
  if (!(nu >= 0.0) || !std::isfinite(nu))
    throw Error(ErrorCode::DomainError, "bessel_k: order must be finite and >= 0");
  if (!(x > 0.0)) throw Error(ErrorCode::DomainError, "bessel_k: argument must be > 0");
  if (std::isinf(x)) return 0.0;
  const int nl = static_cast<int>(nu + 0.5);
  const double mu = nu - nl;
  double kmu = 0.0;
  double kmu1 = 0.0;
  k_pair(mu, x, scaled, kmu, kmu1);
  for (int i = 1; i <= nl; ++i) {
    const double next = (mu + i) * (2.0 / x) * kmu1 + kmu;
    kmu = kmu1;
    kmu1 = next;
  }
  return kmu;
}

}  // namespace

double bessel_k(double nu, double x) { return evaluate(nu, x, false); }
double bessel_k_scaled(double nu, double x) { return evaluate(nu, x, true); }

}  // namespace nsgp
