#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

#include "nsgp/bessel.hpp"
#include "test_util.hpp"

using namespace nsgp;
using Big = boost::multiprecision::cpp_bin_float_50;

namespace {

double oracle(double nu, double x) {
  return static_cast<double>(boost::math::cyl_bessel_k(Big(nu), Big(x)));
}

}  // namespace

TEST(Bessel, MatchesHighPrecisionOracle) {
  const double nus[] = {0.0, 0.1, 0.25, 0.5, 0.73, 1.0, 1.2, 1.5, 2.0, 2.37, 2.5, 2.99, 3.0};
  const double xs[] = {1e-6, 1e-3, 0.05, 0.3, 0.9, 1.5, 1.99, 2.0, 2.01, 3.7, 8.0, 25.0, 120.0, 600.0};
  for (double nu : nus) {
    for (double x : xs) {
      const double ref = oracle(nu, x);
      EXPECT_NEAR(bessel_k(nu, x), ref, 1e-12 * ref) << "nu=" << nu << " x=" << x;
      const double scaled = static_cast<double>(boost::math::cyl_bessel_k(Big(nu), Big(x)) * exp(Big(x)));
      EXPECT_NEAR(bessel_k_scaled(nu, x), scaled, 1e-12 * scaled) << "nu=" << nu << " x=" << x;
    }
  }
}

TEST(Bessel, IntegralRepresentation) {
  // K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
  boost::math::quadrature::exp_sinh<double> integrator;
  for (double nu : {0.3, 1.5, 2.8}) {
    for (double x : {0.4, 2.5, 9.0}) {
      const double v = integrator.integrate(
          [&](double t) {
            // cosh(t) overflows long before the integrand matters
            const double c = std::cosh(t);
            if (!std::isfinite(c)) return 0.0;
            return 0.5 * (std::exp(-x * c + nu * t) + std::exp(-x * c - nu * t));
          });
      EXPECT_NEAR(bessel_k(nu, x), v, 1e-10 * v);
    }
  }
}

TEST(Bessel, ClosedFormHalf) {
  for (double x : {0.1, 1.0, 7.0})
    EXPECT_NEAR(bessel_k(0.5, x), std::sqrt(M_PI / (2 * x)) * std::exp(-x), 1e-14);
}

TEST(Bessel, Domain) {
  EXPECT_NSGP_ERROR(bessel_k(-0.1, 1.0), ErrorCode::DomainError);
  EXPECT_NSGP_ERROR(bessel_k(1.0, 0.0), ErrorCode::DomainError);
  EXPECT_EQ(bessel_k(1.0, INFINITY), 0.0);
  EXPECT_EQ(bessel_k(1.0, 800.0), 0.0);
  EXPECT_GT(bessel_k_scaled(1.0, 800.0), 0.0);
}
