#pragma once

namespace nsgp {

// Modified Bessel function of the second kind, K_nu(x), for nu >= 0, x > 0.
// Temme's series below x = 2, Steed's continued fraction above, then upward
// recurrence in the order. Relative accuracy ~1e-14 on nu in [0, 3].
double bessel_k(double nu, double x);

// exp(x) * K_nu(x); stays representable where K_nu underflows.
double bessel_k_scaled(double nu, double x);

}  // namespace nsgp
