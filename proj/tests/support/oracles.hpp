#pragma once

// Closed-form reference values used as independent oracles by the test suites.

#include <array>
#include <complex>
#include <algorithm>
#include <cmath>

namespace oracle {

using cplx = std::complex<double>;

// Roots of a x^2 + b x + c = 0 with complex coefficients.
inline std::array<cplx, 2> quadratic_roots(cplx a, cplx b, cplx c) {
  cplx disc = std::sqrt(b * b - 4.0 * a * c);
  return {(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)};
}

// Ordering used by the library: real part descending, then imaginary part descending.
// Scalar damped-wave Burgers symbol a l^2 + l + |xi|^2 + i u xi_1.
inline std::array<cplx, 2> burgers_dispersion(double a, double u, double xi1, double eta2) {
  return quadratic_roots(a, 1.0, cplx(xi1 * xi1 + eta2, u * xi1));
}

inline std::array<cplx, 2> sort_by_real(std::array<cplx, 2> r) {
  if (r[0].real() < r[1].real() || (r[0].real() == r[1].real() && r[0].imag() < r[1].imag())) std::swap(r[0], r[1]);
  return r;
}

// Largest distance from each expected value to its nearest computed value.
template <class Computed, class Expected>
double nearest_match_error(const Computed& computed, const Expected& expected) {
  double worst = 0;
  for (const auto& e : expected) {
    double best = 1e300;
    for (const auto& c : computed) best = std::min(best, std::abs(cplx(c) - cplx(e)));
    worst = std::max(worst, best);
  }
  return worst;
}

}  // namespace oracle
