// Classifies constant states of the scalar damped-wave Burgers model and prints the
// leading dispersion root along x_1. Usage: state_classification [a]

#include "hhshock/dissipativity.hpp"
#include "hhshock/models.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace hhshock;
  const double a = argc > 1 ? std::atof(argv[1]) : 1.0;
  auto m = burgers_dw(a, 2);
  std::printf("burgers_dw a=%g: stable iff a u^2 < 1\n", a);
  for (double u : {0.0, 0.5, 0.9, 1.1, 2.0}) {
    auto st = check_state_stability(m, Vec::Constant(1, u));
    Vec xi(2);
    xi << 10, 0;
    cplx top = dispersion_roots(m, Vec::Constant(1, u), xi).roots.front();
    std::printf("  u=%-4g %-8s margin %+.3e  top root at xi=(10,0): %+.6f%+.6fi", u,
                st.stable ? "stable" : "unstable", st.min_margin, top.real(), top.imag());
    for (const auto& f : st.failing) std::printf(" %s", f.c_str());
    std::printf("\n");
  }
}
