// Solves a Burgers shock profile and counts Evans-function zeros inside one semi-annulus
// of the lambda plane (d = 1). Usage: profile_winding [a] [u]

#include "hhshock/evans.hpp"
#include "hhshock/models.hpp"
#include "hhshock/profile.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace hhshock;
  const double a = argc > 1 ? std::atof(argv[1]) : 0.2;
  const double u = argc > 2 ? std::atof(argv[2]) : 0.3;
  auto m = burgers_dw(a, 1);
  ProfileOptions po;
  po.L = 60;
  po.h = 0.05;
  try {
    auto p = solve_profile(m, Vec::Constant(1, u), Vec::Constant(1, -u), po);
    std::printf("profile on [-%g, %g], %zu nodes, method %s, tail rate %.4f\n", p.L, p.L, p.size(), p.method.c_str(),
                p.delta);
    EvansOptions eo;
    eo.c = 0.05;
    EvansFunction ev(m, p, eo);
    ContourSpec cs;
    cs.eta = Vec::Zero(0);
    cs.rho_min = 0.1;
    cs.rho_max = 2.0;
    cs.points = 64;
    auto r = winding_number(ev, semi_annulus(cs, eo.c));
    std::printf("winding %d over %zu samples (%d refinements), |D| in [%.3e, %.3e]\n", r.winding, r.points.size(),
                r.refinements, r.min_abs, r.max_abs);
  } catch (const Error& e) {
    std::printf("%s\n", e.what());
    return 1;
  }
}
