#pragma once

#include "hhshock/core.hpp"

#include <boost/numeric/odeint.hpp>

namespace hhshock::ode {

namespace odeint = boost::numeric::odeint;
using State = std::vector<double>;
using Rhs = std::function<void(const State&, State&, double)>;

struct Tolerances {
  double rtol = 1e-11;
  double atol = 1e-13;
  double h0 = 1e-3;
  std::size_t max_steps = 2000000;
};

// Adaptive Dormand-Prince integration from x0 to x1 (either direction). Returns the step count.
inline std::size_t integrate(const Rhs& rhs, State& y, double x0, double x1, const Tolerances& tol = {}) {
  if (x0 == x1) return 0;
  std::size_t steps = 0;
  auto stepper = odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(tol.atol, tol.rtol);
  double h0 = x1 > x0 ? tol.h0 : -tol.h0;
  odeint::integrate_adaptive(stepper, rhs, y, x0, x1, h0, [&](const State& s, double) {
    if (++steps > tol.max_steps) fail(ErrorKind::ConvergenceError, "ODE step budget exhausted");
    for (double v : s)
      if (!std::isfinite(v)) fail(ErrorKind::IntegrationBlowup, "ODE solution became non-finite");
  });
  return steps;
}

// Dense-output integration reporting the state at each of the (monotone) sample times.
inline void integrate_at(const Rhs& rhs, State y, const std::vector<double>& times,
                         const std::function<void(const State&, double)>& observer, const Tolerances& tol = {}) {
  if (times.empty()) return;
  auto stepper = odeint::make_dense_output(tol.atol, tol.rtol, odeint::runge_kutta_dopri5<State>());
  double h0 = times.size() > 1 && times.back() < times.front() ? -tol.h0 : tol.h0;
  odeint::integrate_times(stepper, rhs, y, times.begin(), times.end(), h0, observer);
}

// Steps a dense-output Dormand-Prince integrator forward from x0 and hands every accepted step to
// visit(t0, t1, state_at), where state_at(t) evaluates the interpolant on [t0, t1]. Marching stops
// when visit returns false. The step sequence is deterministic, so two marches from the same data
// see identical trajectories.
template <class Visit>
void march(const Rhs& rhs, const State& y0, double x0, const Tolerances& tol, Visit&& visit) {
  auto stepper = odeint::make_dense_output(tol.atol, tol.rtol, odeint::runge_kutta_dopri5<State>());
  stepper.initialize(y0, x0, tol.h0);
  State tmp(y0.size());
  for (std::size_t steps = 0;; ++steps) {
    if (steps > tol.max_steps) fail(ErrorKind::ConvergenceError, "ODE step budget exhausted");
    auto [t0, t1] = stepper.do_step(rhs);
    for (double v : stepper.current_state())
      if (!std::isfinite(v)) fail(ErrorKind::IntegrationBlowup, "ODE solution became non-finite");
    auto state_at = [&](double t) -> const State& {
      stepper.calc_state(t, tmp);
      return tmp;
    };
    if (!visit(t0, t1, state_at)) return;
  }
}

}  // namespace hhshock::ode
