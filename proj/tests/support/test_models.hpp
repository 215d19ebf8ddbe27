#pragma once

// Small hand-built models shared by the test suites.

#include "hhshock/models.hpp"

namespace testmodels {

using namespace hhshock;

inline Mat m2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

// Constant-coefficient 2x2 system in d = 2 with nonzero C0, C1, cross diffusion and symmetric fluxes.
inline ModelDef coupled_c_model() {
  std::vector<PolynomialFlux> flux = {{Vec::Zero(2), m2(0.3, 0.2, 0.2, -0.4), {}},
                                      {Vec::Zero(2), m2(0.1, 0.0, 0.0, 0.2), {}}};
  std::vector<std::vector<Mat>> b = {{m2(1.5, 0.1, 0.1, 1.0), m2(0.1, 0.05, 0.05, 0.0)},
                                     {m2(0.1, 0.05, 0.05, 0.0), m2(1.0, 0.0, 0.0, 1.2)}};
  std::vector<Mat> c0 = {m2(0.2, 0.0, 0.0, 0.1), m2(0.05, 0.0, 0.0, 0.02)};
  std::vector<Mat> c1 = {m2(0.1, 0.05, 0.05, 0.0), m2(0.0, 0.03, 0.03, 0.04)};
  return jinxin_generic(2, 2, m2(1.0, 0.0, 0.0, 2.0), b, c0, c1, flux);
}

// Scalar model with a Jordan-block flux in n = 2: A^1 = [[0,1],[0,0]].
inline ModelDef jordan_model() {
  std::vector<PolynomialFlux> flux = {{Vec::Zero(2), m2(0, 1, 0, 0), {}}};
  std::vector<std::vector<Mat>> b = {{Mat::Identity(2, 2)}};
  std::vector<Mat> z = {Mat::Zero(2, 2)};
  return constant_coefficient_model("jordan", 2, 1, Mat::Identity(2, 2), b, z, z, flux);
}

// Two decoupled Burgers-type components with fluxes u1^2/2 and (u2^2/2) * s in x_1 and
// transverse speeds in x_2, so that eigenvalue crossings can be placed at will.
inline ModelDef diagonal_crossing_model() {
  PolynomialFlux f1{Vec::Zero(2), Mat::Zero(2, 2), {m2(1, 0, 0, 0), m2(0, 0, 0, 0)}};
  PolynomialFlux f2{Vec::Zero(2), Mat::Zero(2, 2), {m2(0, 0, 0, 0), m2(0, 0, 0, 1)}};
  std::vector<std::vector<Mat>> b = {{Mat::Identity(2, 2), Mat::Zero(2, 2)}, {Mat::Zero(2, 2), Mat::Identity(2, 2)}};
  std::vector<Mat> z(2, Mat::Zero(2, 2));
  return constant_coefficient_model("crossing", 2, 2, Mat::Identity(2, 2), b, z, z, {f1, f2});
}

// Burgers component driving a linear second component: f^1 = (u1^2/2, s u2 + c (u1^2 - 1)/2).
// Endstates (+-1, 0) give a Lax shock whose u_- has a two-dimensional unstable manifold.
inline ModelDef forced_burgers_model(double s = 2.0, double c = 0.5) {
  PolynomialFlux f1{Vec::Zero(2), m2(0, 0, 0, s), {m2(1, 0, 0, 0), m2(c, 0, 0, 0)}};
  f1.constant(1) = -0.5 * c;
  std::vector<std::vector<Mat>> b = {{Mat::Identity(2, 2)}};
  std::vector<Mat> z = {Mat::Zero(2, 2)};
  return constant_coefficient_model("forced_burgers", 2, 1, Mat::Identity(2, 2), b, z, z, {f1});
}

// Scalar model in d = 2 whose diffusion vanishes in the x_1 direction.
inline ModelDef degenerate_b11_model() {
  std::vector<PolynomialFlux> flux = {{Vec::Zero(1), Mat::Zero(1, 1), {Mat::Identity(1, 1)}},
                                      {Vec::Zero(1), Mat::Zero(1, 1), {}}};
  std::vector<std::vector<Mat>> b = {{Mat::Zero(1, 1), Mat::Zero(1, 1)}, {Mat::Zero(1, 1), Mat::Identity(1, 1)}};
  std::vector<Mat> z(2, Mat::Zero(1, 1));
  return constant_coefficient_model("degenerate_b11", 1, 2, Mat::Identity(1, 1), b, z, z, flux);
}

// n = 2 model with zero flux and a Jordan-block diffusion: the small-frequency restriction is -B.
inline ModelDef jordan_diffusion_model() {
  std::vector<PolynomialFlux> flux = {{Vec::Zero(2), Mat::Zero(2, 2), {}}};
  std::vector<std::vector<Mat>> b = {{m2(1, 1, 0, 1)}};
  std::vector<Mat> z = {Mat::Zero(2, 2)};
  return constant_coefficient_model("jordan_diffusion", 2, 1, Mat::Identity(2, 2), b, z, z, flux);
}

}  // namespace testmodels
