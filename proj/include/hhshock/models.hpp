#pragma once

#include "hhshock/model.hpp"

namespace hhshock {

inline std::function<Mat(const Vec&, int)> constant_family(std::vector<Mat> mats) {
  return [mats = std::move(mats)](const Vec&, int j) { return mats.at(j); };
}

// Constant-coefficient model with polynomial fluxes and g(u) = u.
inline ModelDef constant_coefficient_model(std::string name, int n, int d, const Mat& acal,
                                           const std::vector<std::vector<Mat>>& b, const std::vector<Mat>& c0,
                                           const std::vector<Mat>& c1, const std::vector<PolynomialFlux>& flux) {
  ModelDef m;
  m.name = std::move(name);
  m.n = n;
  m.d = d;
  m.constant_coefficients = true;
  m.polynomial_flux = flux;
  for (int j = 0; j < d; ++j) {
    m.flux.push_back([f = flux[j]](const Vec& u) { return f(u); });
    m.flux_jacobian.push_back([f = flux[j]](const Vec& u) { return f.jacobian(u); });
  }
  m.g = [](const Vec& u) { return u; };
  m.g_jacobian = [n](const Vec&) { return Mat::Identity(n, n); };
  m.coef_a = [acal](const Vec&) { return acal; };
  m.coef_b = [b](const Vec&, int j, int k) { return b.at(j).at(k); };
  m.coef_c0 = constant_family(c0);
  m.coef_c1 = constant_family(c1);
  return m;
}

// M1: scalar Burgers flux in x_1 with damped-wave regularization a u_tt.
inline ModelDef burgers_dw(double a = 1.0, int d = 2) {
  if (!(a > 0)) fail(ErrorKind::DomainError, "burgers_dw requires a > 0");
  if (d < 1 || d > 3) fail(ErrorKind::DomainError, "burgers_dw supports d in 1..3");
  std::vector<PolynomialFlux> flux;
  for (int j = 0; j < d; ++j) {
    PolynomialFlux f{Vec::Zero(1), Mat::Zero(1, 1), {}};
    if (j == 0) f.quadratic = {Mat::Identity(1, 1)};
    flux.push_back(f);
  }
  std::vector<std::vector<Mat>> b(d, std::vector<Mat>(d, Mat::Zero(1, 1)));
  for (int j = 0; j < d; ++j) b[j][j] = Mat::Identity(1, 1);
  std::vector<Mat> zero(d, Mat::Zero(1, 1));
  auto m = constant_coefficient_model("burgers_dw", 1, d, a * Mat::Identity(1, 1), b, zero, zero, flux);
  m.params = {{"a", a}, {"d", d}};
  return m;
}

// M2: linear acoustics in (p, v1, v2) advected with speed U along x_1, regularized by a u_tt - b Laplacian u.
inline ModelDef acoustics_dw(double a = 0.5, double b = 1.0, double U = 0.0) {
  if (!(a > 0) || !(b > 0)) fail(ErrorKind::DomainError, "acoustics_dw requires a > 0 and b > 0");
  Mat a1 = U * Mat::Identity(3, 3);
  a1(0, 1) += 1;
  a1(1, 0) += 1;
  Mat a2 = Mat::Zero(3, 3);
  a2(0, 2) = a2(2, 0) = 1;
  std::vector<PolynomialFlux> flux = {{Vec::Zero(3), a1, {}}, {Vec::Zero(3), a2, {}}};
  std::vector<std::vector<Mat>> bb(2, std::vector<Mat>(2, Mat::Zero(3, 3)));
  bb[0][0] = bb[1][1] = b * Mat::Identity(3, 3);
  std::vector<Mat> zero(2, Mat::Zero(3, 3));
  auto m = constant_coefficient_model("acoustics_dw", 3, 2, a * Mat::Identity(3, 3), bb, zero, zero, flux);
  m.params = {{"a", a}, {"b", b}, {"U", U}};
  return m;
}

// M3: user-supplied polynomial fluxes with constant A, B, C0, C1 and g(u) = u.
inline ModelDef jinxin_generic(int n, int d, const Mat& acal, const std::vector<std::vector<Mat>>& b,
                               const std::vector<Mat>& c0, const std::vector<Mat>& c1,
                               const std::vector<PolynomialFlux>& flux) {
  if (static_cast<int>(flux.size()) != d || static_cast<int>(b.size()) != d || static_cast<int>(c0.size()) != d ||
      static_cast<int>(c1.size()) != d)
    fail(ErrorKind::DomainError, "jinxin_generic: coefficient families must have one entry per dimension");
  auto m = constant_coefficient_model("jinxin_generic", n, d, acal, b, c0, c1, flux);
  validate_at(m, Vec::Zero(n));
  return m;
}

}  // namespace hhshock
