#include "hhshock/models.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hhshock;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

ModelDef cubic_model(bool analytic) {
  ModelDef m;
  m.name = "cubic";
  m.n = 2;
  m.d = 1;
  m.flux = {[](const Vec& u) { return v2(u(1), u(0) * u(0) * u(0)); }};
  if (analytic)
    m.flux_jacobian = {[](const Vec& u) {
      Mat j(2, 2);
      j << 0, 1, 3 * u(0) * u(0), 0;
      return j;
    }};
  m.g = [](const Vec& u) { return u; };
  m.coef_a = [](const Vec&) { return Mat::Identity(2, 2); };
  m.coef_b = [](const Vec&, int, int) { return Mat::Identity(2, 2); };
  m.coef_c0 = m.coef_c1 = [](const Vec&, int) { return Mat::Zero(2, 2); };
  return m;
}

}  // namespace

TEST(DerivativeMatrices, BurgersFluxJacobian) {
  auto m = burgers_dw(1.0, 2);
  auto dm = derivative_matrices(m, v1(2.0));
  EXPECT_DOUBLE_EQ(dm.a[0](0, 0), 2.0);
  EXPECT_DOUBLE_EQ(dm.a[1](0, 0), 0.0);
  EXPECT_DOUBLE_EQ(dm.a0(0, 0), 1.0);
}

TEST(DerivativeMatrices, FiniteDifferencesMatchAnalytic) {
  Vec u = v2(0.7, -1.3);
  auto fd = derivative_matrices(cubic_model(false), u);
  auto an = derivative_matrices(cubic_model(true), u);
  EXPECT_LE((fd.a[0] - an.a[0]).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_NEAR(an.a[0](1, 0), 3 * 0.49, 1e-14);
}

TEST(DerivativeMatrices, AsymmetricDgRejected) {
  auto m = cubic_model(true);
  m.g = [](const Vec& u) { return v2(u(0) + 2 * u(1), u(1)); };
  try {
    derivative_matrices(m, v2(0, 0));
    FAIL() << "expected NonSymmetricA0";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonSymmetricA0);
  }
}

TEST(DerivativeMatrices, WrongStateDimension) {
  auto m = burgers_dw();
  EXPECT_THROW(derivative_matrices(m, v2(0, 0)), Error);
}

TEST(Symbols, ZeroWavenumber) {
  auto s = assemble_symbols(burgers_dw(), v1(0.4), v2(0, 0));
  EXPECT_EQ(s.A.norm(), 0.0);
  EXPECT_EQ(s.B.norm(), 0.0);
  EXPECT_EQ(s.C.norm(), 0.0);
}

TEST(Symbols, ScalarLaplacianSymbol) {
  auto s = assemble_symbols(burgers_dw(), v1(0.4), v2(1, 2));
  EXPECT_DOUBLE_EQ(s.B(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(s.B22(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(s.A(0, 0), 0.4);
}

TEST(Symbols, LinearityAndHomogeneity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-2, 2);
  auto m = acoustics_dw(0.5, 1.0, 0.3);
  // give the model a cross diffusion and C terms so that all pieces are exercised
  m.coef_b = [](const Vec&, int j, int k) {
    Mat b = (j == k ? 1.0 : 0.2 * (j + 1) - 0.1 * k) * Mat::Identity(3, 3);
    b(0, 1) += 0.05 * (j + 2 * k);
    return b;
  };
  m.coef_c0 = [](const Vec&, int j) { return Mat::Constant(3, 3, 0.1 * (j + 1)); };
  for (int t = 0; t < 20; ++t) {
    Vec u(3), x(2), y(2);
    u << U(rng), U(rng), U(rng);
    x << U(rng), U(rng);
    y << U(rng), U(rng);
    auto sx = assemble_symbols(m, u, x), sy = assemble_symbols(m, u, y), sxy = assemble_symbols(m, u, x + y);
    EXPECT_LE((sxy.A - sx.A - sy.A).norm(), 1e-12);
    EXPECT_LE((sxy.C - sx.C - sy.C).norm(), 1e-12);
    auto s2 = assemble_symbols(m, u, 2 * x);
    EXPECT_LE((s2.B - 4 * sx.B).norm(), 1e-12);
    Vec e(2);
    e << 0, x(1);
    auto st = assemble_symbols(m, u, e);
    EXPECT_LE((sx.B22 - st.B).norm(), 1e-12);
    EXPECT_LE((sx.A2 - st.A).norm(), 1e-12);
    // B(xi) splits into the x1-x1, cross and transverse pieces
    Mat recon = x(0) * x(0) * m.coef_b(u, 0, 0) + x(0) * (sx.B12 + sx.B21) + sx.B22;
    EXPECT_LE((recon - sx.B).norm(), 1e-12);
  }
}

TEST(Dispersion, MatrixValues) {
  auto m = burgers_dw(0.7, 2);
  EXPECT_EQ(dispersion_matrix(m, v1(0.3), 0.0, v2(0, 0)).norm(), 0.0);
  cplx lam(0.3, -1.2);
  Vec xi = v2(1.5, -0.5);
  double a = 0.7, u = 0.3;
  cplx expect = a * lam * lam + lam + xi.squaredNorm() + kI * u * xi(0);
  EXPECT_LE(std::abs(dispersion_matrix(m, v1(u), lam, xi)(0, 0) - expect), 1e-14);
  cplx conj_val = dispersion_matrix(m, v1(u), std::conj(lam), -xi)(0, 0);
  EXPECT_LE(std::abs(conj_val - std::conj(expect)), 1e-14);
}

TEST(Dispersion, BurgersRootsQuadraticFormula) {
  auto m = burgers_dw(1.0, 2);
  auto r = dispersion_roots(m, v1(0.0), v2(1, 0));
  ASSERT_EQ(r.roots.size(), 2u);
  auto o = oracle::burgers_dispersion(1.0, 0.0, 1.0, 0.0);
  EXPECT_LE(oracle::nearest_match_error(r.roots, o), 1e-12);
  for (int k = 0; k < 2; ++k) {
    EXPECT_NEAR(r.roots[k].real(), -0.5, 1e-12);
    EXPECT_LE(r.residuals[k], 1e-8);
  }
  EXPECT_NEAR(std::abs(r.roots[0].imag()), std::sqrt(3.0) / 2, 1e-12);
}

TEST(Dispersion, SupercharacteristicUnstableRoot) {
  auto m = burgers_dw(1.0, 2);
  auto r = dispersion_roots(m, v1(2.0), v2(10, 0));
  auto o = oracle::sort_by_real(oracle::quadratic_roots(1.0, 1.0, cplx(100, 20)));
  EXPECT_LE(std::abs(r.roots[0] - o[0]), 1e-10);
  // the quadratic formula gives Re = 0.49631, i.e. +0.5 to two digits
  EXPECT_NEAR(r.roots[0].real(), 0.5, 5e-3);
  EXPECT_GT(r.roots[0].real(), 0.0);
}

TEST(Dispersion, ZeroWavenumberFactorization) {
  auto m = acoustics_dw(0.5, 1.0, 0.2);
  auto r = dispersion_roots(m, Vec::Zero(3), v2(0, 0));
  ASSERT_EQ(r.roots.size(), 6u);
  int zeros = 0, fast = 0;
  for (auto l : r.roots) {
    if (std::abs(l) < 1e-10) ++zeros;
    if (std::abs(l + 2.0) < 1e-10) ++fast;  // spec(-A^{-1} A^0) = -1/a
  }
  EXPECT_EQ(zeros, 3);
  EXPECT_EQ(fast, 3);
}

TEST(Dispersion, ResidualAndConjugationClosure) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-3, 3);
  auto m = acoustics_dw(0.4, 1.3, 0.6);
  for (int t = 0; t < 30; ++t) {
    Vec u = Vec::Zero(3), xi = v2(U(rng), U(rng));
    auto r = dispersion_roots(m, u, xi);
    auto rn = dispersion_roots(m, u, -xi);
    ASSERT_EQ(r.roots.size(), 6u);
    for (double res : r.residuals) EXPECT_LE(res, 1e-8);
    for (auto l : r.roots) {
      double best = 1e300;
      for (auto k : rn.roots) best = std::min(best, std::abs(std::conj(l) - k));
      EXPECT_LE(best, 1e-9);
    }
  }
}

TEST(Dispersion, SingularScriptA) {
  auto m = burgers_dw(1.0, 1);
  m.coef_a = [](const Vec&) { return Mat::Zero(1, 1); };
  try {
    dispersion_roots(m, v1(0), v1(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SingularA);
  }
}
