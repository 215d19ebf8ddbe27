#include "hhshock/dissipativity.hpp"
#include "hhshock/models.hpp"
#include "support/oracles.hpp"
#include "support/test_models.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hhshock;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec e1(int d) {
  Vec v = Vec::Zero(d);
  v(0) = 1;
  return v;
}

StabilityGrids small_grids() {
  StabilityGrids g;
  g.directions = 16;
  g.xi.magnitudes = 24;
  return g;
}

}  // namespace

TEST(Hyperbolicity, ScalarBurgersPasses) {
  auto m = burgers_dw(1.0, 2);
  auto rep = check_hyperbolicity(m, v1(0.7), direction_grid(2, 16));
  EXPECT_TRUE(rep.ha.pass);
  EXPECT_TRUE(rep.hb.pass);
  EXPECT_TRUE(rep.constant_multiplicities());
}

TEST(Hyperbolicity, JordanBlockFailsSemisimplicity) {
  auto rep = check_hyperbolicity(testmodels::jordan_model(), Vec::Zero(2), direction_grid(1, 2));
  EXPECT_FALSE(rep.ha.pass);
  EXPECT_FALSE(rep.ha.witnesses.empty());
}

TEST(Hyperbolicity, AcousticsEigenvaluesAndMultiplicities) {
  auto m = acoustics_dw(0.5, 1.0, 0.0);
  auto omegas = direction_grid(2, 16);
  auto rep = check_hyperbolicity(m, Vec::Zero(3), omegas);
  EXPECT_TRUE(rep.ha.pass);
  EXPECT_TRUE(rep.constant_multiplicities());
  EXPECT_EQ(rep.multiplicity_profile.front(), (std::vector<int>{1, 1, 1}));
  for (const auto& w : omegas) {
    auto s = assemble_symbols(m, Vec::Zero(3), w);
    Eigen::SelfAdjointEigenSolver<Mat> es(s.A);
    EXPECT_NEAR(es.eigenvalues()(0), -1.0, 1e-12);
    EXPECT_NEAR(es.eigenvalues()(1), 0.0, 1e-12);
    EXPECT_NEAR(es.eigenvalues()(2), 1.0, 1e-12);
  }
}

TEST(D1, ScalarRestrictionValues) {
  auto m = burgers_dw(1.0, 2);
  for (const auto& w : direction_grid(2, 8)) {
    auto r = check_D1(m, v1(0.0), w);
    ASSERT_EQ(r.groups.size(), 1u);
    EXPECT_NEAR(r.spectral, -1.0, 1e-12);
  }
  auto half = check_D1(m, v1(0.5), e1(2));
  EXPECT_NEAR(half.groups[0].restriction(0, 0).real(), -0.75, 1e-12);
  EXPECT_NEAR(half.groups[0].mu.real(), 0.5, 1e-12);
  auto super = check_D1(m, v1(2.0), e1(2));
  EXPECT_NEAR(super.spectral, 3.0, 1e-12);
}

TEST(D2, ScalarRestrictionValues) {
  auto m = burgers_dw(1.0, 2);
  auto r = check_D2(m, v1(0.0), e1(2));
  ASSERT_EQ(r.groups.size(), 2u);
  for (const auto& g : r.groups) {
    EXPECT_NEAR(std::abs(g.mu), 1.0, 1e-12);
    EXPECT_NEAR(g.eigenvalues[0].real(), -0.5, 1e-12);
  }
  auto s = check_D2(m, v1(2.0), e1(2));
  EXPECT_NEAR(s.spectral, 0.5, 1e-12);
}

// With C = 0, B = b|omega|^2 I, A = aI, A0 = I the restriction on the speed-mu_1 eigenspace is
// -(I + A(omega)/mu_1)/(2a); it reduces to -1/(2a) I when A(omega) vanishes.
TEST(D2, WaveEquationRestriction) {
  for (double a : {0.2, 0.5, 2.0}) {
    auto zero_flux = burgers_dw(a, 2);
    for (const auto& w : direction_grid(2, 6)) {
      auto r = check_D2(zero_flux, v1(0.0), w);
      for (const auto& g : r.groups) EXPECT_NEAR(g.eigenvalues[0].real(), -1.0 / (2 * a), 1e-10);
    }
    auto m = acoustics_dw(a, 1.0, 0.0);
    for (const auto& w : direction_grid(2, 6)) {
      auto r = check_D2(m, Vec::Zero(3), w);
      Eigen::SelfAdjointEigenSolver<Mat> es(assemble_symbols(m, Vec::Zero(3), w).A);
      for (const auto& g : r.groups) {
        std::vector<cplx> expect;
        for (int k = 0; k < 3; ++k) expect.push_back(-(1.0 + es.eigenvalues()(k) / g.mu.real()) / (2 * a));
        EXPECT_LE(oracle::nearest_match_error(g.eigenvalues, expect), 1e-10);
      }
    }
  }
}

TEST(D2, SimilarityInvariance) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> N;
  auto m = acoustics_dw(0.5, 1.0, 0.3);
  auto s = assemble_symbols(m, Vec::Zero(3), direction_grid(2, 8)[1]);
  CMat speed = principal_speed_block(s), pert = principal_perturbation_block(s);
  for (const auto& g : eigen_groups(speed)) {
    CMat z(g.multiplicity, g.multiplicity);
    for (int i = 0; i < z.size(); ++i) z.data()[i] = cplx(N(rng), N(rng));
    CMat U = orthonormalize(z);
    CMat m0 = g.left * pert * g.right;
    CMat m1 = (U.adjoint() * g.left) * pert * (g.right * U);
    CVec e0 = eigenvalues(m0);
    std::vector<cplx> a(e0.data(), e0.data() + e0.size());
    CVec e = eigenvalues(m1);
    EXPECT_LE(oracle::nearest_match_error(std::vector<cplx>(e.data(), e.data() + e.size()), a), 1e-8);
  }
}

TEST(D1, SimilarityInvarianceUnderRandomBasis) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> N;
  auto m = testmodels::coupled_c_model();
  Vec u = Vec::Zero(2);
  for (const auto& w : direction_grid(2, 8)) {
    auto s = assemble_symbols(m, u, w);
    Mat isq;
    Mat ach = normalized_symbol(s, &isq);
    for (const auto& g : eigen_groups(to_complex(ach))) {
      cplx phase = std::exp(kI * N(rng));
      CMat a = d1_restriction(s, isq, g.value, g.right, g.left);
      CMat b = d1_restriction(s, isq, g.value, g.right * phase, g.left / phase);
      EXPECT_LE((a - b).norm(), 1e-10);
    }
  }
}

TEST(D3, BurgersSweepOracle) {
  auto m = burgers_dw(1.0, 2);
  std::vector<Vec> xis;
  for (double r : logspace(0.05, 20, 40)) xis.push_back(r * e1(2));
  auto d3 = check_D3(m, v1(0.0), xis);
  // oracle: exact roots (-1 +- sqrt(1 - 4 r^2)) / 2
  double c = 1e300;
  for (const auto& x : xis) {
    auto o = oracle::burgers_dispersion(1.0, 0.0, x(0), 0.0);
    for (auto l : o) c = std::min(c, -l.real() / kappa(x.norm()));
  }
  EXPECT_NEAR(d3.fitted_c, c, 1e-10);
  EXPECT_GE(d3.fitted_c, 0.4);
  EXPECT_TRUE(std::isfinite(d3.im_bound));
}

TEST(D3, SupercharacteristicFails) {
  auto m = burgers_dw(1.0, 2);
  Vec xi(2);
  xi << 10, 0;
  auto d3 = check_D3(m, v1(2.0), {xi});
  auto o = oracle::sort_by_real(oracle::quadratic_roots(1.0, 1.0, cplx(100, 20)));
  EXPECT_NEAR(d3.max_re, o[0].real(), 1e-10);
  EXPECT_GT(d3.max_re, 0.49);
}

TEST(Expansions, BurgersCoefficients) {
  auto m = burgers_dw(1.0, 2);
  std::vector<double> rho = {1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 1e1, 3e1, 1e2, 3e2, 1e3};
  auto rep = verify_expansions(m, v1(0.0), e1(2), rho);
  EXPECT_TRUE(rep.pass);
  int slow = 0, fast = 0, large = 0;
  for (const auto& b : rep.branches) {
    if (b.kind == "slow") {
      ++slow;
      EXPECT_NEAR(b.fitted.real(), -1.0, 0.02);
      EXPECT_NEAR(b.predicted.real(), -1.0, 1e-12);
    } else if (b.kind == "fast") {
      ++fast;
      EXPECT_NEAR(b.fitted.real(), -1.0, 1e-4);
    } else {
      ++large;
      EXPECT_NEAR(b.fitted.real(), -0.5, 0.01);
      EXPECT_NEAR(std::abs(b.leading), 1.0, 1e-12);
    }
  }
  EXPECT_EQ(slow, 1);
  EXPECT_EQ(fast, 1);
  EXPECT_EQ(large, 2);
}

// lambda_2 from the roots must agree with spec(M) from check_D1 in every direction, including a
// model where C != 0 makes the sign of the C term observable.
TEST(Expansions, ConsistencyWithD1AcrossGrid) {
  std::vector<double> rho = {1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 1e1, 3e1, 1e2, 3e2, 1e3};
  for (const auto& m : {burgers_dw(0.5, 2), testmodels::coupled_c_model(), acoustics_dw(0.5, 2.0, 0.3)}) {
    Vec u = Vec::Constant(m.n, 0.2);
    for (const auto& w : direction_grid(2, 12)) {
      auto rep = verify_expansions(m, u, w, rho);
      EXPECT_TRUE(rep.pass) << m.name;
      for (const auto& b : rep.branches) {
        if (b.kind != "slow") continue;
        EXPECT_LE(std::abs(b.fitted - b.predicted), 0.05 * std::max(std::abs(b.predicted), 1e-3)) << m.name;
        EXPECT_GE(b.exact ? 3.0 : b.order, 2.7);
      }
    }
  }
}

TEST(StateStability, BurgersStableAndUnstable) {
  auto m = burgers_dw(1.0, 2);
  auto st = check_state_stability(m, v1(0.0), small_grids());
  EXPECT_TRUE(st.stable);
  EXPECT_GT(st.min_margin, 0.0);
  auto un = check_state_stability(m, v1(2.0), small_grids());
  EXPECT_FALSE(un.stable);
  for (auto c : {"D1", "D2", "D3"})
    EXPECT_NE(std::find(un.failing.begin(), un.failing.end(), c), un.failing.end()) << c;
}

TEST(StateStability, AcousticsSubcharacteristic) {
  // stable iff (|U| + 1)^2 a < b
  auto ok = check_state_stability(acoustics_dw(0.5, 1.0, 0.0), Vec::Zero(3), small_grids());
  EXPECT_TRUE(ok.stable);
  auto bad = check_state_stability(acoustics_dw(0.5, 1.0, 0.8), Vec::Zero(3), small_grids());
  EXPECT_FALSE(bad.stable);
}

// A D3 failure must be explained by D1, D2 or the fast modes (nonnegative margin).
TEST(StateStability, D3FailureIsExplained) {
  std::vector<std::pair<ModelDef, Vec>> cases = {{burgers_dw(1.0, 2), v1(2.0)},
                                                 {burgers_dw(0.3, 2), v1(-2.5)},
                                                 {acoustics_dw(0.5, 1.0, 0.8), Vec::Zero(3)},
                                                 {acoustics_dw(1.0, 0.5, 0.0), Vec::Zero(3)}};
  auto grids = small_grids();
  grids.xi.magnitudes = 48;
  for (auto& [m, u] : cases) {
    auto st = check_state_stability(m, u, grids);
    ASSERT_FALSE(st.d3.pass);
    EXPECT_TRUE(!st.d1.pass || !st.d2.pass || !st.fast.pass) << m.name;
  }
}

TEST(AlongStates, ConstantStatesGiveIdenticalVerdicts) {
  auto m = burgers_dw(0.2, 2);
  std::vector<Vec> states(5, v1(0.1));
  auto rep = check_along_states(m, linspace(-1, 1, 5), states, small_grids());
  EXPECT_TRUE(rep.all_stable);
  for (double g : rep.margin) EXPECT_EQ(g, rep.margin.front());
}
