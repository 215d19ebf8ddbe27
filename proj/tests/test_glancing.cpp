#include "hhshock/glancing.hpp"
#include "hhshock/models.hpp"
#include "support/test_models.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

using namespace hhshock;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec zero3() { return Vec::Zero(3); }

}  // namespace

TEST(CharRoots, AcousticsRootsAreZeroAndPlusMinusModulus) {
  auto m = acoustics_dw();
  for (double xi1 : {-2.0, -0.3, 0.0, 0.7, 3.0})
    for (double eta : {-1.5, 0.4, 2.0}) {
      auto r = char_roots(m, zero3(), xi1, v1(eta));
      double k = std::hypot(xi1, eta);
      ASSERT_EQ(r.size(), 3u);
      EXPECT_NEAR(r[0], -k, 1e-12);
      EXPECT_NEAR(r[1], 0.0, 1e-12);
      EXPECT_NEAR(r[2], k, 1e-12);
    }
}

TEST(CharRoots, BurgersRootIsMinusTransportSpeed) {
  auto m = burgers_dw(0.5, 2);
  auto r = char_roots(m, v1(1.5), 2.0, v1(0.3));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0], -3.0, 1e-12);
  EXPECT_THROW(char_roots(m, v1(1.0), 1.0, v2(1, 1)), Error);
}

TEST(CharRoots, CrossingBranchesAreReported) {
  auto m = testmodels::diagonal_crossing_model();
  // roots -u1 xi1 and -u2 eta meet at xi1 = 1
  try {
    track_branches(m, v2(1, 1), v1(1.0), linspace(-3, 3, 61));
    FAIL() << "expected BranchTrackingError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BranchTrackingError);
  }
  // separated everywhere on a window that stops short of the crossing
  EXPECT_NO_THROW(track_branches(m, v2(1, 1), v1(1.0), linspace(-3, 0.5, 36)));
}

TEST(FindGlancing, AcousticsOuterBranchesHaveQuadraticTangency) {
  auto m = acoustics_dw();
  for (double eta : {0.5, 1.0, -2.0}) {
    auto up = find_glancing(m, zero3(), v1(eta), 2);
    ASSERT_EQ(up.size(), 1u);
    EXPECT_LE(std::abs(up[0].xi1), 1e-8);
    EXPECT_NEAR(up[0].tau, std::abs(eta), 1e-10);
    EXPECT_EQ(up[0].sbar, 2);
    EXPECT_NEAR(up[0].derivatives[1], 1.0 / std::abs(eta), 1e-4);
    auto lo = find_glancing(m, zero3(), v1(eta), 0);
    ASSERT_EQ(lo.size(), 1u);
    EXPECT_NEAR(lo[0].tau, -std::abs(eta), 1e-10);
    EXPECT_EQ(lo[0].sbar, 2);
  }
}

TEST(FindGlancing, AdvectedAcousticsMatchesClosedForm) {
  // top root a(xi1) = -U xi1 + |xi| is critical at xi1 = U |eta| / sqrt(1 - U^2)
  const double U = 0.4, eta = 1.3;
  auto m = acoustics_dw(0.5, 1.0, U);
  auto up = find_glancing(m, zero3(), v1(eta), 2);
  ASSERT_EQ(up.size(), 1u);
  EXPECT_NEAR(up[0].xi1, U * eta / std::sqrt(1 - U * U), 1e-8);
  EXPECT_NEAR(up[0].tau, eta * std::sqrt(1 - U * U), 1e-10);
  EXPECT_EQ(up[0].sbar, 2);
}

TEST(FindGlancing, GlancingTauIsACharacteristicRoot) {
  auto m = acoustics_dw(0.5, 1.0, 0.3);
  for (int l : {0, 2}) {
    auto p = find_glancing(m, zero3(), v1(0.8), l);
    ASSERT_EQ(p.size(), 1u);
    auto s = assemble_symbols(m, zero3(), v2(p[0].xi1, 0.8));
    Mat t = p[0].tau * s.a0 + s.A;
    EXPECT_LE(std::abs(t.determinant()), 1e-10 * std::pow(scale_of(t), 3));
  }
}

TEST(FindGlancing, LinearAndFlatBranches) {
  // burgers: a = -u xi1 has no critical point
  auto m = burgers_dw(0.5, 2);
  EXPECT_TRUE(find_glancing(m, v1(1.0), v1(1.0), 0).empty());
  auto gd = analyze_glancing(m, v1(-0.7), -1, v1(2.0));
  EXPECT_EQ(gd.count(), 0u);
  // the middle acoustics branch is identically zero
  try {
    find_glancing(acoustics_dw(), zero3(), v1(1.0), 1);
    FAIL() << "expected MultiplicityAmbiguous";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MultiplicityAmbiguous);
  }
  auto ga = analyze_glancing(acoustics_dw(), zero3(), 1, v1(1.0));
  EXPECT_EQ(ga.count(), 2u);
  EXPECT_TRUE(ga.branches[1].flat);
  EXPECT_EQ(ga.to_json()["branches"].size(), 3u);
}

TEST(FindGlancing, HigherMultiplicityAndStencilHalving) {
  Vec eta = v1(1.0);
  BranchFn cubic = [](double x, const Vec&) { return std::pow(x - 0.3123, 3) + 2.0; };
  BranchFn quartic = [](double x, const Vec& e) { return std::pow(x + 0.71, 4) - e.squaredNorm(); };
  BranchFn fifth = [](double x, const Vec&) { return std::pow(x - 1.05, 5) + 0.5 * (x - 1.05); };
  for (double w : {0.05, 0.025, 0.0125}) {
    GlancingOptions o;
    o.stencil = w;
    auto c = find_glancing(cubic, eta, o);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_NEAR(c[0].xi1, 0.3123, 1e-6);
    EXPECT_EQ(c[0].sbar, 3);
    auto q = find_glancing(quartic, eta, o);
    ASSERT_EQ(q.size(), 1u);
    EXPECT_EQ(q[0].sbar, 4);
    EXPECT_NEAR(q[0].tau, -1.0, 1e-12);
    EXPECT_TRUE(find_glancing(fifth, eta, o).empty());
  }
}

TEST(FindGlancing, WindowExhaustedAndPreconditions) {
  BranchFn decay = [](double x, const Vec&) { return std::exp(-x); };
  try {
    find_glancing(decay, v1(1.0));
    FAIL() << "expected WindowExhausted";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::WindowExhausted);
  }
  EXPECT_THROW(find_glancing(acoustics_dw(), zero3(), v1(0.0), 2), Error);
  EXPECT_THROW(model_branch(acoustics_dw(), zero3(), 3), Error);
}

TEST(FindGlancing, DependsOnTransverseWavenumberThroughItsModulus) {
  auto m = acoustics_dw(0.5, 1.0, 0.2);
  BranchFn a = model_branch(m, zero3(), 2);
  for (double e : {0.3, 1.1, 4.0}) {
    auto p = find_glancing(a, v1(e));
    auto q = find_glancing(a, v1(-e));
    ASSERT_EQ(p.size(), 1u);
    ASSERT_EQ(q.size(), 1u);
    EXPECT_NEAR(p[0].xi1, q[0].xi1, 1e-8 * e);
    EXPECT_NEAR(p[0].tau, q[0].tau, 1e-8 * e);
  }
  // three-dimensional branch depending on |eta| only
  BranchFn r = [](double x, const Vec& e) { return std::sqrt(x * x + e.squaredNorm()) - 0.3 * x; };
  Vec e0 = v2(0.6, 0.8), e1 = v2(1.0, 0.0), e2 = v2(-0.28, 0.96);
  auto p0 = find_glancing(r, e0), p1 = find_glancing(r, e1), p2 = find_glancing(r, e2);
  ASSERT_EQ(p0.size(), 1u);
  EXPECT_NEAR(p0[0].tau, p1[0].tau, 1e-8);
  EXPECT_NEAR(p0[0].tau, p2[0].tau, 1e-8);
  EXPECT_NEAR(p0[0].xi1, p2[0].xi1, 1e-8);
}

TEST(S5, AcousticsTangencyPersists) {
  auto rep = check_S5(acoustics_dw(), zero3(), v1(1.0), 0.5, 2, 0);
  EXPECT_EQ(rep.sbar, 2);
  EXPECT_TRUE(rep.computed_pass);
  EXPECT_TRUE(rep.verdict.pass);
  EXPECT_EQ(rep.samples.size(), 16u);
  for (const auto& s : rep.samples) EXPECT_LE(std::abs(s.xi1), 1e-8);
  EXPECT_NE(rep.verdict.note.find("d = 2"), std::string::npos);
}

TEST(S5, PersistingAndCollapsingQuarticBranches) {
  const Vec eta0 = v2(1.0, 0.0);
  // the quartic tangency moves with eta but keeps its order
  BranchFn moving = [](double x, const Vec& e) { return std::pow(x - e(1), 4) + e.squaredNorm(); };
  auto ok = check_S5(moving, eta0, 0.3, 0, 3);
  EXPECT_EQ(ok.sbar, 4);
  EXPECT_TRUE(ok.verdict.pass) << ok.verdict.to_json().dump();
  // a quadratic term switches on away from eta_1 = 1 and the order drops to two
  BranchFn collapsing = [](double x, const Vec& e) {
    return std::pow(x, 4) + std::pow(e(0) - 1.0, 2) * x * x;
  };
  auto bad = check_S5(collapsing, eta0, 0.3, 0, 3);
  EXPECT_EQ(bad.sbar, 4);
  EXPECT_FALSE(bad.verdict.pass);
  EXPECT_LT(bad.verdict.margin, 0);
  EXPECT_FALSE(bad.verdict.witnesses.empty());
  // the same branch in two dimensions is recorded as a vacuous pass
  BranchFn flat2 = [](double x, const Vec& e) { return std::pow(x, 4) + std::pow(e(0) - 1.0, 2) * x * x; };
  auto d2 = check_S5(flat2, v1(1.0), 0.3, 0, 2);
  EXPECT_FALSE(d2.computed_pass);
  EXPECT_TRUE(d2.verdict.pass);
}

TEST(Surface, CsvRows) {
  auto a = model_branch(acoustics_dw(), zero3(), 2);
  std::vector<Vec> etas = {v1(0.5), v1(1.0), v1(1.5)};
  auto rows = glancing_surface(a, etas);
  ASSERT_EQ(rows.size(), 3u);
  for (size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows[i].tau, etas[i](0), 1e-10);
  std::string path = ::testing::TempDir() + "glancing_surface.csv";
  write_surface_csv(rows, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "eta1,xi1,tau,sbar");
  int count = 0;
  while (std::getline(in, line)) ++count;
  EXPECT_EQ(count, 3);
  std::remove(path.c_str());
}
