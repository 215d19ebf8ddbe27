#pragma once

#include "hhshock/model.hpp"

#include <limits>

namespace hhshock {

using json = nlohmann::ordered_json;

struct Verdict {
  std::string condition;
  bool pass = false;
  double margin = 0.0;     // positive means the condition holds with room to spare
  double tolerance = 0.0;  // pass iff margin > tolerance
  std::string grid;
  json witnesses = json::array();
  std::string note;

  json to_json() const {
    json j = {{"condition", condition}, {"grid", grid},           {"tolerance", tolerance},
              {"margin", std::isfinite(margin) ? json(margin) : json(nullptr)},
              {"verdict", pass ? "pass" : "fail"}, {"witnesses", witnesses}};
    if (!note.empty()) j["note"] = note;
    return j;
  }
};

inline Verdict make_verdict(std::string condition, double margin, double tol, std::string grid) {
  Verdict v;
  v.condition = std::move(condition);
  v.margin = margin;
  v.tolerance = tol;
  v.pass = margin > tol;
  v.grid = std::move(grid);
  return v;
}

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json cplx_json(cplx z) { return json::array({z.real(), z.imag()}); }

struct DissipativityTolerances {
  double margin = 1e-8;     // verdict tolerance on margins
  double imag = 1e-10;      // |Im| threshold for real spectra (relative)
  double condition = 1e6;   // eigenvector-matrix condition bound for semi-simplicity
  double cluster = 1e-8;    // eigenvalue clustering (relative)
};

// Direction grid on S^{d-1}. Antipodal pairs are always both present.
inline std::vector<Vec> direction_grid(int d, int count) {
  std::vector<Vec> out;
  if (d == 1) {
    out.push_back(Vec::Constant(1, 1.0));
    out.push_back(Vec::Constant(1, -1.0));
    return out;
  }
  if (d == 2) {
    count = std::max(2, count + (count % 2));
    for (int k = 0; k < count; ++k) {
      Vec w(2);
      double th = 2 * kPi * k / count;
      w << std::cos(th), std::sin(th);
      out.push_back(w);
    }
    return out;
  }
  // d = 3: Fibonacci points on the upper half sphere together with their antipodes
  int half = std::max(1, count / 2);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < half; ++k) {
    double z = 1.0 - (k + 0.5) / half;
    double r = std::sqrt(std::max(0.0, 1 - z * z));
    Vec w(d);
    w.setZero();
    w(0) = r * std::cos(golden * k);
    w(1) = r * std::sin(golden * k);
    w(2) = z;
    out.push_back(w);
    out.push_back(-w);
  }
  return out;
}

struct WavenumberGrid {
  int directions = 64;
  double xi_min = 1e-2;
  double xi_max = 1e2;
  int magnitudes = 48;

  std::vector<Vec> points(int d) const {
    std::vector<Vec> out;
    for (const auto& w : direction_grid(d, directions))
      for (double r : logspace(xi_min, xi_max, magnitudes)) out.push_back(r * w);
    return out;
  }
  std::string describe(int d) const {
    std::ostringstream os;
    os << direction_grid(d, directions).size() << " directions x " << magnitudes << " log-spaced |xi| in [" << xi_min
       << ", " << xi_max << "]";
    return os.str();
  }
};

// Normalized symbol: Acheck(omega) = (A0)^{-1/2} A(omega) (A0)^{-1/2}
inline Mat normalized_symbol(const SymbolBundle& s, Mat* a0_isqrt = nullptr) {
  Mat w = spd_inverse_sqrt(s.a0);
  if (a0_isqrt) *a0_isqrt = w;
  return w * s.A * w;
}

struct SpectrumCheck {
  double max_imag = 0;      // max |Im| / scale
  double condition = 1;     // eigenvector matrix condition
  std::vector<int> multiplicities;
  std::vector<cplx> values;
};

// Real-and-semisimple test for a matrix whose eigenvalues are expected to be real.
inline SpectrumCheck real_semisimple(const CMat& m, const DissipativityTolerances& tol) {
  SpectrumCheck out;
  const int n = static_cast<int>(m.rows());
  const double sc = scale_of(m);
  CVec ev = eigenvalues(m);
  out.values.assign(ev.data(), ev.data() + n);
  for (auto z : out.values) out.max_imag = std::max(out.max_imag, std::abs(z.imag()) / sc);
  auto clusters = cluster_values(out.values, tol.cluster * sc, 1.0);
  // Eigenvector basis from the null space of (m - mu I) for each cluster; a cluster whose
  // geometric multiplicity is short of its algebraic one has an infinite condition number.
  CMat basis(n, n);
  int col = 0;
  for (const auto& c : clusters) {
    out.multiplicities.push_back(static_cast<int>(c.size()));
    cplx mu = 0;
    for (int i : c) mu += out.values[i];
    mu /= double(c.size());
    Eigen::JacobiSVD<CMat> svd(m - mu * CMat::Identity(n, n), Eigen::ComputeFullV);
    const int k = static_cast<int>(c.size());
    double sk = svd.singularValues()(n - k);
    if (sk > 1e-6 * sc) out.condition = std::numeric_limits<double>::infinity();
    basis.middleCols(col, k) = svd.matrixV().rightCols(k);
    col += k;
  }
  if (std::isfinite(out.condition)) out.condition = condition_number(basis);
  return out;
}

// Large-frequency principal block in the form whose eigenvalues are the speeds mu_1:
// mu^2 A - mu C(omega) - B(omega) = 0  <=>  eigenvalues of [[0, I], [A^{-1}B, A^{-1}C]].
inline CMat principal_speed_block(const SymbolBundle& s) {
  const int n = static_cast<int>(s.acal.rows());
  Mat ainv = s.acal.inverse();
  CMat m = CMat::Zero(2 * n, 2 * n);
  m.topRightCorner(n, n) = CMat::Identity(n, n);
  m.bottomLeftCorner(n, n) = to_complex(ainv * s.B);
  m.bottomRightCorner(n, n) = to_complex(ainv * s.C);
  return m;
}

// Zeroth-order perturbation of the speed block, in the same coordinates (u, mu u):
// restricted to an eigenspace of principal_speed_block it yields mu_2.
inline CMat principal_perturbation_block(const SymbolBundle& s) {
  const int n = static_cast<int>(s.acal.rows());
  Mat ainv = s.acal.inverse();
  CMat m = CMat::Zero(2 * n, 2 * n);
  m.bottomLeftCorner(n, n) = -to_complex(ainv * s.A);
  m.bottomRightCorner(n, n) = -to_complex(ainv * s.a0);
  return m;
}

struct HyperbolicityReport {
  Verdict ha, hb;
  std::vector<std::vector<int>> multiplicity_profile;     // per direction, for A0^{-1}A(omega)
  std::vector<std::vector<int>> multiplicity_profile_hb;  // per direction, for the speed block
  bool constant_multiplicities() const {
    for (const auto& p : multiplicity_profile)
      if (p != multiplicity_profile.front()) return false;
    return true;
  }
};

inline HyperbolicityReport check_hyperbolicity(const ModelDef& m, const Vec& u, const std::vector<Vec>& omegas,
                                               const DissipativityTolerances& tol = {}) {
  if (omegas.empty()) fail(ErrorKind::PreconditionError, "empty direction grid");
  auto base = assemble_symbols(m, u, Vec::Zero(m.d));
  Eigen::FullPivLU<Mat> lu0(base.a0);
  if (!lu0.isInvertible()) fail(ErrorKind::SingularA0, "A0 is not invertible");
  HyperbolicityReport rep;
  double worst_imag_a = 0, worst_cond_a = 1, worst_imag_b = 0, worst_cond_b = 1;
  json wa = json::array(), wb = json::array();
  for (const auto& w : omegas) {
    auto s = assemble_symbols(m, u, w);
    auto ca = real_semisimple(to_complex(normalized_symbol(s)), tol);
    auto cb = real_semisimple(principal_speed_block(s), tol);
    rep.multiplicity_profile.push_back(ca.multiplicities);
    rep.multiplicity_profile_hb.push_back(cb.multiplicities);
    if (ca.max_imag > tol.imag || ca.condition > tol.condition)
      wa.push_back({{"omega", vec_json(w)}, {"max_imag", ca.max_imag},
                    {"condition", std::isfinite(ca.condition) ? json(ca.condition) : json("inf")}});
    if (cb.max_imag > tol.imag || cb.condition > tol.condition)
      wb.push_back({{"omega", vec_json(w)}, {"max_imag", cb.max_imag},
                    {"condition", std::isfinite(cb.condition) ? json(cb.condition) : json("inf")}});
    worst_imag_a = std::max(worst_imag_a, ca.max_imag);
    worst_cond_a = std::max(worst_cond_a, ca.condition);
    worst_imag_b = std::max(worst_imag_b, cb.max_imag);
    worst_cond_b = std::max(worst_cond_b, cb.condition);
  }
  auto margin_of = [&](double im, double cond) {
    // positive: log10 headroom of the condition number; negative: size of the violation
    if (im > tol.imag) return -im;
    if (!std::isfinite(cond)) return -std::numeric_limits<double>::infinity();
    return std::log10(tol.condition / cond);
  };
  std::ostringstream g;
  g << omegas.size() << " directions";
  rep.ha = make_verdict("H_A", margin_of(worst_imag_a, worst_cond_a), 0.0, g.str());
  rep.ha.witnesses = wa;
  rep.ha.note = "margin = log10(condition bound / eigenvector condition) when spectra are real";
  rep.hb = make_verdict("H_B", margin_of(worst_imag_b, worst_cond_b), 0.0, g.str());
  rep.hb.witnesses = wb;
  rep.hb.note = rep.ha.note;
  return rep;
}

struct EigenspaceRestriction {
  cplx mu;              // eigenvalue of Acheck(omega) (D1) or speed mu_1 (D2)
  int multiplicity = 1;
  CMat restriction;     // M
  double spectral = 0;  // max Re spec(M)
  double hermitian = 0; // max eig((M + M*)/2)
  std::vector<cplx> eigenvalues;
};

inline void finish_restriction(EigenspaceRestriction& r) {
  CVec ev = eigenvalues(r.restriction);
  r.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  std::sort(r.eigenvalues.begin(), r.eigenvalues.end(), complex_order);
  r.spectral = -std::numeric_limits<double>::infinity();
  for (auto z : r.eigenvalues) r.spectral = std::max(r.spectral, z.real());
  Eigen::SelfAdjointEigenSolver<CMat> es(0.5 * (r.restriction + r.restriction.adjoint()));
  r.hermitian = es.eigenvalues().maxCoeff();
}

struct RestrictionRecord {
  Vec omega;
  std::vector<EigenspaceRestriction> groups;
  double spectral = -std::numeric_limits<double>::infinity();
  double hermitian = -std::numeric_limits<double>::infinity();
};

// D1 restriction for an eigen group of Acheck(omega) with eigenvalue mu. The small-frequency
// coefficient is lambda_1 = -mu, and M = L A0^{-1/2}(-B + lambda_1^2 A - lambda_1 C)A0^{-1/2} R.
inline CMat d1_restriction(const SymbolBundle& s, const Mat& a0_isqrt, cplx mu, const CMat& right,
                           const CMat& left) {
  cplx l1 = -mu;
  CMat w1 = to_complex(a0_isqrt) *
            (-to_complex(s.B) + l1 * l1 * to_complex(s.acal) - l1 * to_complex(s.C)) * to_complex(a0_isqrt);
  return left * w1 * right;
}

inline RestrictionRecord check_D1(const ModelDef& m, const Vec& u, const Vec& omega,
                                  const DissipativityTolerances& tol = {}) {
  auto s = assemble_symbols(m, u, omega);
  Mat w;
  Mat ach = normalized_symbol(s, &w);
  RestrictionRecord rec;
  rec.omega = omega;
  for (const auto& g : eigen_groups(to_complex(ach), tol.cluster)) {
    EigenspaceRestriction r;
    r.mu = g.value;
    r.multiplicity = g.multiplicity;
    r.restriction = d1_restriction(s, w, g.value, g.right, g.left);
    finish_restriction(r);
    rec.spectral = std::max(rec.spectral, r.spectral);
    rec.hermitian = std::max(rec.hermitian, r.hermitian);
    rec.groups.push_back(r);
  }
  return rec;
}

inline RestrictionRecord check_D2(const ModelDef& m, const Vec& u, const Vec& omega,
                                  const DissipativityTolerances& tol = {}) {
  auto s = assemble_symbols(m, u, omega);
  CMat speed = principal_speed_block(s);
  CMat pert = principal_perturbation_block(s);
  RestrictionRecord rec;
  rec.omega = omega;
  for (const auto& g : eigen_groups(speed, tol.cluster)) {
    EigenspaceRestriction r;
    r.mu = g.value;
    r.multiplicity = g.multiplicity;
    r.restriction = g.left * pert * g.right;
    finish_restriction(r);
    rec.spectral = std::max(rec.spectral, r.spectral);
    rec.hermitian = std::max(rec.hermitian, r.hermitian);
    rec.groups.push_back(r);
  }
  return rec;
}

struct D3Result {
  double max_re = -std::numeric_limits<double>::infinity();
  double fitted_c = std::numeric_limits<double>::infinity();
  double im_bound = 0;  // C in |Im lambda| <= C |xi|
  Vec worst_xi;
  cplx worst_root;
  double max_residual = 0;
  int samples = 0;
};

inline D3Result check_D3(const ModelDef& m, const Vec& u, const std::vector<Vec>& xis, int jobs = 1) {
  std::vector<DispersionRoots> roots(xis.size());
  parallel_for(static_cast<int>(xis.size()), jobs, [&](int i) {
    if (xis[i].norm() == 0.0) fail(ErrorKind::PreconditionError, "wavenumber grid must exclude 0");
    roots[i] = dispersion_roots(m, u, xis[i]);
  });
  D3Result out;
  for (size_t i = 0; i < xis.size(); ++i) {
    const double r = xis[i].norm();
    for (size_t k = 0; k < roots[i].roots.size(); ++k) {
      cplx l = roots[i].roots[k];
      double c = -l.real() / kappa(r);
      if (c < out.fitted_c) {
        out.fitted_c = c;
        out.worst_xi = xis[i];
        out.worst_root = l;
      }
      out.max_re = std::max(out.max_re, l.real());
      out.im_bound = std::max(out.im_bound, std::abs(l.imag()) / r);
      out.max_residual = std::max(out.max_residual, roots[i].residuals[k]);
    }
  }
  out.samples = static_cast<int>(xis.size());
  return out;
}

// Fast modes at xi = 0: spec(-A^{-1} A0).
inline std::vector<cplx> fast_modes(const ModelDef& m, const Vec& u) {
  auto s = assemble_symbols(m, u, Vec::Zero(m.d));
  CVec ev = eigenvalues(to_complex(-s.acal.inverse() * s.a0));
  std::vector<cplx> out(ev.data(), ev.data() + ev.size());
  std::sort(out.begin(), out.end(), complex_order);
  return out;
}

struct ExpansionBranch {
  std::string kind;      // "fast", "slow", "large"
  cplx leading;          // lambda_0, i lambda_1 or i mu_1
  cplx predicted;        // lambda_2 or mu_2 (fast: lambda_0)
  cplx fitted;           // coefficient recovered from the roots
  double order = 0;      // fitted error order (fast/slow in rho, large in 1/rho)
  double nominal = 0;
  bool exact = false;    // errors at rounding level over the whole list
  bool pass = false;
};

struct ExpansionReport {
  Vec omega;
  std::vector<ExpansionBranch> branches;
  bool pass = true;
};

namespace detail {

inline double fitted_order(const std::vector<double>& rho, const std::vector<double>& err,
                           const std::vector<double>& floor, bool inverse, bool* exact) {
  std::vector<double> x, y;
  for (size_t i = 0; i < rho.size(); ++i)
    if (err[i] > floor[i]) {
      x.push_back(std::log(rho[i]));
      y.push_back(std::log(err[i]));
    }
  if (x.size() < 2) {
    *exact = true;
    return std::numeric_limits<double>::infinity();
  }
  *exact = false;
  double slope = fit_slope(x, y);
  return inverse ? -slope : slope;
}

// Greedy nearest assignment of predictions to roots; throws when the choice is ambiguous.
inline std::vector<int> assign(const std::vector<cplx>& pred, const std::vector<cplx>& roots) {
  std::vector<int> out(pred.size(), -1);
  std::vector<bool> used(roots.size(), false);
  for (size_t p = 0; p < pred.size(); ++p) {
    int best = -1;
    double bd = 1e300, second = 1e300;
    for (size_t r = 0; r < roots.size(); ++r) {
      if (used[r]) continue;
      double dist = std::abs(pred[p] - roots[r]);
      if (dist < bd) {
        second = bd;
        bd = dist;
        best = static_cast<int>(r);
      } else {
        second = std::min(second, dist);
      }
    }
    if (best < 0) fail(ErrorKind::BranchMatchError, "more predictions than roots");
    // equal predictions (multiple eigenvalues) legitimately tie; distinct ones must separate
    bool tie_ok = false;
    for (size_t q = 0; q < pred.size(); ++q)
      if (q != p && std::abs(pred[q] - pred[p]) <= 1e-10 * std::max(1.0, std::abs(pred[p]))) tie_ok = true;
    if (!tie_ok && second < 1e300 && second < 2.0 * bd && bd > 1e-12)
      fail(ErrorKind::BranchMatchError, "root-to-branch assignment is ambiguous");
    used[best] = true;
    out[p] = best;
  }
  return out;
}

}  // namespace detail

inline ExpansionReport verify_expansions(const ModelDef& m, const Vec& u, const Vec& omega,
                                         const std::vector<double>& rho_list, const DissipativityTolerances& tol = {}) {
  ExpansionReport rep;
  rep.omega = omega;
  std::vector<double> small, large;
  for (double r : rho_list) {
    if (r <= 1e-1) small.push_back(r);
    if (r >= 1e1) large.push_back(r);
  }
  if (small.size() < 2 || large.size() < 2)
    fail(ErrorKind::PreconditionError, "rho list must contain at least two values <= 1e-1 and two >= 1e1");
  const int n = m.n;
  auto d1 = check_D1(m, u, omega, tol);
  auto d2 = check_D2(m, u, omega, tol);
  auto fast = fast_modes(m, u);

  // small rho: slow predictions i lambda_1 rho + lambda_2 rho^2, fast predictions lambda_0
  std::vector<cplx> slow_l1, slow_l2;
  for (const auto& g : d1.groups)
    for (auto l2 : g.eigenvalues) {
      slow_l1.push_back(-g.mu);
      slow_l2.push_back(l2);
    }
  const size_t ns = slow_l1.size(), nf = fast.size();
  std::vector<std::vector<double>> err(ns + nf), floor(ns + nf);
  std::vector<cplx> fitted(ns + nf);
  for (double r : small) {
    auto roots = dispersion_roots(m, u, r * omega).roots;
    std::vector<cplx> pred;
    for (size_t k = 0; k < ns; ++k) pred.push_back(kI * slow_l1[k] * r + slow_l2[k] * r * r);
    for (auto f : fast) pred.push_back(f);
    auto a = detail::assign(pred, roots);
    for (size_t k = 0; k < pred.size(); ++k) {
      cplx l = roots[a[k]];
      err[k].push_back(std::abs(l - pred[k]));
      floor[k].push_back(1e-13 * std::max(1.0, std::abs(l)));
      if (r == small.front()) fitted[k] = k < ns ? (l - kI * slow_l1[k] * r) / (r * r) : l;
    }
  }
  for (size_t k = 0; k < ns + nf; ++k) {
    ExpansionBranch b;
    b.kind = k < ns ? "slow" : "fast";
    b.leading = k < ns ? kI * slow_l1[k] : fast[k - ns];
    b.predicted = k < ns ? slow_l2[k] : fast[k - ns];
    b.fitted = fitted[k];
    b.nominal = k < ns ? 3.0 : 1.0;
    b.order = detail::fitted_order(small, err[k], floor[k], false, &b.exact);
    b.pass = b.exact || b.order >= 0.9 * b.nominal;
    rep.pass = rep.pass && b.pass;
    rep.branches.push_back(b);
  }

  // large rho: i mu_1 rho + mu_2
  std::vector<cplx> mu1, mu2;
  for (const auto& g : d2.groups)
    for (auto m2 : g.eigenvalues) {
      mu1.push_back(g.mu);
      mu2.push_back(m2);
    }
  std::vector<std::vector<double>> lerr(mu1.size()), lfloor(mu1.size());
  std::vector<cplx> lfit(mu1.size());
  for (double r : large) {
    auto roots = dispersion_roots(m, u, r * omega).roots;
    std::vector<cplx> pred;
    for (size_t k = 0; k < mu1.size(); ++k) pred.push_back(kI * mu1[k] * r + mu2[k]);
    auto a = detail::assign(pred, roots);
    for (size_t k = 0; k < pred.size(); ++k) {
      cplx l = roots[a[k]];
      lerr[k].push_back(std::abs(l - pred[k]));
      lfloor[k].push_back(1e-13 * std::max(1.0, std::abs(l)));
      if (r == large.back()) lfit[k] = l - kI * mu1[k] * r;
    }
  }
  for (size_t k = 0; k < mu1.size(); ++k) {
    ExpansionBranch b;
    b.kind = "large";
    b.leading = kI * mu1[k];
    b.predicted = mu2[k];
    b.fitted = lfit[k];
    b.nominal = 1.0;
    b.order = detail::fitted_order(large, lerr[k], lfloor[k], true, &b.exact);
    b.pass = b.exact || b.order >= 0.9 * b.nominal;
    rep.pass = rep.pass && b.pass;
    rep.branches.push_back(b);
  }
  (void)n;
  return rep;
}

struct StabilityGrids {
  int directions = 64;
  WavenumberGrid xi;
  int jobs = 1;
};

struct StateStability {
  Vec u;
  HyperbolicityReport hyperbolicity;
  Verdict d1, d2, d3, fast;
  D3Result d3_data;
  std::vector<RestrictionRecord> d1_records, d2_records;
  bool stable = false;
  double min_margin = 0;
  std::vector<std::string> failing;

  json to_json(bool detailed = true) const {
    json j;
    j["state"] = vec_json(u);
    j["stable"] = stable;
    j["min_margin"] = min_margin;
    j["failing"] = failing;
    json v = json::array();
    for (const Verdict* p : {&hyperbolicity.ha, &hyperbolicity.hb, &d1, &d2, &d3, &fast}) v.push_back(p->to_json());
    j["verdicts"] = v;
    if (detailed) {
      j["d3"] = {{"max_re", d3_data.max_re},
                 {"fitted_c", d3_data.fitted_c},
                 {"im_bound_C", d3_data.im_bound},
                 {"max_root_residual", d3_data.max_residual},
                 {"samples", d3_data.samples}};
      j["multiplicities_constant"] = hyperbolicity.constant_multiplicities();
    }
    return j;
  }
};

inline StateStability check_state_stability(const ModelDef& m, const Vec& u, const StabilityGrids& grids = {},
                                            const DissipativityTolerances& tol = {}) {
  StateStability out;
  out.u = u;
  auto omegas = direction_grid(m.d, grids.directions);
  std::ostringstream og;
  og << omegas.size() << " directions";
  out.hyperbolicity = check_hyperbolicity(m, u, omegas, tol);

  auto restriction_verdict = [&](const std::string& name, bool d1, std::vector<RestrictionRecord>& recs) {
    double worst = -std::numeric_limits<double>::infinity();
    double worst_herm = -std::numeric_limits<double>::infinity();
    json wit = json::array();
    std::string note;
    try {
      recs.resize(omegas.size());
      parallel_for(static_cast<int>(omegas.size()), grids.jobs, [&](int i) {
        recs[i] = d1 ? check_D1(m, u, omegas[i], tol) : check_D2(m, u, omegas[i], tol);
      });
      for (const auto& r : recs) {
        if (r.spectral > worst) {
          worst = r.spectral;
          wit = json::array({{{"omega", vec_json(r.omega)}, {"max_re_spec", r.spectral}}});
        }
        worst_herm = std::max(worst_herm, r.hermitian);
      }
    } catch (const Error& e) {
      note = e.what();
      worst = std::numeric_limits<double>::infinity();
      recs.clear();
    }
    Verdict v = make_verdict(name, -worst, tol.margin, og.str());
    v.witnesses = wit;
    if (note.empty()) {
      std::ostringstream os;
      os << "margin = -max Re spec of eigenspace restrictions; max Hermitian part eigenvalue (orthonormal basis) = "
         << worst_herm;
      note = os.str();
    }
    v.note = note;
    return v;
  };
  out.d1 = restriction_verdict("D1", true, out.d1_records);
  out.d2 = restriction_verdict("D2", false, out.d2_records);

  auto xis = grids.xi.points(m.d);
  out.d3_data = check_D3(m, u, xis, grids.jobs);
  out.d3 = make_verdict("D3", out.d3_data.fitted_c, tol.margin, grids.xi.describe(m.d));
  out.d3.witnesses = json::array({{{"xi", vec_json(out.d3_data.worst_xi)},
                                   {"root", cplx_json(out.d3_data.worst_root)},
                                   {"max_re", out.d3_data.max_re}}});
  std::ostringstream d3n;
  d3n << "margin = largest c with Re lambda <= -c kappa(|xi|); |Im lambda| <= C|xi| with C = " << out.d3_data.im_bound;
  out.d3.note = d3n.str();

  auto fm = fast_modes(m, u);
  double fmax = -std::numeric_limits<double>::infinity();
  for (auto z : fm) fmax = std::max(fmax, z.real());
  out.fast = make_verdict("fast_modes", -fmax, tol.margin, "xi = 0");
  out.fast.note = "margin = -max Re spec(-A^{-1} A0)";

  out.stable = true;
  out.min_margin = std::numeric_limits<double>::infinity();
  for (const Verdict* p : {&out.hyperbolicity.ha, &out.hyperbolicity.hb, &out.d1, &out.d2, &out.d3, &out.fast}) {
    if (!p->pass) {
      out.stable = false;
      out.failing.push_back(p->condition);
    }
    if (p->condition != "H_A" && p->condition != "H_B") out.min_margin = std::min(out.min_margin, p->margin);
  }
  return out;
}

struct AlongProfileReport {
  std::vector<double> x;
  std::vector<bool> stable;
  std::vector<double> margin;
  double worst_margin = std::numeric_limits<double>::infinity();
  double worst_x = 0;
  bool all_stable = true;
  std::string grid;
};

inline AlongProfileReport check_along_states(const ModelDef& m, const std::vector<double>& x,
                                             const std::vector<Vec>& states, const StabilityGrids& grids,
                                             const DissipativityTolerances& tol = {}) {
  AlongProfileReport rep;
  rep.grid = grids.xi.describe(m.d);
  for (size_t i = 0; i < states.size(); ++i) {
    auto s = check_state_stability(m, states[i], grids, tol);
    rep.x.push_back(x[i]);
    rep.stable.push_back(s.stable);
    rep.margin.push_back(s.min_margin);
    rep.all_stable = rep.all_stable && s.stable;
    if (s.min_margin < rep.worst_margin) {
      rep.worst_margin = s.min_margin;
      rep.worst_x = x[i];
    }
  }
  return rep;
}

}  // namespace hhshock
