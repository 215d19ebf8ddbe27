#pragma once

#include "hhshock/profile.hpp"

#include <fstream>
#include <numeric>

namespace hhshock {

// zeta = (lambda, eta) with lambda = gamma + i tau.
struct Frequency {
  cplx lambda{0.0, 0.0};
  Vec eta;  // size d - 1

  Frequency() = default;
  Frequency(cplx l, Vec e) : lambda(l), eta(std::move(e)) {}

  double gamma() const { return lambda.real(); }
  double tau() const { return lambda.imag(); }
  double rho() const { return std::sqrt(std::norm(lambda) + eta.squaredNorm()); }
  double transverse() const { return std::sqrt(tau() * tau() + eta.squaredNorm()); }  // |(eta, tau)|
  Frequency scaled(double r) const { return {lambda * r, eta * r}; }
  Frequency direction() const {
    double r = rho();
    if (r == 0.0) fail(ErrorKind::PreconditionError, "zeta = 0 has no direction");
    return scaled(1.0 / r);
  }
  bool in_Mc(double c, double slack = 1e-12) const {
    return rho() > 0.0 && gamma() >= -c * kappa(transverse()) - slack;
  }
  json to_json() const { return {{"lambda", cplx_json(lambda)}, {"eta", vec_json(eta)}}; }
};

inline Frequency lerp(const Frequency& a, const Frequency& b, double t) {
  return {a.lambda + t * (b.lambda - a.lambda), a.eta + t * (b.eta - a.eta)};
}

inline double distance(const Frequency& a, const Frequency& b) {
  return std::sqrt(std::norm(a.lambda - b.lambda) + (a.eta - b.eta).squaredNorm());
}

// Coefficient matrices at a state, with the profile corrections contracted against du.
struct PointCoeffs {
  Vec u, du;
  Mat acal, a0t, b11inv;
  std::vector<Mat> at;              // A tilde^j
  std::vector<std::vector<Mat>> b;  // B^{jk}
  std::vector<Mat> c;               // C^j = C0^j + C1^j
};

inline PointCoeffs point_coeffs(const ModelDef& m, const Vec& u, const Vec& du) {
  auto dm = derivative_matrices(m, u);
  const int n = m.n, d = m.d;
  PointCoeffs pc;
  pc.u = u;
  pc.du = du;
  pc.acal = m.coef_a(u);
  pc.a0t = dm.a0;
  pc.at = dm.a;
  pc.b.assign(d, std::vector<Mat>(d));
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) pc.b[j][k] = m.coef_b(u, j, k);
  for (int j = 0; j < d; ++j) pc.c.push_back(coef_c(m, u, j));
  Eigen::PartialPivLU<Mat> lu(pc.b[0][0]);
  double rc = n ? std::abs(lu.determinant()) / std::pow(scale_of(pc.b[0][0]), n) : 1.0;
  if (!(rc > 1e-14)) fail(ErrorKind::SingularB11, "B11 is singular along the profile");
  pc.b11inv = lu.inverse();

  if (!m.constant_coefficients && du.norm() > 0.0) {
    // A0~_lm += d_q(C1^1)_lm du^q - d_m(C1^1)_lq du^q ;  A~^j_lm -= d_m(B^{1j})_lq du^q
    MatFn c11 = [&](const Vec& v) { return m.coef_c1(v, 0); };
    pc.a0t += fd_directional(c11, u, du);
    for (int mm = 0; mm < n; ++mm) {
      pc.a0t.col(mm) -= fd_partial(c11, u, mm) * du;
      for (int j = 0; j < d; ++j) {
        MatFn b1j = [&, j](const Vec& v) { return m.coef_b(v, 0, j); };
        pc.at[j].col(mm) -= fd_partial(b1j, u, mm) * du;
      }
    }
  }
  return pc;
}

struct ZetaBlocks {
  CMat S, s, b21;
};

// S = i B12 + lambda C^1 - A~^1,  s = lambda^2 A - i lambda C2 + B22 + lambda A0~ + i A~2
inline ZetaBlocks zeta_blocks(const PointCoeffs& pc, const Frequency& z) {
  const int n = static_cast<int>(pc.acal.rows());
  const int d = static_cast<int>(pc.at.size());
  if (z.eta.size() != d - 1) fail(ErrorKind::DomainError, "eta dimension does not match the model");
  Mat b12 = Mat::Zero(n, n), b21 = b12, b22 = b12, c2 = b12, a2 = b12;
  for (int j = 1; j < d; ++j) {
    double e = z.eta(j - 1);
    b12 += e * pc.b[j][0];
    b21 += e * pc.b[0][j];
    c2 += e * pc.c[j];
    a2 += e * pc.at[j];
    for (int k = 1; k < d; ++k) b22 += e * z.eta(k - 1) * pc.b[j][k];
  }
  const cplx l = z.lambda;
  ZetaBlocks zb;
  zb.S = kI * to_complex(b12) + l * to_complex(pc.c[0]) - to_complex(pc.at[0]);
  zb.s = l * l * to_complex(pc.acal) - kI * l * to_complex(c2) + to_complex(b22) + l * to_complex(pc.a0t) +
         kI * to_complex(a2);
  zb.b21 = to_complex(b21);
  return zb;
}

// Flux: (u, B11 u' + S u). Derivative: (u, B11 u'). The two differ by the unimodular
// change [[I, 0], [S, I]], so determinants of the same solutions at x = 0 agree.
enum class OdeVariables { Flux, Derivative };

inline CMat assemble_G(const PointCoeffs& pc, const ZetaBlocks& zb, OdeVariables vars, const CMat* s_x = nullptr) {
  const int n = static_cast<int>(pc.acal.rows());
  CMat binv = to_complex(pc.b11inv);
  CMat g(2 * n, 2 * n);
  if (vars == OdeVariables::Flux) {
    CMat bs = binv * zb.S;
    g.topLeftCorner(n, n) = -bs;
    g.topRightCorner(n, n) = binv;
    g.bottomLeftCorner(n, n) = zb.s + kI * zb.b21 * bs;
    g.bottomRightCorner(n, n) = -kI * zb.b21 * binv;
  } else {
    g.topLeftCorner(n, n).setZero();
    g.topRightCorner(n, n) = binv;
    g.bottomLeftCorner(n, n) = s_x ? CMat(zb.s - *s_x) : zb.s;
    g.bottomRightCorner(n, n) = -(zb.S + kI * zb.b21) * binv;
  }
  return g;
}

inline CMat endstate_matrix(const ModelDef& m, const Vec& u, const Frequency& z,
                            OdeVariables vars = OdeVariables::Derivative) {
  auto pc = point_coeffs(m, u, Vec::Zero(m.n));
  return assemble_G(pc, zeta_blocks(pc, z), vars);
}

struct LinearizedCoeffs {
  double x = 0;
  Vec u, du;
  Mat a0_tilde;
  std::vector<Mat> a_tilde;
  CMat S, s, G;
};

namespace detail {

inline PointCoeffs profile_coeffs(const ModelDef& m, const Profile& p, double x) {
  return point_coeffs(m, p.value_at(x), p.derivative_at(x));
}

inline CMat profile_S_x(const ModelDef& m, const Profile& p, double x, const Frequency& z) {
  double h = std::min(1e-4, 0.25 * p.h);
  double lo = std::max(x - h, p.x.front()), hi = std::min(x + h, p.x.back());
  return (zeta_blocks(profile_coeffs(m, p, hi), z).S - zeta_blocks(profile_coeffs(m, p, lo), z).S) / (hi - lo);
}

}  // namespace detail

inline LinearizedCoeffs linearized_coeffs(const ModelDef& m, const Profile& p, double x, const Frequency& z,
                                          OdeVariables vars = OdeVariables::Derivative) {
  auto pc = detail::profile_coeffs(m, p, x);
  auto zb = zeta_blocks(pc, z);
  LinearizedCoeffs lc;
  lc.x = x;
  lc.u = pc.u;
  lc.du = pc.du;
  lc.a0_tilde = pc.a0t;
  lc.a_tilde = pc.at;
  lc.S = zb.S;
  lc.s = zb.s;
  if (vars == OdeVariables::Derivative) {
    CMat sx = detail::profile_S_x(m, p, x, z);
    lc.G = assemble_G(pc, zb, vars, &sx);
  } else {
    lc.G = assemble_G(pc, zb, vars);
  }
  return lc;
}

inline CMat ode_matrix(const ModelDef& m, const Profile& p, double x, const Frequency& z,
                       OdeVariables vars = OdeVariables::Derivative) {
  return linearized_coeffs(m, p, x, z, vars).G;
}

// max |V' - G(x, 0) V| for the translation mode V = (u', 0) in flux variables.
inline double translation_mode_residual(const ModelDef& m, const Profile& p, const std::vector<double>& xs) {
  const int n = p.n;
  const Frequency zero(0.0, Vec::Zero(p.d - 1));
  const double h = 1e-3;
  double worst = 0;
  for (double x : xs) {
    Vec d2 = (-p.derivative_at(x + 2 * h) + 8 * p.derivative_at(x + h) - 8 * p.derivative_at(x - h) +
              p.derivative_at(x - 2 * h)) /
             (12 * h);
    CVec v = CVec::Zero(2 * n), dv = CVec::Zero(2 * n);
    v.head(n) = p.derivative_at(x).cast<cplx>();
    dv.head(n) = d2.cast<cplx>();
    CMat g = ode_matrix(m, p, x, zero, OdeVariables::Flux);
    worst = std::max(worst, (dv - g * v).cwiseAbs().maxCoeff());
  }
  return worst;
}

// Slow-mode data at an endstate. K solves the right-solvent expansion of
//   rho [k^2 B11 + k (i Bhat + lhat C1) + B'] - k A1 - (lhat A0 + i A2) = 0,
// so the slow eigenvalues of G(rho zeta_hat) are rho spec(K0 + rho K1) + O(rho^3).
// H = side * A0^{1/2} K A0^{-1/2}, the folded normalized form (side = -1 on the minus side).
struct SlowModeData {
  Frequency zeta_hat;
  int side = 1;
  CMat K0, K1, H0, H1;
  std::vector<cplx> mu1;  // spec(H0)
};

inline SlowModeData slow_mode_data(const ModelDef& m, const Vec& u, const Frequency& zh, int side = 1) {
  auto pc = point_coeffs(m, u, Vec::Zero(m.n));
  const int n = m.n, d = m.d;
  if (zh.eta.size() != d - 1) fail(ErrorKind::DomainError, "eta dimension does not match the model");
  Eigen::PartialPivLU<Mat> lu(pc.at[0]);
  if (!(std::abs(lu.determinant()) > 1e-12 * std::pow(scale_of(pc.at[0]), n)))
    fail(ErrorKind::SingularA, "A1 is singular at the endstate; slow modes are not defined");
  CMat a1inv = to_complex(Mat(lu.inverse()));
  Mat bhat = Mat::Zero(n, n), c2 = bhat, b22 = bhat, a2 = bhat;
  for (int j = 1; j < d; ++j) {
    double e = zh.eta(j - 1);
    bhat += e * (pc.b[j][0] + pc.b[0][j]);
    c2 += e * pc.c[j];
    a2 += e * pc.at[j];
    for (int k = 1; k < d; ++k) b22 += e * zh.eta(k - 1) * pc.b[j][k];
  }
  const cplx l = zh.lambda;
  CMat bprime = -(l * l * to_complex(pc.acal) - kI * l * to_complex(c2) + to_complex(b22));
  CMat mid = kI * to_complex(bhat) + l * to_complex(pc.c[0]);
  SlowModeData out;
  out.zeta_hat = zh;
  out.side = side;
  out.K0 = -a1inv * (l * to_complex(pc.a0t) + kI * to_complex(a2));
  out.K1 = a1inv * (to_complex(pc.b[0][0]) * out.K0 * out.K0 + mid * out.K0 + bprime);
  CMat w = to_complex(spd_sqrt(pc.a0t)), wi = to_complex(spd_inverse_sqrt(pc.a0t));
  out.H0 = double(side) * (w * out.K0 * wi);
  out.H1 = double(side) * (w * out.K1 * wi);
  CVec ev = eigenvalues(out.H0);
  out.mu1.assign(ev.data(), ev.data() + n);
  std::sort(out.mu1.begin(), out.mu1.end(), complex_order);
  return out;
}

struct SplittingData {
  int side = 1;
  CMat G;
  std::vector<cplx> eigenvalues;  // sorted
  int N = 0, M = 0;               // stable, unstable counts
  CMat stable, unstable;          // orthonormal frames
  double margin = 0;              // min |Re mu|
  bool has_slow = false;
  SlowModeData slow;
};

inline SplittingData limit_splitting(const ModelDef& m, const Vec& u, const Frequency& z, int side = 1,
                                     double c = 0.0, OdeVariables vars = OdeVariables::Derivative) {
  if (z.rho() == 0.0) fail(ErrorKind::PreconditionError, "zeta = 0 is excluded");
  if (c > 0.0 && !z.in_Mc(c)) fail(ErrorKind::PreconditionError, "zeta lies outside M_c");
  SplittingData sd;
  sd.side = side;
  sd.G = endstate_matrix(m, u, z, vars);
  const int nn = static_cast<int>(sd.G.rows());
  CVec ev = eigenvalues(sd.G);
  sd.eigenvalues.assign(ev.data(), ev.data() + nn);
  std::sort(sd.eigenvalues.begin(), sd.eigenvalues.end(), complex_order);
  sd.margin = std::numeric_limits<double>::infinity();
  cplx worst = 0;
  for (auto mu : sd.eigenvalues) {
    if (std::abs(mu.real()) < sd.margin) worst = mu;
    sd.margin = std::min(sd.margin, std::abs(mu.real()));
    (mu.real() < 0 ? sd.N : sd.M)++;
  }
  if (sd.margin <= 1e-10 * scale_of(sd.G)) {
    std::ostringstream os;
    os << "G has eigenvalue " << worst.real() << (worst.imag() < 0 ? "" : "+") << worst.imag()
       << "i on the imaginary axis at lambda=" << z.lambda;
    fail(ErrorKind::ImaginaryAxisEigenvalue, os.str());
  }
  CMat sg = matrix_sign(sd.G);
  CMat id = CMat::Identity(nn, nn);
  sd.stable = orthonormal_range(0.5 * (id - sg), sd.N);
  sd.unstable = orthonormal_range(0.5 * (id + sg), sd.M);
  if (z.rho() <= 0.1) {
    try {
      sd.slow = slow_mode_data(m, u, z.direction(), side);
      sd.has_slow = true;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularA) throw;
    }
  }
  return sd;
}

struct SlowBranch {
  cplx mu1;                 // eigenvalue of H0
  std::vector<double> err;  // |slow eigenvalue - rho spec(H0 + rho H1)| per rho
  double order = 0;
  bool exact = false;
};

struct SlowExpansionReport {
  Frequency zeta_hat;
  std::vector<double> rho;
  std::vector<SlowBranch> branches;
  double min_order = std::numeric_limits<double>::infinity();
};

// Slow eigenvalues of side*G(rho zeta_hat) against rho spec(H0 + rho H1).
inline SlowExpansionReport slow_mode_expansion_check(const ModelDef& m, const Vec& u, int side, const Frequency& zh,
                                                     const std::vector<double>& rho_list) {
  SlowExpansionReport rep;
  rep.zeta_hat = zh;
  rep.rho = rho_list;
  auto sd = slow_mode_data(m, u, zh, side);
  const int n = m.n;
  rep.branches.resize(n);
  for (int k = 0; k < n; ++k) rep.branches[k].mu1 = sd.mu1[k];
  std::vector<double> floor(rho_list.size());
  for (auto& b : rep.branches) b.err.assign(rho_list.size(), 0.0);
  // follow each branch of spec(H0 + rho H1) from mu1 in increasing rho
  std::vector<size_t> order(rho_list.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return rho_list[a] < rho_list[b]; });
  std::vector<cplx> track = sd.mu1;
  for (size_t i : order) {
    const double r = rho_list[i];
    CMat g = double(side) * endstate_matrix(m, u, zh.scaled(r));
    CVec ev = eigenvalues(g);
    std::vector<cplx> all(ev.data(), ev.data() + ev.size());
    std::sort(all.begin(), all.end(), [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
    std::vector<cplx> slow(all.begin(), all.begin() + n);
    CVec pe = eigenvalues(CMat(sd.H0 + r * sd.H1));
    std::vector<cplx> pred(pe.data(), pe.data() + n);
    auto to_track = detail::assign(track, pred);
    std::vector<cplx> scaled(n);
    for (int k = 0; k < n; ++k) {
      track[k] = pred[to_track[k]];
      scaled[k] = r * track[k];
    }
    auto idx = detail::assign(scaled, slow);
    for (int k = 0; k < n; ++k) rep.branches[k].err[i] = std::abs(slow[idx[k]] - scaled[k]);
    floor[i] = 1e-13 * scale_of(g);
  }
  for (auto& b : rep.branches) {
    b.order = detail::fitted_order(rho_list, b.err, floor, false, &b.exact);
    rep.min_order = std::min(rep.min_order, b.order);
  }
  return rep;
}

struct GlancingPoint {
  double xi1 = 0;
  Vec xi;
  int multiplicity = 1;
  CMat Q;                   // L Acheck^1 H1 R (unsigned form)
  double spectral = 0;      // max Re spec(Q)
  double margin = 0;        // -spectral / |xi|
  double d1_residual = 0;   // |Q - |xi|^2 M_D1(xi/|xi|)|
};

struct GlancingReport {
  double tau = 0;
  Vec eta;
  std::vector<GlancingPoint> points;
  double margin = std::numeric_limits<double>::infinity();
};

// At a glancing frequency (lambda = i tau, eta) the slow matrix has an imaginary eigenvalue i xi1
// and -tau is an eigenvalue of Acheck(xi1, eta). The first-order correction restricted to that
// eigenspace must have negative real spectrum of size |xi|.
inline GlancingReport glancing_sign_check(const ModelDef& m, const Vec& u, double tau, const Vec& eta) {
  if (eta.size() != m.d - 1) fail(ErrorKind::DomainError, "eta dimension does not match the model");
  if (tau == 0.0 && eta.norm() == 0.0) fail(ErrorKind::PreconditionError, "(tau, eta) = 0 is excluded");
  GlancingReport rep;
  rep.tau = tau;
  rep.eta = eta;
  auto sd = slow_mode_data(m, u, Frequency(cplx(0.0, tau), eta), 1);
  const int n = m.n;
  // unsigned normalized slow matrices
  CMat h0 = sd.H0, h1 = sd.H1;
  CVec ev = eigenvalues(h0);
  const double sc = scale_of(h0);
  std::vector<double> xi1s;
  for (int k = 0; k < n; ++k)
    if (std::abs(ev(k).real()) <= 1e-9 * sc) {
      double v = ev(k).imag();
      bool dup = false;
      for (double w : xi1s)
        if (std::abs(w - v) <= 1e-8 * sc) dup = true;
      if (!dup) xi1s.push_back(v);
    }
  if (xi1s.empty()) fail(ErrorKind::NoImaginaryEigenvalue, "slow matrix has no imaginary eigenvalue");
  std::sort(xi1s.begin(), xi1s.end());

  auto pc = point_coeffs(m, u, Vec::Zero(n));
  Mat w = spd_inverse_sqrt(pc.a0t);
  CMat a1c = to_complex(Mat(w * pc.at[0] * w));
  for (double xi1 : xi1s) {
    GlancingPoint gp;
    gp.xi1 = xi1;
    gp.xi = Vec(m.d);
    gp.xi(0) = xi1;
    gp.xi.tail(m.d - 1) = eta;
    const double r = gp.xi.norm();
    auto s = assemble_symbols(m, u, gp.xi);
    Mat ach = normalized_symbol(s);
    auto groups = eigen_groups(to_complex(ach));
    const EigenGroup* g = nullptr;
    for (const auto& cand : groups)
      if (std::abs(cand.value + tau) <= 1e-7 * std::max(1.0, std::abs(tau))) g = &cand;
    if (!g) fail(ErrorKind::EigenspaceClusterError, "-tau is not an eigenvalue of the normalized symbol");
    gp.multiplicity = g->multiplicity;
    gp.Q = g->left * a1c * h1 * g->right;
    CVec qe = eigenvalues(gp.Q);
    gp.spectral = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < qe.size(); ++k) gp.spectral = std::max(gp.spectral, qe(k).real());
    gp.margin = -gp.spectral / r;
    auto su = assemble_symbols(m, u, gp.xi / r);
    CMat d1 = d1_restriction(su, w, g->value / r, g->right, g->left);
    gp.d1_residual = (gp.Q - r * r * d1).cwiseAbs().maxCoeff();
    rep.margin = std::min(rep.margin, gp.margin);
    rep.points.push_back(std::move(gp));
  }
  return rep;
}

// M_c parameter from the endstate dispersion bounds Re lambda <= -c3 kappa(|xi|), |Im lambda| <= C |xi|:
// an imaginary eigenvalue of G at (lambda, eta) gives a root at (xi1, eta) with |(eta, tau)|^2 <= (1 + C^2)|xi|^2,
// so c = c3 / (2 (1 + C^2)) keeps M_c free of such roots.
inline double mc_parameter(const ModelDef& m, const Vec& u_minus, const Vec& u_plus, const std::vector<Vec>& xis,
                           int jobs = 1) {
  double c = std::numeric_limits<double>::infinity();
  for (const Vec* u : {&u_minus, &u_plus}) {
    auto r = check_D3(m, *u, xis, jobs);
    c = std::min(c, r.fitted_c / (2.0 * (1.0 + r.im_bound * r.im_bound)));
  }
  return c;
}

struct EvansOptions {
  double L_int = 0;  // 0: profile half-width
  OdeVariables variables = OdeVariables::Flux;
  double rtol = 1e-10;
  double atol = 1e-12;
  double transport_tol = 0.1;  // max Frobenius change of a projector per transport step
  double base_gamma = 1.0;
  double c = 0;       // M_c parameter; paths are checked against M_c when positive
  double chunk = 0;   // re-orthonormalization length; 0 picks it from the endstate spectra
  int jobs = 1;
};

struct Frames {
  CMat plus, minus;  // stable frame of G+ (N columns), unstable frame of G- (M columns)
};

class EvansFunction {
 public:
  EvansFunction(const ModelDef& m, const Profile& p, EvansOptions opt = {})
      : m_(m), p_(p), opt_(opt), pc_plus_(point_coeffs(m, p.u_plus, Vec::Zero(m.n))),
        pc_minus_(point_coeffs(m, p.u_minus, Vec::Zero(m.n))) {
    if (m.d != p.d || m.n != p.n) fail(ErrorKind::DomainError, "profile does not match the model");
    if (opt_.L_int <= 0.0) opt_.L_int = p.L;
    if (opt_.L_int > p.L * (1 + 1e-12)) fail(ErrorKind::PreconditionError, "L_int exceeds the profile window");
  }

  const EvansOptions& options() const { return opt_; }
  const ModelDef& model() const { return m_; }
  const Profile& profile() const { return p_; }
  double L_int() const { return opt_.L_int; }

  CMat G(double x, const Frequency& z) const {
    auto pc = detail::profile_coeffs(m_, p_, x);
    auto zb = zeta_blocks(pc, z);
    if (opt_.variables == OdeVariables::Derivative) {
      CMat sx = detail::profile_S_x(m_, p_, x, z);
      return assemble_G(pc, zb, opt_.variables, &sx);
    }
    return assemble_G(pc, zb, opt_.variables);
  }
  CMat G_plus(const Frequency& z) const { return assemble_G(pc_plus_, zeta_blocks(pc_plus_, z), opt_.variables); }
  CMat G_minus(const Frequency& z) const { return assemble_G(pc_minus_, zeta_blocks(pc_minus_, z), opt_.variables); }

  struct Projectors {
    CMat plus, minus;  // stable of G+, unstable of G-
    int N = 0;
  };

  Projectors projectors(const Frequency& z) const {
    if (z.rho() == 0.0) fail(ErrorKind::PreconditionError, "zeta = 0 is excluded");
    Projectors pr;
    int counts[2];
    const CMat* mats[2];
    CMat gp = G_plus(z), gm = G_minus(z);
    mats[0] = &gp;
    mats[1] = &gm;
    for (int s = 0; s < 2; ++s) {
      const CMat& g = *mats[s];
      CVec ev = eigenvalues(g);
      int stable = 0;
      for (int k = 0; k < ev.size(); ++k) {
        if (std::abs(ev(k).real()) <= 1e-10 * scale_of(g)) {
          std::ostringstream os;
          os << "G" << (s ? "-" : "+") << " has an imaginary-axis eigenvalue " << ev(k) << " at lambda=" << z.lambda;
          fail(ErrorKind::ImaginaryAxisEigenvalue, os.str());
        }
        if (ev(k).real() < 0) ++stable;
      }
      counts[s] = stable;
      CMat sg = matrix_sign(g);
      CMat id = CMat::Identity(g.rows(), g.cols());
      (s ? pr.minus : pr.plus) = s ? CMat(0.5 * (id + sg)) : CMat(0.5 * (id - sg));
    }
    if (counts[0] != counts[1]) {
      std::ostringstream os;
      os << "stable dimensions differ: " << counts[0] << " at u+ and " << counts[1] << " at u- (lambda=" << z.lambda
         << ")";
      fail(ErrorKind::SplittingError, os.str());
    }
    pr.N = counts[0];
    return pr;
  }

  Frames base_frames(const Frequency& z) const {
    auto pr = projectors(z);
    const int nn = 2 * m_.n;
    return {orthonormal_range(pr.plus, pr.N), orthonormal_range(pr.minus, nn - pr.N)};
  }

  // Kato transport along the straight segment a -> b with Cayley steps.
  Frames transport(const Frequency& a, const Frames& fa, const Frequency& b, int* steps = nullptr) const {
    Frames f = fa;
    if (distance(a, b) == 0.0) return f;
    auto pa = projectors(a);
    double t = 0.0, dt = 1.0;
    int count = 0;
    const int nn = 2 * m_.n;
    const CMat id = CMat::Identity(nn, nn);
    while (t < 1.0) {
      double step = std::min(dt, 1.0 - t);
      Frequency zt = lerp(a, b, t + step);
      if (opt_.c > 0.0 && !zt.in_Mc(opt_.c)) fail(ErrorKind::PathError, "continuation path leaves M_c");
      auto pt = projectors(zt);
      if (pt.N != pa.N) fail(ErrorKind::SplittingError, "splitting dimension changes along the path");
      double change = std::max((pt.plus - pa.plus).norm(), (pt.minus - pa.minus).norm());
      if (change > opt_.transport_tol) {
        if (step < 1e-12) fail(ErrorKind::PathError, "projector varies too fast along the path");
        dt = 0.5 * step;
        continue;
      }
      auto step_frame = [&](const CMat& p0, const CMat& p1, const CMat& fr) {
        CMat dp = p1 - p0, pm = 0.5 * (p0 + p1);
        CMat k = dp * pm - pm * dp;
        CMat u = (id - 0.5 * k).partialPivLu().solve(id + 0.5 * k);
        return CMat(p1 * (u * fr));
      };
      f.plus = step_frame(pa.plus, pt.plus, f.plus);
      f.minus = step_frame(pa.minus, pt.minus, f.minus);
      pa = std::move(pt);
      t += step;
      ++count;
      if (change < 0.25 * opt_.transport_tol) dt = 2.0 * step;
    }
    if (steps) *steps = count;
    return f;
  }

  Frequency base_point() const { return Frequency(opt_.base_gamma, Vec::Zero(m_.d - 1)); }

  // Path: (gamma_b, 0) -> (gamma_b, eta) -> (lambda, eta).
  std::vector<Frequency> path_to(const Frequency& z) const {
    Frequency b = base_point();
    Frequency mid(cplx(opt_.base_gamma, 0.0), z.eta);
    return {b, mid, z};
  }

  Frames frames_at(const Frequency& z) const {
    auto path = path_to(z);
    Frames f = base_frames(path[0]);
    for (size_t k = 1; k < path.size(); ++k) f = transport(path[k - 1], f, path[k]);
    return f;
  }

  double chunk_length(const Frequency& z) const {
    if (opt_.chunk > 0.0) return opt_.chunk;
    double r = 0;
    for (const CMat& g : {G_plus(z), G_minus(z)}) {
      CVec ev = eigenvalues(g);
      for (int k = 0; k < ev.size(); ++k) r = std::max(r, std::abs(ev(k).real()));
    }
    return std::clamp(2.0 / std::max(r, 1e-12), 0.05, 2.0);
  }

  // Evolves the frame w from x0 to x1 with QR renormalization; returns log det of the
  // accumulated triangular factors.
  cplx propagate(CMat& w, double x0, double x1, const Frequency& z, double chunk) const {
    const int rows = static_cast<int>(w.rows()), cols = static_cast<int>(w.cols());
    const int sz = rows * cols;
    cplx logdet = 0;
    if (cols == 0) return logdet;
    ode::Rhs rhs = [&](const ode::State& y, ode::State& dy, double x) {
      Eigen::Map<const Mat> re(y.data(), rows, cols), im(y.data() + sz, rows, cols);
      CMat wc(rows, cols);
      wc.real() = re;
      wc.imag() = im;
      CMat dw = G(x, z) * wc;
      Eigen::Map<Mat>(dy.data(), rows, cols) = dw.real();
      Eigen::Map<Mat>(dy.data() + sz, rows, cols) = dw.imag();
    };
    const int pieces = std::max(1, static_cast<int>(std::ceil(std::abs(x1 - x0) / chunk)));
    ode::Tolerances tol{opt_.rtol, opt_.atol, 1e-3, 2000000};
    ode::State y(2 * sz);
    for (int k = 0; k < pieces; ++k) {
      double a = x0 + (x1 - x0) * k / pieces, b = x0 + (x1 - x0) * (k + 1) / pieces;
      Eigen::Map<Mat>(y.data(), rows, cols) = w.real();
      Eigen::Map<Mat>(y.data() + sz, rows, cols) = w.imag();
      ode::integrate(rhs, y, a, b, tol);
      w.real() = Eigen::Map<const Mat>(y.data(), rows, cols);
      w.imag() = Eigen::Map<const Mat>(y.data() + sz, rows, cols);
      Eigen::HouseholderQR<CMat> qr(w);
      for (int j = 0; j < cols; ++j) logdet += std::log(qr.matrixQR()(j, j));
      w = qr.householderQ() * CMat::Identity(rows, cols);
    }
    return logdet;
  }

  // D = det[V+(0), V-(0)] with V+ ~ e^{G+ x} frame.plus at +infinity and V- ~ e^{G- x} frame.minus at -infinity.
  cplx evaluate(const Frequency& z, const Frames& f) const {
    const double L = opt_.L_int;
    CMat gp = G_plus(z), gm = G_minus(z);
    auto pr = projectors(z);
    if (f.plus.cols() != pr.N || f.minus.cols() != 2 * m_.n - pr.N)
      fail(ErrorKind::SplittingError, "frames do not match the splitting at zeta");
    cplx trace_plus = (gp * pr.plus).trace(), trace_minus = (gm * pr.minus).trace();
    double chunk = chunk_length(z);
    CMat wp = f.plus, wm = f.minus;
    cplx lp = propagate(wp, L, 0.0, z, chunk);
    cplx lm = propagate(wm, -L, 0.0, z, chunk);
    CMat mat(2 * m_.n, 2 * m_.n);
    mat << wp, wm;
    cplx d = mat.determinant() * std::exp(lp + lm + trace_plus * L - trace_minus * L);
    if (!std::isfinite(d.real()) || !std::isfinite(d.imag()))
      fail(ErrorKind::IntegrationBlowup, "Evans determinant overflowed");
    return d;
  }

  cplx operator()(const Frequency& z) const { return evaluate(z, frames_at(z)); }

 private:
  const ModelDef& m_;
  const Profile& p_;
  EvansOptions opt_;
  PointCoeffs pc_plus_, pc_minus_;
};

inline cplx evans_eval(const ModelDef& m, const Profile& p, const Frequency& z, const EvansOptions& opt = {}) {
  return EvansFunction(m, p, opt)(z);
}

struct EvansResult {
  std::vector<Frequency> points;
  std::vector<cplx> D;
  std::vector<double> phase;  // accumulated argument along the contour
  int winding = 0;
  int refinements = 0;
  double min_abs = 0, max_abs = 0;

  json to_json() const {
    return {{"samples", points.size()}, {"winding", winding},   {"refinements", refinements},
            {"min_abs_D", min_abs},     {"max_abs_D", max_abs}};
  }
};

struct WindingOptions {
  double zero_tol = 1e-8;  // |D| below zero_tol * max|D| counts as a zero on the contour
  int max_depth = 14;
};

// Winding number of D along a closed polyline (last point equal to the first).
inline EvansResult winding_number(const EvansFunction& ev, const std::vector<Frequency>& contour,
                                  const WindingOptions& wo = {}) {
  if (contour.size() < 3) fail(ErrorKind::PreconditionError, "contour needs at least three points");
  if (distance(contour.front(), contour.back()) > 1e-12 * std::max(1.0, contour.front().rho()))
    fail(ErrorKind::PreconditionError, "contour is not closed");
  const int np = static_cast<int>(contour.size());
  std::vector<Frames> frames(np);
  frames[0] = ev.frames_at(contour[0]);
  for (int k = 1; k < np; ++k) frames[k] = ev.transport(contour[k - 1], frames[k - 1], contour[k]);
  std::vector<cplx> d(np);
  parallel_for(np, ev.options().jobs, [&](int k) { d[k] = ev.evaluate(contour[k], frames[k]); });

  EvansResult res;
  std::function<void(const Frequency&, const Frames&, cplx, const Frequency&, cplx, int)> refine =
      [&](const Frequency& za, const Frames& fa, cplx da, const Frequency& zb, cplx db, int depth) {
        if (std::abs(std::arg(db / da)) < 0.5 * kPi) {
          res.points.push_back(zb);
          res.D.push_back(db);
          return;
        }
        if (depth >= wo.max_depth) fail(ErrorKind::NonIntegerWinding, "phase refinement stalled on the contour");
        ++res.refinements;
        Frequency zm = lerp(za, zb, 0.5);
        Frames fm = ev.transport(za, fa, zm);
        cplx dm = ev.evaluate(zm, fm);
        if (dm == 0.0) fail(ErrorKind::ZeroOnContour, "D vanishes on the contour");
        refine(za, fa, da, zm, dm, depth + 1);
        Frames fm2 = fm;
        refine(zm, fm2, dm, zb, db, depth + 1);
      };
  for (int k = 0; k < np; ++k)
    if (d[k] == 0.0) fail(ErrorKind::ZeroOnContour, "D vanishes on the contour");
  res.points.push_back(contour[0]);
  res.D.push_back(d[0]);
  for (int k = 0; k + 1 < np; ++k) refine(contour[k], frames[k], d[k], contour[k + 1], d[k + 1], 0);

  res.max_abs = 0;
  res.min_abs = std::numeric_limits<double>::infinity();
  for (auto v : res.D) {
    res.max_abs = std::max(res.max_abs, std::abs(v));
    res.min_abs = std::min(res.min_abs, std::abs(v));
  }
  if (res.min_abs <= wo.zero_tol * res.max_abs) {
    std::ostringstream os;
    os << "|D| drops to " << res.min_abs << " (max " << res.max_abs << ") on the contour";
    fail(ErrorKind::ZeroOnContour, os.str());
  }
  res.phase.push_back(std::arg(res.D[0]));
  for (size_t k = 1; k < res.D.size(); ++k) res.phase.push_back(res.phase.back() + std::arg(res.D[k] / res.D[k - 1]));
  double turns = (res.phase.back() - res.phase.front()) / (2 * kPi);
  res.winding = static_cast<int>(std::lround(turns));
  if (std::abs(turns - res.winding) > 0.05) {
    std::ostringstream os;
    os << "accumulated phase " << turns << " turns is not an integer; transported frames do not close";
    fail(ErrorKind::NonIntegerWinding, os.str());
  }
  return res;
}

// Closed semi-annulus in the lambda plane at fixed eta: |zeta| in [rho_min, rho_max], left edge at
// gamma_left <= 0. When |eta| >= rho_min the inner arc is absent (half disc).
struct ContourSpec {
  Vec eta;
  double rho_min = 0.05;
  double rho_max = 3.0;
  int points = 96;
};

inline std::vector<Frequency> semi_annulus(const ContourSpec& cs, double c) {
  const double e = cs.eta.norm();
  if (!(cs.rho_max > e) || !(cs.rho_max > cs.rho_min) || cs.rho_min <= 0.0)
    fail(ErrorKind::PreconditionError, "contour radii must satisfy 0 < rho_min < rho_max and |eta| < rho_max");
  const double R = std::sqrt(cs.rho_max * cs.rho_max - e * e);
  const double r = cs.rho_min > e ? std::sqrt(cs.rho_min * cs.rho_min - e * e) : 0.0;
  double gl = -0.9 * std::max(c, 0.0) * kappa(0.9 * cs.rho_min);
  if (r > 0.0) gl = std::max(gl, -0.5 * r);
  gl = std::max(gl, -0.5 * R);
  const double phR = std::acos(gl / R);
  const double phr = r > 0.0 ? std::acos(gl / r) : 0.0;
  const double top = R * std::sin(phR), inner = r > 0.0 ? r * std::sin(phr) : 0.0;
  std::vector<double> lengths = {2 * phR * R, top - inner, 2 * phr * r, top - inner};
  if (r == 0.0) lengths = {2 * phR * R, 2 * top};
  double total = 0;
  for (double l : lengths) total += l;
  std::vector<cplx> pts;
  auto count = [&](double l) { return std::max(4, static_cast<int>(std::ceil(cs.points * l / total))); };
  auto arc = [&](double rad, double a, double b, int k) {
    for (int i = 0; i < k; ++i) pts.push_back(std::polar(rad, a + (b - a) * i / k));
  };
  auto seg = [&](cplx a, cplx b, int k) {
    for (int i = 0; i < k; ++i) pts.push_back(a + (b - a) * (double(i) / k));
  };
  arc(R, -phR, phR, count(lengths[0]));
  if (r > 0.0) {
    seg(cplx(gl, top), cplx(gl, inner), count(lengths[1]));
    arc(r, phr, -phr, count(lengths[2]));
    seg(cplx(gl, -inner), cplx(gl, -top), count(lengths[3]));
  } else {
    seg(cplx(gl, top), cplx(gl, -top), count(lengths[1]));
  }
  pts.push_back(pts.front());
  std::vector<Frequency> out;
  for (auto l : pts) out.emplace_back(l, cs.eta);
  return out;
}

inline std::vector<ContourSpec> default_contour_family(int d, double rho_min, double rho_max, int count = 4,
                                                       int points = 96) {
  std::vector<ContourSpec> out;
  const int slices = d == 1 ? 1 : std::max(1, count);
  for (int k = 0; k < slices; ++k) {
    ContourSpec cs;
    cs.eta = Vec::Zero(d - 1);
    if (d > 1) cs.eta(0) = 0.8 * rho_max * k / slices;
    cs.rho_min = rho_min;
    cs.rho_max = rho_max;
    cs.points = points;
    out.push_back(cs);
  }
  return out;
}

// Directions zeta_hat on the unit sphere with gamma_hat > 0 (bounded away from the glancing set).
inline std::vector<Frequency> zeta_hat_grid(int d, int count) {
  std::vector<Frequency> out;
  for (int k = 0; k < count; ++k) {
    double theta = (k % 2 == 0 ? 0.45 : 1.0);  // angle away from the gamma axis
    double phi = 2 * kPi * (k + 0.5) / count;
    Vec eta = Vec::Zero(d - 1);
    cplx l;
    if (d == 1) {
      double a = (-0.5 + (k + 0.5) / count) * 2.2;  // angle from the gamma axis in (-1.1, 1.1)
      l = cplx(std::cos(a), std::sin(a));
    } else {
      double g = std::cos(theta), s = std::sin(theta);
      l = cplx(g, s * std::cos(phi));
      eta(0) = s * std::sin(phi);
    }
    out.push_back(Frequency(l, eta).direction());
  }
  return out;
}

struct RadialSample {
  Frequency zeta_hat;
  std::vector<double> rho;
  std::vector<cplx> D;
  cplx D0;  // Richardson limit at rho = 0
  cplx dD;  // d/drho D at rho = 0
};

// D at rho in {r0, r0/2, r0/4, h, h/2} along zeta_hat. D0 is the quadratic extrapolation from the first
// three; dD combines one-sided differences at steps h and h/2.
inline RadialSample radial_limit(const EvansFunction& ev, const Frequency& zh, double r0 = 1e-3, double h = 1e-4) {
  RadialSample rs;
  rs.zeta_hat = zh.direction();
  rs.rho = {r0, r0 / 2, r0 / 4, h, h / 2};
  Frequency z0 = rs.zeta_hat.scaled(r0);
  Frames f = ev.frames_at(z0);
  std::vector<Frames> frames = {f};
  for (size_t k = 1; k < rs.rho.size(); ++k)
    frames.push_back(ev.transport(rs.zeta_hat.scaled(rs.rho[k - 1]), frames.back(), rs.zeta_hat.scaled(rs.rho[k])));
  rs.D.resize(rs.rho.size());
  parallel_for(static_cast<int>(rs.rho.size()), ev.options().jobs,
               [&](int k) { rs.D[k] = ev.evaluate(rs.zeta_hat.scaled(rs.rho[k]), frames[k]); });
  rs.D0 = rs.D[0] / 3.0 - 2.0 * rs.D[1] + (8.0 / 3.0) * rs.D[2];
  cplx d1 = (rs.D[3] - rs.D0) / h, d2 = (rs.D[4] - rs.D0) / (h / 2);
  rs.dD = 2.0 * d2 - d1;
  return rs;
}

struct S7Options {
  double rho_small = 1e-3;
  double fd_step = 1e-4;
  double zero_tol = 1e-5;        // |D(0, zeta_hat)| <= zero_tol * scale
  double derivative_tol = 1e-6;  // |d_rho D(0, zeta_hat)| > derivative_tol * scale
  WindingOptions winding;
};

struct S7Report {
  Verdict verdict;
  std::vector<RadialSample> radial;
  std::vector<EvansResult> contours;
  std::vector<ContourSpec> family;
  double scale = 0;
  double rho_min = 0;

  json to_json() const {
    json j = verdict.to_json();
    j["unverified_inner_radius"] = rho_min;
    j["scale"] = scale;
    json rad = json::array();
    for (const auto& r : radial)
      rad.push_back({{"zeta_hat", r.zeta_hat.to_json()},
                     {"D0", cplx_json(r.D0)},
                     {"abs_D0_rel", scale > 0 ? std::abs(r.D0) / scale : 0.0},
                     {"dD", cplx_json(r.dD)}});
    j["radial"] = rad;
    json cs = json::array();
    for (size_t k = 0; k < contours.size(); ++k) {
      json c = contours[k].to_json();
      c["eta"] = vec_json(family[k].eta);
      c["rho_min"] = family[k].rho_min;
      c["rho_max"] = family[k].rho_max;
      cs.push_back(c);
    }
    j["contours"] = cs;
    return j;
  }
};

// Margin: min |d_rho D(0)| / scale when every winding is 0 and every |D(0)| is small; otherwise negative.
inline S7Report check_S7(const EvansFunction& ev, const std::vector<Frequency>& zeta_hats,
                         const std::vector<ContourSpec>& family, const S7Options& opt = {}) {
  S7Report rep;
  rep.family = family;
  rep.rho_min = std::numeric_limits<double>::infinity();
  std::ostringstream grid;
  grid << zeta_hats.size() << " zeta_hat slices, " << family.size() << " contours";
  std::string failure;
  try {
    for (const auto& cs : family) {
      rep.contours.push_back(winding_number(ev, semi_annulus(cs, ev.options().c), opt.winding));
      rep.scale = std::max(rep.scale, rep.contours.back().max_abs);
      rep.rho_min = std::min(rep.rho_min, cs.rho_min);
    }
    for (const auto& zh : zeta_hats) rep.radial.push_back(radial_limit(ev, zh, opt.rho_small, opt.fd_step));
  } catch (const Error& e) {
    failure = std::string(to_string(e.kind())) + ": " + e.what();
  }
  if (!std::isfinite(rep.rho_min)) rep.rho_min = 0.0;
  if (rep.scale == 0.0)
    for (const auto& r : rep.radial)
      for (auto v : r.D) rep.scale = std::max(rep.scale, std::abs(v));
  double margin = std::numeric_limits<double>::infinity();
  int bad = 0;
  json wit = json::array();
  for (size_t k = 0; k < rep.contours.size(); ++k)
    if (rep.contours[k].winding != 0) {
      ++bad;
      wit.push_back({{"contour", k}, {"winding", rep.contours[k].winding}});
    }
  for (const auto& r : rep.radial) {
    double z0 = std::abs(r.D0) / rep.scale;
    if (z0 > opt.zero_tol) {
      ++bad;
      wit.push_back({{"zeta_hat", r.zeta_hat.to_json()}, {"abs_D0_rel", z0}});
    }
    margin = std::min(margin, std::abs(r.dD) / rep.scale);
  }
  if (!failure.empty()) {
    margin = -1.0;
  } else if (bad > 0) {
    margin = -double(bad);
  }
  if (!std::isfinite(margin)) margin = 0.0;
  rep.verdict = make_verdict("S7", margin, opt.derivative_tol, grid.str());
  rep.verdict.witnesses = wit;
  if (!failure.empty()) rep.verdict.note = failure;
  return rep;
}

inline void write_contour_csv(const EvansResult& r, const std::string& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) fail(ErrorKind::ConfigError, "cannot write " + path);
  out.precision(12);
  const int de = r.points.empty() ? 0 : static_cast<int>(r.points[0].eta.size());
  if (!append) {
    out << "rho,tau_hat,gamma_hat";
    for (int k = 0; k < de; ++k) out << ",eta_hat" << k + 1;
    out << ",re_D,im_D,phase\n";
  }
  for (size_t i = 0; i < r.points.size(); ++i) {
    const auto& z = r.points[i];
    double rho = z.rho();
    out << rho << ',' << z.tau() / rho << ',' << z.gamma() / rho;
    for (int k = 0; k < de; ++k) out << ',' << z.eta(k) / rho;
    out << ',' << r.D[i].real() << ',' << r.D[i].imag() << ',' << r.phase[i] << '\n';
  }
}

}  // namespace hhshock
