#pragma once

#include "hhshock/dissipativity.hpp"
#include "hhshock/ode.hpp"

#include <Eigen/SparseLU>
#include <fstream>
#include <map>
#include <optional>

namespace hhshock {

// Stationary travelling-wave ODE  u' = B11(u)^{-1} (f1(u) - f1(u_-)).
inline constexpr const char* kProfileOde = "u' = B11(u)^{-1} (f1(u) - f1(u_minus))";

inline VecFn profile_rhs(const ModelDef& m, const Vec& u_minus) {
  Vec f_minus = m.flux.at(0)(u_minus);
  return [f1 = m.flux.at(0), b = m.coef_b, f_minus](const Vec& u) -> Vec {
    Eigen::PartialPivLU<Mat> lu(b(u, 0, 0));
    if (!(lu.rcond() > 1e-12)) fail(ErrorKind::SingularB11, "B11 is singular along the profile");
    return lu.solve(f1(u) - f_minus);
  };
}

struct Profile {
  int n = 1;
  int d = 1;
  Vec u_minus, u_plus;
  std::vector<double> x;
  std::vector<Vec> u, du;
  double h = 0;
  double L = 0;
  double delta = 0;
  int K = 0;
  std::string method;
  int phase_component = 0;
  double phase_value = 0;
  VecFn rhs;  // exact derivative along the profile; empty for profiles read from disk

  std::size_t size() const { return x.size(); }

  // Cubic Hermite interpolation on the uniform grid.
  Vec value_at(double xq) const {
    auto [i, t] = locate(xq);
    double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * u[i] + (t3 - 2 * t2 + t) * h * du[i] + (-2 * t3 + 3 * t2) * u[i + 1] +
           (t3 - t2) * h * du[i + 1];
  }

  Vec derivative_at(double xq) const {
    if (rhs) return rhs(value_at(xq));
    auto [i, t] = locate(xq);
    double t2 = t * t;
    return ((6 * t2 - 6 * t) * u[i] + (-6 * t2 + 6 * t) * u[i + 1]) / h + (3 * t2 - 4 * t + 1) * du[i] +
           (3 * t2 - 2 * t) * du[i + 1];
  }

 private:
  std::pair<std::size_t, double> locate(double xq) const {
    if (x.size() < 2) fail(ErrorKind::InterpolationOutOfRange, "profile grid is empty");
    const double slack = 1e-9 * h;
    if (xq < x.front() - slack || xq > x.back() + slack)
      fail(ErrorKind::InterpolationOutOfRange, "x outside the profile grid");
    double s = (xq - x.front()) / h;
    auto i = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, double(x.size() - 2)));
    return {i, std::clamp(s - double(i), 0.0, 1.0)};
  }
};

// ---------------------------------------------------------------------------------------------
// (S1) Lax counts from the characteristic speeds spec((A0)^{-1} A^1) at the endstates.

struct LaxReport {
  int i_plus = 0;
  int i_minus = 0;
  std::vector<double> speeds_minus, speeds_plus;
  Verdict verdict;
};

inline std::vector<double> characteristic_speeds(const ModelDef& m, const Vec& u) {
  auto dm = derivative_matrices(m, u);
  Mat w = spd_inverse_sqrt(dm.a0);
  CVec ev = eigenvalues(to_complex(w * dm.a[0] * w));
  std::vector<double> out;
  for (int i = 0; i < ev.size(); ++i) out.push_back(ev(i).real());
  std::sort(out.begin(), out.end());
  return out;
}

inline LaxReport check_S1_lax(const ModelDef& m, const Vec& u_minus, const Vec& u_plus, double tol = 1e-10) {
  LaxReport rep;
  rep.speeds_minus = characteristic_speeds(m, u_minus);
  rep.speeds_plus = characteristic_speeds(m, u_plus);
  double sc = 1.0;
  for (double s : rep.speeds_minus) sc = std::max(sc, std::abs(s));
  for (double s : rep.speeds_plus) sc = std::max(sc, std::abs(s));
  double smallest = std::numeric_limits<double>::infinity();
  for (double s : rep.speeds_minus) smallest = std::min(smallest, std::abs(s));
  for (double s : rep.speeds_plus) smallest = std::min(smallest, std::abs(s));
  if (smallest <= tol * sc) fail(ErrorKind::CharacteristicEndstate, "A^1 is singular at an endstate");
  for (double s : rep.speeds_plus) rep.i_plus += s < 0;
  for (double s : rep.speeds_minus) rep.i_minus += s > 0;
  int excess = rep.i_plus + rep.i_minus - (m.n + 1);
  rep.verdict = make_verdict("S1", excess == 0 ? smallest / sc : -std::abs(double(excess)), 0.0, "endstates");
  rep.verdict.witnesses = json::array({{{"i_plus", rep.i_plus}, {"i_minus", rep.i_minus}, {"n", m.n}}});
  rep.verdict.note = "pass iff i_plus + i_minus = n + 1; margin = min |speed| / max |speed| when it holds";
  return rep;
}

// ---------------------------------------------------------------------------------------------

struct ProfileOptions {
  enum class Method { Automatic, Shooting, Collocation };
  double L = 20.0;
  double h = 0.01;
  double tol = 1e-8;          // Rankine-Hugoniot tolerance (relative)
  double eps0 = 1e-6;         // offset along the unstable eigenvector at u_-
  Method method = Method::Automatic;
  std::optional<double> phase_value;  // default: midpoint of the phase component
  double tail_fraction = 0.25;
  double box_factor = 10.0;   // NoConnection once |u - u_-| > box_factor |u_+ - u_-|
  double arrival = 0.1;       // NoConnection if |u(L) - u_+| > arrival |u_+ - u_-|
  ode::Tolerances ode{1e-12, 1e-14, 1e-3, 2000000};
};

struct TailFit {
  double rate = 0;
  double constant = 0;
  double r2 = 0;
  int points = 0;
};

namespace detail {

// Log-linear fit of v(x) over the outer fraction of one tail; side = -1 (left) or +1 (right).
// Values at or below the floor are treated as round-off and skipped.
inline TailFit fit_tail(const std::vector<double>& x, const std::vector<double>& v, int side, double fraction,
                        double floor) {
  const double L = std::max(std::abs(x.front()), std::abs(x.back()));
  auto collect = [&](double frac, std::vector<double>& xs, std::vector<double>& ys) {
    xs.clear();
    ys.clear();
    for (std::size_t i = 0; i < x.size(); ++i) {
      double sx = side * x[i];
      if (sx >= L * (1 - frac) && v[i] > floor && std::isfinite(v[i])) {
        xs.push_back(sx);
        ys.push_back(std::log(v[i]));
      }
    }
  };
  std::vector<double> xs, ys;
  collect(fraction, xs, ys);
  if (xs.size() < 8) collect(0.5, xs, ys);
  if (xs.size() < 4) fail(ErrorKind::DecayFitError, "too few tail points above round-off for a decay fit");
  TailFit f;
  double icpt = 0;
  f.rate = -fit_slope(xs, ys, &icpt, &f.r2);
  f.constant = std::exp(icpt);
  f.points = static_cast<int>(xs.size());
  return f;
}

struct Linearization {
  Mat j;                 // B11^{-1} A^1 at the endstate
  Eigen::EigenSolver<Mat> es;
  int unstable = 0;
  int stable = 0;
};

inline Linearization linearize_endstate(const ModelDef& m, const Vec& u) {
  Linearization lin;
  Mat b = m.coef_b(u, 0, 0);
  Eigen::FullPivLU<Mat> lu(b);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) fail(ErrorKind::SingularB11, "B11 is singular at an endstate");
  auto dm = derivative_matrices(m, u);
  lin.j = lu.solve(dm.a[0]);
  lin.es.compute(lin.j);
  for (int i = 0; i < lin.j.rows(); ++i) {
    double re = lin.es.eigenvalues()(i).real();
    lin.unstable += re > 0;
    lin.stable += re < 0;
  }
  return lin;
}

// Real left-eigenvector rows spanning the spectral subspace selected by pred (complex pairs give
// real and imaginary parts).
inline Mat left_rows(const Mat& j, const std::function<bool(double)>& pred) {
  Eigen::EigenSolver<Mat> es(j.transpose());
  std::vector<Vec> rows;
  const int n = static_cast<int>(j.rows());
  for (int i = 0; i < n; ++i) {
    cplx z = es.eigenvalues()(i);
    if (!pred(z.real())) continue;
    CVec v = es.eigenvectors().col(i);
    if (std::abs(z.imag()) <= 1e-12 * std::max(1.0, std::abs(z))) {
      rows.push_back(v.real() / v.real().norm());
    } else if (z.imag() > 0) {
      rows.push_back(v.real());
      rows.push_back(v.imag());
    }
  }
  Mat out(rows.size(), n);
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(r) = rows[r].transpose();
  return out;
}

// Symmetric grid on [-L, L] with an odd number of points, so that x = 0 is a node.
inline std::vector<double> uniform_grid(double L, double h) {
  auto half = static_cast<long>(std::llround(L / h));
  if (half < 2) fail(ErrorKind::PreconditionError, "profile grid needs L/h >= 2");
  long count = 2 * half + 1;
  std::vector<double> x(count);
  double step = L / double(half);
  for (long i = 0; i < count; ++i) x[i] = -L + step * double(i);
  x[half] = 0.0;
  return x;
}

inline ode::Rhs as_ode(const VecFn& f) {
  return [f](const ode::State& y, ode::State& dy, double) {
    Vec u = Eigen::Map<const Vec>(y.data(), y.size());
    Vec r = f(u);
    dy.assign(r.data(), r.data() + r.size());
  };
}

inline ode::State to_state(const Vec& v) { return ode::State(v.data(), v.data() + v.size()); }
inline Vec from_state(const ode::State& s) { return Eigen::Map<const Vec>(s.data(), s.size()); }

// Shooting from the unstable manifold of u_- (one-dimensional).
inline std::vector<Vec> shoot(const ModelDef& m, const Vec& um, const Vec& up, const VecFn& rhs,
                              const Linearization& lin, const std::vector<double>& x, int pc, double target,
                              const ProfileOptions& opt) {
  const int n = m.n;
  int idx = -1;
  for (int i = 0; i < n; ++i)
    if (lin.es.eigenvalues()(i).real() > 0) idx = i;
  const double mu = lin.es.eigenvalues()(idx).real();
  if (std::abs(lin.es.eigenvalues()(idx).imag()) > 1e-12 * std::max(1.0, mu))
    fail(ErrorKind::NoConnection, "unstable eigenvalue at u_minus is not real");
  Vec r = lin.es.eigenvectors().col(idx).real();
  r.normalize();
  const Vec jump = up - um;
  if (r.dot(jump) < 0) r = -r;
  const double jn = jump.norm();
  const double sgn = jump(pc) > 0 ? 1.0 : -1.0;
  auto f = as_ode(rhs);
  auto level = [&](const ode::State& y) { return sgn * (y[pc] - target); };
  auto guard = [&](const ode::State& y) {
    if ((from_state(y) - um).norm() > opt.box_factor * jn)
      fail(ErrorKind::NoConnection, "trajectory left the bounding box");
  };

  const Vec start = um + opt.eps0 * r;
  const ode::State y0 = to_state(start);
  if (level(y0) >= 0) fail(ErrorKind::NoConnection, "phase level is not between the endstates");
  const double s_max = 200.0 / mu + 4.0 * opt.L;

  // First pass: locate the phase crossing s* on the dense interpolant.
  double sstar = std::numeric_limits<double>::quiet_NaN();
  auto rethrow = [](const Error& e) {
    if (e.kind() == ErrorKind::IntegrationBlowup || e.kind() == ErrorKind::ConvergenceError)
      fail(ErrorKind::NoConnection, std::string("shooting failed: ") + e.what());
    throw e;
  };
  try {
    ode::march(f, y0, 0.0, opt.ode, [&](double t0, double t1, auto&& state_at) {
      const ode::State& y1 = state_at(t1);
      guard(y1);
      if (level(y1) < 0) {
        if (t1 > s_max) fail(ErrorKind::NoConnection, "trajectory does not reach the phase level");
        return true;
      }
      double a = t0, b = t1;
      for (int it = 0; it < 200 && b - a > 1e-15 * std::max(1.0, b); ++it) {
        double c = 0.5 * (a + b);
        (level(state_at(c)) < 0 ? a : b) = c;
      }
      sstar = 0.5 * (a + b);
      return false;
    });
  } catch (const Error& e) {
    rethrow(e);
  }

  // Second pass over the same step sequence: sample the grid, using the linear manifold for s < 0.
  std::vector<Vec> out(x.size());
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double si = x[i] + sstar;
    if (si <= 0)
      out[i] = um + opt.eps0 * std::exp(mu * si) * r;
    else
      where.push_back(i);
  }
  std::size_t k = 0;
  try {
    if (!where.empty())
      ode::march(f, y0, 0.0, opt.ode, [&](double, double t1, auto&& state_at) {
        while (k < where.size() && x[where[k]] + sstar <= t1) {
          const ode::State& z = state_at(x[where[k]] + sstar);
          guard(z);
          out[where[k++]] = from_state(z);
        }
        return k < where.size();
      });
  } catch (const Error& e) {
    rethrow(e);
  }
  if (k != where.size()) fail(ErrorKind::NoConnection, "dense output did not reach the grid end");
  return out;
}

// Hermite-Simpson collocation with projection boundary conditions and a pinned phase.
inline std::vector<Vec> collocate(const ModelDef& m, const Vec& um, const Vec& up, const VecFn& rhs,
                                  const Linearization& lm, const Linearization& lp, const std::vector<double>& x,
                                  int pc, double target) {
  const int n = m.n;
  const int N = static_cast<int>(x.size());
  const double h = x[1] - x[0];
  const int mid = N / 2;
  Mat left = left_rows(lm.j, [](double re) { return re <= 0; });
  Mat right = left_rows(lp.j, [](double re) { return re >= 0; });
  const int rows = static_cast<int>(left.rows() + right.rows()) + (N - 1) * n + 1;
  if (rows != N * n)
    fail(ErrorKind::NoConnection, "boundary conditions do not close the collocation system (not a Lax shock?)");

  // Initial guess: tanh front with the slower of the two endstate rates.
  double rate = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    double re = lm.es.eigenvalues()(i).real();
    if (re > 0) rate = std::min(rate, re);
    re = lp.es.eigenvalues()(i).real();
    if (re < 0) rate = std::min(rate, -re);
  }
  if (!std::isfinite(rate)) rate = 1.0;
  const double width = 2.0 / rate;
  std::vector<Vec> U(N);
  for (int i = 0; i < N; ++i) U[i] = um + (up - um) * 0.5 * (1 + std::tanh(x[i] / width));

  const double sc = std::max(1.0, (up - um).cwiseAbs().maxCoeff());
  auto residual = [&](const std::vector<Vec>& V, Vec& R, std::vector<Vec>* F) {
    std::vector<Vec> f(N);
    for (int i = 0; i < N; ++i) f[i] = rhs(V[i]);
    R.resize(N * n);
    int row = 0;
    for (int r = 0; r < left.rows(); ++r) R(row++) = left.row(r).dot(V[0] - um);
    for (int i = 0; i + 1 < N; ++i) {
      Vec umid = 0.5 * (V[i] + V[i + 1]) + h / 8 * (f[i] - f[i + 1]);
      Vec fm = rhs(umid);
      R.segment(row, n) = V[i + 1] - V[i] - h / 6 * (f[i] + 4 * fm + f[i + 1]);
      row += n;
    }
    for (int r = 0; r < right.rows(); ++r) R(row++) = right.row(r).dot(V[N - 1] - up);
    R(row++) = V[mid](pc) - target;
    if (F) *F = std::move(f);
  };

  Vec R;
  std::vector<Vec> f;
  residual(U, R, &f);
  double rnorm = R.cwiseAbs().maxCoeff();
  for (int iter = 0; iter < 60 && rnorm > 1e-12 * sc; ++iter) {
    std::vector<Eigen::Triplet<double>> trip;
    int row = 0;
    for (int r = 0; r < left.rows(); ++r, ++row)
      for (int c = 0; c < n; ++c) trip.emplace_back(row, c, left(r, c));
    std::vector<Mat> J(N);
    for (int i = 0; i < N; ++i) J[i] = fd_jacobian(rhs, U[i]);
    const Mat I = Mat::Identity(n, n);
    for (int i = 0; i + 1 < N; ++i) {
      Vec umid = 0.5 * (U[i] + U[i + 1]) + h / 8 * (f[i] - f[i + 1]);
      Mat jm = fd_jacobian(rhs, umid);
      Mat da = -I - h / 6 * (J[i] + 4 * jm * (0.5 * I + h / 8 * J[i]));
      Mat db = I - h / 6 * (J[i + 1] + 4 * jm * (0.5 * I - h / 8 * J[i + 1]));
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          trip.emplace_back(row + r, i * n + c, da(r, c));
          trip.emplace_back(row + r, (i + 1) * n + c, db(r, c));
        }
      row += n;
    }
    for (int r = 0; r < right.rows(); ++r, ++row)
      for (int c = 0; c < n; ++c) trip.emplace_back(row, (N - 1) * n + c, right(r, c));
    trip.emplace_back(row, mid * n + pc, 1.0);
    Eigen::SparseMatrix<double> A(N * n, N * n);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) fail(ErrorKind::NoConnection, "collocation Jacobian is singular");
    Vec step = lu.solve(-R);
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
      std::vector<Vec> trial(N);
      for (int i = 0; i < N; ++i) trial[i] = U[i] + t * step.segment(i * n, n);
      Vec Rt;
      std::vector<Vec> ft;
      try {
        residual(trial, Rt, &ft);
      } catch (const Error&) {
        continue;
      }
      double rt = Rt.cwiseAbs().maxCoeff();
      if (std::isfinite(rt) && rt < (1 - 1e-4 * t) * rnorm) {
        U = std::move(trial);
        R = std::move(Rt);
        f = std::move(ft);
        rnorm = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!(rnorm <= 1e-9 * sc)) fail(ErrorKind::NoConnection, "collocation Newton iteration did not converge");
  return U;
}

}  // namespace detail

// Tail fit of |u - u_+-| over the outer fraction of each side; returns min of the two rates.
inline double fit_decay_rate(const Profile& p, double fraction = 0.25, TailFit* left = nullptr,
                             TailFit* right = nullptr) {
  std::vector<double> v(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) v[i] = (p.u[i] - (p.x[i] < 0 ? p.u_minus : p.u_plus)).norm();
  double floor = 1e-12 * std::max(1.0, (p.u_plus - p.u_minus).norm());
  TailFit l = detail::fit_tail(p.x, v, -1, fraction, floor);
  TailFit r = detail::fit_tail(p.x, v, +1, fraction, floor);
  if (left) *left = l;
  if (right) *right = r;
  return std::min(l.rate, r.rate);
}

inline Profile solve_profile(const ModelDef& m, const Vec& u_minus, const Vec& u_plus, const ProfileOptions& opt = {}) {
  check_state(m, u_minus);
  check_state(m, u_plus);
  const Vec jump = u_plus - u_minus;
  if (jump.norm() <= 1e-12 * std::max(1.0, u_minus.norm()))
    fail(ErrorKind::DegenerateProfile, "u_minus equals u_plus: the profile would be constant");
  Vec fm = m.flux.at(0)(u_minus), fp = m.flux.at(0)(u_plus);
  double fsc = std::max({1.0, fm.norm(), fp.norm()});
  if ((fp - fm).norm() > opt.tol * fsc) fail(ErrorKind::RHViolation, "f1(u_plus) != f1(u_minus)");
  auto lax = check_S1_lax(m, u_minus, u_plus);
  if (!lax.verdict.pass) fail(ErrorKind::NotLax, "endstates do not form a Lax shock");

  auto lm = detail::linearize_endstate(m, u_minus);
  auto lp = detail::linearize_endstate(m, u_plus);
  VecFn rhs = profile_rhs(m, u_minus);

  Profile p;
  p.n = m.n;
  p.d = m.d;
  p.u_minus = u_minus;
  p.u_plus = u_plus;
  p.rhs = rhs;
  p.phase_component = 0;
  if (std::abs(jump(0)) <= 1e-8 * jump.norm()) jump.cwiseAbs().maxCoeff(&p.phase_component);
  const int pc = p.phase_component;
  p.phase_value = opt.phase_value.value_or(0.5 * (u_minus(pc) + u_plus(pc)));
  if ((p.phase_value - u_minus(pc)) * (p.phase_value - u_plus(pc)) >= 0)
    fail(ErrorKind::PreconditionError, "phase value must lie strictly between the endstate components");
  p.x = detail::uniform_grid(opt.L, opt.h);
  p.L = opt.L;
  p.h = p.x[1] - p.x[0];

  bool shooting_ok = lm.unstable == 1 && lp.stable == m.n;
  using M = ProfileOptions::Method;
  if (opt.method == M::Shooting && !shooting_ok)
    fail(ErrorKind::PreconditionError, "shooting needs a one-dimensional unstable manifold at u_minus");
  bool use_shooting = opt.method == M::Shooting || (opt.method == M::Automatic && shooting_ok);
  if (use_shooting) {
    try {
      p.u = detail::shoot(m, u_minus, u_plus, rhs, lm, p.x, pc, p.phase_value, opt);
      p.method = "shooting";
    } catch (const Error& e) {
      if (opt.method == M::Shooting || e.kind() != ErrorKind::NoConnection) throw;
    }
  }
  if (p.u.empty()) {
    p.u = detail::collocate(m, u_minus, u_plus, rhs, lm, lp, p.x, pc, p.phase_value);
    p.method = "collocation";
  }
  p.du.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) p.du[i] = rhs(p.u[i]);
  double miss = (p.u.back() - u_plus).norm();
  if (!(miss <= opt.arrival * jump.norm()))
    fail(ErrorKind::NoConnection, "profile does not approach u_plus within L");
  p.delta = fit_decay_rate(p, opt.tail_fraction);
  return p;
}

// ---------------------------------------------------------------------------------------------

struct VerifyOptions {
  double residual_tol = 1e-6;  // relative to max(1, |u_+ - u_-|)
  double r2_min = 0.99;
  double tail_fraction = 0.25;
  double tail_tol = 1e-3;      // |u(+-L) - u_+-| <= tail_tol |u_+ - u_-| in addition to exp(-delta L / 2)
};

struct ProfileCertificate {
  double residual = 0;               // max ODE residual with 4th-order differences
  std::vector<double> residuals;     // per interior grid point
  std::vector<double> rates, constants, r2;  // per derivative order k = 0..K
  double delta = 0;
  double C = 0;
  double attachment_minus = 0, attachment_plus = 0;
  bool residual_ok = false;

  json to_json() const {
    return {{"ode", kProfileOde},
            {"max_residual", residual},
            {"residual_ok", residual_ok},
            {"rates", rates},
            {"constants", constants},
            {"r2", r2},
            {"delta", delta},
            {"C", C},
            {"attachment", {attachment_minus, attachment_plus}}};
  }
};

// Fourth-order central difference of grid data at interior point i (2 <= i < N-2).
inline Vec central_d4(const std::vector<Vec>& v, std::size_t i, double h) {
  return (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h);
}

inline std::vector<double> profile_residuals(const Profile& p, const ModelDef& m) {
  Vec fm = m.flux.at(0)(p.u_minus);
  std::vector<double> out;
  for (std::size_t i = 2; i + 2 < p.size(); ++i) {
    Vec r = m.coef_b(p.u[i], 0, 0) * central_d4(p.u, i, p.h) - (m.flux.at(0)(p.u[i]) - fm);
    out.push_back(r.norm());
  }
  return out;
}

inline ProfileCertificate verify_profile(const Profile& p, const ModelDef& m, int K = 2, const VerifyOptions& opt = {}) {
  ProfileCertificate c;
  const double jn = (p.u_plus - p.u_minus).norm();
  const double sc = std::max(1.0, jn);
  double dmax = 0;
  for (const auto& v : p.du) dmax = std::max(dmax, v.norm());
  if (p.size() < 5 || !(dmax > 1e-10 * sc)) fail(ErrorKind::DegenerateProfile, "profile derivative vanishes identically");

  c.residuals = profile_residuals(p, m);
  c.residual = *std::max_element(c.residuals.begin(), c.residuals.end());
  c.residual_ok = c.residual <= opt.residual_tol * sc;

  // Derivative data: k = 0 values minus endstates, k = 1 stored derivative, k >= 2 repeated differences.
  std::vector<std::vector<Vec>> deriv{p.u, p.du};
  for (int k = 2; k <= K; ++k) {
    const auto& prev = deriv.back();
    std::vector<Vec> next(p.size(), Vec::Constant(p.n, std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t i = 2; i + 2 < p.size(); ++i) next[i] = central_d4(prev, i, p.h);
    deriv.push_back(std::move(next));
  }
  std::vector<std::vector<double>> mags;
  for (int k = 0; k <= K; ++k) {
    std::vector<double> v(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      Vec ref = k == 0 ? (p.x[i] < 0 ? p.u_minus : p.u_plus) : Vec::Zero(p.n);
      v[i] = (deriv[k][i] - ref).norm();
    }
    double floor = 1e-12 * sc * (k >= 2 ? std::pow(1e-2 / p.h, k - 1) * 10.0 : 1.0);
    TailFit l = detail::fit_tail(p.x, v, -1, opt.tail_fraction, floor);
    TailFit r = detail::fit_tail(p.x, v, +1, opt.tail_fraction, floor);
    double r2 = std::min(l.r2, r.r2);
    if (r2 < opt.r2_min || !(l.rate > 0) || !(r.rate > 0)) {
      std::ostringstream os;
      os << "tail of derivative order " << k << " is not log-linear (R^2 = " << r2 << ")";
      fail(ErrorKind::DecayFitError, os.str());
    }
    c.rates.push_back(std::min(l.rate, r.rate));
    c.r2.push_back(r2);
    mags.push_back(std::move(v));
  }
  c.delta = *std::min_element(c.rates.begin(), c.rates.end());
  for (int k = 0; k <= K; ++k) {
    double ck = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (std::isfinite(mags[k][i])) ck = std::max(ck, mags[k][i] * std::exp(c.delta * std::abs(p.x[i])));
    c.constants.push_back(ck);
    c.C = std::max(c.C, ck);
  }
  c.attachment_minus = (p.u.front() - p.u_minus).norm();
  c.attachment_plus = (p.u.back() - p.u_plus).norm();
  double bound = std::min(std::exp(-c.delta * p.L / 2), opt.tail_tol * jn);
  if (c.attachment_minus > bound || c.attachment_plus > bound) {
    std::ostringstream os;
    os << "endstate attachment " << std::max(c.attachment_minus, c.attachment_plus) << " exceeds " << bound;
    fail(ErrorKind::AttachmentError, os.str());
  }
  return c;
}

// ---------------------------------------------------------------------------------------------
// (S2) constant multiplicities, (S3) nondegeneracy, (S6) restriction symmetry.

inline Verdict check_S2_multiplicities(const ModelDef& m, const Vec& u_plus, const Vec& u_minus,
                                       const std::vector<Vec>& omegas, const DissipativityTolerances& tol = {}) {
  json wit = json::array();
  double gap = std::numeric_limits<double>::infinity();
  bool ok = true;
  for (const Vec* u : {&u_minus, &u_plus}) {
    auto rep = check_hyperbolicity(m, *u, omegas, tol);
    for (std::size_t i = 0; i < omegas.size(); ++i) {
      if (rep.multiplicity_profile[i] != rep.multiplicity_profile.front()) {
        ok = false;
        wit.push_back({{"state", vec_json(*u)}, {"omega", vec_json(omegas[i])},
                       {"multiplicities", rep.multiplicity_profile[i]},
                       {"reference", rep.multiplicity_profile.front()}});
      }
      // separation between distinct eigenvalues, relative to the symbol scale
      auto s = assemble_symbols(m, *u, omegas[i]);
      Mat ach = normalized_symbol(s);
      Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (ach + ach.transpose()));
      const auto& ev = es.eigenvalues();
      double sc = std::max(1.0, ev.cwiseAbs().maxCoeff());
      for (int k = 0; k + 1 < ev.size(); ++k) {
        double g = (ev(k + 1) - ev(k)) / sc;
        if (g > tol.cluster) gap = std::min(gap, g);
      }
    }
  }
  std::ostringstream g;
  g << omegas.size() << " directions at both endstates";
  Verdict v = make_verdict("S2", ok ? (std::isfinite(gap) ? gap : 1.0) : -1.0, 0.0, g.str());
  v.witnesses = wit;
  v.note = "margin = smallest relative gap between distinct eigenvalues of Acheck(omega) when multiplicities are constant";
  return v;
}

inline Verdict check_S3_nondegeneracy(const ModelDef& m, const std::vector<Vec>& states, const Vec& u_minus,
                                      const Vec& u_plus, const std::vector<Vec>& omegas, double tol = 1e-8) {
  double det_min = std::numeric_limits<double>::infinity();
  json wit = json::array();
  for (const auto& u : states) {
    for (const auto& w : omegas) {
      auto s = assemble_symbols(m, u, w);
      double sc = std::max(1.0, scale_of(s.B));
      double dt = std::abs(s.B.determinant()) / std::pow(sc, m.n);
      if (dt < det_min) {
        det_min = dt;
        if (dt <= tol) wit.push_back({{"state", vec_json(u)}, {"omega", vec_json(w)}, {"det_B", dt}});
      }
    }
  }
  double re_min = std::numeric_limits<double>::infinity();
  for (const Vec* u : {&u_minus, &u_plus}) {
    auto dm = derivative_matrices(m, *u);
    Mat b = m.coef_b(*u, 0, 0);
    Eigen::FullPivLU<Mat> lu(b);
    lu.setThreshold(1e-12);
    double re = 0;
    if (lu.isInvertible()) {
      Mat j = dm.a[0] * lu.inverse();
      CVec ev = eigenvalues(to_complex(j));
      re = std::numeric_limits<double>::infinity();
      double sc = std::max(1.0, scale_of(j));
      for (int i = 0; i < ev.size(); ++i) re = std::min(re, std::abs(ev(i).real()) / sc);
    }
    if (re <= tol) wit.push_back({{"endstate", vec_json(*u)}, {"min_abs_re_A1_B11inv", re}});
    re_min = std::min(re_min, re);
  }
  std::ostringstream g;
  g << states.size() << " profile states x " << omegas.size() << " directions";
  Verdict v = make_verdict("S3", std::min(det_min, re_min), tol, g.str());
  v.witnesses = wit;
  v.note = "margin = min(|det B(u, omega)| / |B|^n, min |Re spec(A1 B11^{-1})| at the endstates / scale)";
  return v;
}

inline Verdict check_S3_nondegeneracy(const ModelDef& m, const Profile& p, const std::vector<Vec>& omegas,
                                      double tol = 1e-8, int max_states = 201) {
  std::vector<Vec> states;
  std::size_t stride = std::max<std::size_t>(1, p.size() / std::max(1, max_states - 1));
  for (std::size_t i = 0; i < p.size(); i += stride) states.push_back(p.u[i]);
  states.push_back(p.u.back());
  return check_S3_nondegeneracy(m, states, p.u_minus, p.u_plus, omegas, tol);
}

struct S6Report {
  Verdict verdict;
  std::string branch;  // "symmetric", "semisimple", or "none"
};

inline S6Report check_S6_symmetry(const ModelDef& m, const Vec& u_plus, const Vec& u_minus,
                                  const std::vector<Vec>& omegas, const DissipativityTolerances& tol = {}) {
  bool symmetric = true, semisimple = true;
  double worst_asym = 0, worst_cond = 1;
  json wit = json::array();
  for (const Vec* u : {&u_minus, &u_plus}) {
    std::vector<std::vector<int>> reference;
    for (const auto& w : omegas) {
      auto rec = check_D1(m, *u, w, tol);
      std::vector<std::vector<int>> mult;
      for (const auto& g : rec.groups) {
        const CMat& M = g.restriction;
        double sc = std::max(1.0, scale_of(M));
        double asym = (M - M.adjoint()).cwiseAbs().maxCoeff() / sc;
        worst_asym = std::max(worst_asym, asym);
        if (asym > 1e-10) symmetric = false;
        auto ss = real_semisimple(M, tol);
        worst_cond = std::max(worst_cond, ss.condition);
        if (!(ss.condition <= tol.condition)) {
          semisimple = false;
          wit.push_back({{"state", vec_json(*u)}, {"omega", vec_json(w)}, {"mu", cplx_json(g.mu)},
                         {"condition", std::isfinite(ss.condition) ? json(ss.condition) : json("inf")}});
        }
        mult.push_back(ss.multiplicities);
      }
      if (reference.empty()) reference = mult;
      else if (mult != reference) {
        semisimple = false;
        wit.push_back({{"state", vec_json(*u)}, {"omega", vec_json(w)}, {"reason", "multiplicities change"}});
      }
    }
  }
  S6Report rep;
  std::ostringstream g;
  g << omegas.size() << " directions at both endstates";
  if (symmetric) {
    rep.branch = "symmetric";
    rep.verdict = make_verdict("S6", 1.0 - worst_asym / 1e-10, 0.0, g.str());
    rep.verdict.note = "certified by symmetry of every restriction";
  } else if (semisimple) {
    rep.branch = "semisimple";
    rep.verdict = make_verdict("S6", std::log10(tol.condition / worst_cond), 0.0, g.str());
    rep.verdict.note = "certified by semi-simple restrictions with constant multiplicities";
  } else {
    rep.branch = "none";
    rep.verdict = make_verdict("S6", -1.0, 0.0, g.str());
    rep.verdict.witnesses = wit;
    rep.verdict.note = "restriction neither symmetric nor semi-simple with constant multiplicities";
  }
  return rep;
}

// Pointwise stability along the profile, sampled with at most max_states states.
inline AlongProfileReport check_along_profile(const ModelDef& m, const Profile& p, const StabilityGrids& grids,
                                              int max_states = 41, const DissipativityTolerances& tol = {}) {
  std::vector<double> xs;
  std::vector<Vec> states;
  std::size_t stride = std::max<std::size_t>(1, (p.size() - 1) / std::max(1, max_states - 1));
  for (std::size_t i = 0; i < p.size(); i += stride) {
    xs.push_back(p.x[i]);
    states.push_back(p.u[i]);
  }
  if (xs.back() != p.x.back()) {
    xs.push_back(p.x.back());
    states.push_back(p.u.back());
  }
  return check_along_states(m, xs, states, grids, tol);
}

// ---------------------------------------------------------------------------------------------
// Columnar text format: one "# key=value" header line, a column header, then CSV rows.

inline std::string join_vec(const Vec& v) {
  std::ostringstream os;
  os.precision(17);
  for (int i = 0; i < v.size(); ++i) os << (i ? "," : "") << v(i);
  return os.str();
}

inline void write_profile(const Profile& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ConfigError, "cannot open " + path + " for writing");
  out.precision(17);
  out << "# n=" << p.n << " d=" << p.d << " u_minus=" << join_vec(p.u_minus) << " u_plus=" << join_vec(p.u_plus)
      << " delta=" << p.delta << " h=" << p.h << " L=" << p.L << " method=" << p.method
      << " phase_component=" << p.phase_component << " phase_value=" << p.phase_value << "\n";
  out << "x";
  for (int i = 0; i < p.n; ++i) out << ",u" << i + 1;
  for (int i = 0; i < p.n; ++i) out << ",du" << i + 1;
  out << "\n";
  for (std::size_t k = 0; k < p.size(); ++k) {
    out << p.x[k];
    for (int i = 0; i < p.n; ++i) out << "," << p.u[k](i);
    for (int i = 0; i < p.n; ++i) out << "," << p.du[k](i);
    out << "\n";
  }
}

inline Profile read_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("#", 0) != 0) fail(ErrorKind::ConfigError, path + ": missing profile header");
  std::map<std::string, std::string> kv;
  std::istringstream hs(line.substr(1));
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  auto need = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) fail(ErrorKind::ConfigError, path + ": header lacks " + k);
    return it->second;
  };
  auto parse_vec = [](const std::string& s) {
    std::vector<double> vals;
    std::istringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    return Vec(Eigen::Map<Vec>(vals.data(), vals.size()));
  };
  Profile p;
  p.n = std::stoi(need("n"));
  p.d = std::stoi(need("d"));
  p.u_minus = parse_vec(need("u_minus"));
  p.u_plus = parse_vec(need("u_plus"));
  p.delta = std::stod(need("delta"));
  if (kv.count("method")) p.method = kv["method"];
  if (kv.count("phase_component")) p.phase_component = std::stoi(kv["phase_component"]);
  if (kv.count("phase_value")) p.phase_value = std::stod(kv["phase_value"]);
  std::getline(in, line);  // column names
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Vec row = parse_vec(line);
    if (row.size() != 1 + 2 * p.n) fail(ErrorKind::ConfigError, path + ": malformed profile row");
    p.x.push_back(row(0));
    p.u.push_back(row.segment(1, p.n));
    p.du.push_back(row.segment(1 + p.n, p.n));
  }
  if (p.size() < 2) fail(ErrorKind::ConfigError, path + ": profile has fewer than two rows");
  p.h = (p.x.back() - p.x.front()) / double(p.size() - 1);
  p.L = p.x.back();
  return p;
}

}  // namespace hhshock
