#pragma once

#include "hhshock/dissipativity.hpp"
#include "hhshock/profile.hpp"

#include <Eigen/Sparse>
#include <fftw3.h>

#include <cstring>
#include <fstream>
#include <future>

namespace hhshock {

// Uniform x nodes x_i = -Lx + i dx (i = 0..nx-1), periodic y nodes y_j = j dy on [0, Ly).
struct SimGrid {
  int d = 2;
  int nx = 1024;
  int ny = 128;
  double Lx = 200;
  double Ly = 40;

  int nyy() const { return d == 2 ? ny : 1; }
  std::size_t points() const { return static_cast<std::size_t>(nx) * nyy(); }
  double dx() const { return 2 * Lx / (nx - 1); }
  double dy() const { return d == 2 ? Ly / ny : 1.0; }
  double x(int i) const { return -Lx + i * dx(); }
  double y(int j) const { return j * dy(); }
  void validate() const {
    if (d != 1 && d != 2) fail(ErrorKind::DomainError, "simulator supports d = 1 or 2");
    if (nx < 16) fail(ErrorKind::DomainError, "nx must be at least 16");
    if (d == 2 && (ny < 4 || ny % 2)) fail(ErrorKind::DomainError, "ny must be even and at least 4");
    if (!(Lx > 0) || (d == 2 && !(Ly > 0))) fail(ErrorKind::DomainError, "domain lengths must be positive");
  }
  json to_json() const { return {{"d", d}, {"nx", nx}, {"ny", nyy()}, {"Lx", Lx}, {"Ly", Ly}}; }
};

// nf scalar fields stored as data[(f * nx + i) * nyy + j].
struct Field {
  int nf = 0;
  SimGrid grid;
  std::vector<double> data;

  Field() = default;
  Field(const SimGrid& g, int nfields) : nf(nfields), grid(g), data(nfields * g.points(), 0.0) {}
  double& at(int f, int i, int j) { return data[(static_cast<std::size_t>(f) * grid.nx + i) * grid.nyy() + j]; }
  double at(int f, int i, int j) const { return data[(static_cast<std::size_t>(f) * grid.nx + i) * grid.nyy() + j]; }
  double* field(int f) { return data.data() + f * grid.points(); }
  const double* field(int f) const { return data.data() + f * grid.points(); }
};

inline Field make_field(const SimGrid& g, int nf, const std::function<Vec(double, double)>& fn) {
  Field out(g, nf);
  for (int i = 0; i < g.nx; ++i)
    for (int j = 0; j < g.nyy(); ++j) {
      Vec v = fn(g.x(i), g.y(j));
      if (v.size() != nf) fail(ErrorKind::DomainError, "field function returned the wrong number of components");
      for (int f = 0; f < nf; ++f) out.at(f, i, j) = v(f);
    }
  return out;
}

// x-dependent background state; constant endstates outside the profile's interval.
struct Background {
  Vec u_minus, u_plus;
  std::function<Vec(double)> value;
  std::function<Vec(double)> slope;
};

inline Background profile_background(const Profile& p) {
  auto sp = std::make_shared<Profile>(p);
  Background b;
  b.u_minus = p.u_minus;
  b.u_plus = p.u_plus;
  b.value = [sp](double x) {
    if (x <= sp->x.front()) return Vec(sp->u_minus);
    if (x >= sp->x.back()) return Vec(sp->u_plus);
    return sp->value_at(x);
  };
  b.slope = [sp](double x) {
    if (x <= sp->x.front() || x >= sp->x.back()) return Vec(Vec::Zero(sp->n));
    return sp->derivative_at(x);
  };
  return b;
}

inline Background constant_background(const Vec& u) {
  Background b;
  b.u_minus = b.u_plus = u;
  b.value = [u](double) { return u; };
  b.slope = [u](double) { return Vec(Vec::Zero(u.size())); };
  return b;
}

namespace detail {

// Spectral y-derivatives of `rows` contiguous rows of length ny.
class SpectralY {
 public:
  SpectralY(int rows, int ny, double Ly) : rows_(rows), ny_(ny), nc_(ny / 2 + 1) {
    re_ = fftw_alloc_real(static_cast<std::size_t>(rows) * ny);
    co_ = fftw_alloc_complex(static_cast<std::size_t>(rows) * nc_);
    tmp_ = fftw_alloc_complex(static_cast<std::size_t>(rows) * nc_);
    int n[] = {ny};
    fwd_ = fftw_plan_many_dft_r2c(1, n, rows, re_, nullptr, 1, ny, co_, nullptr, 1, nc_, FFTW_ESTIMATE);
    bwd_ = fftw_plan_many_dft_c2r(1, n, rows, tmp_, nullptr, 1, nc_, re_, nullptr, 1, ny, FFTW_ESTIMATE);
    k_.resize(nc_);
    for (int m = 0; m < nc_; ++m) k_[m] = 2 * M_PI * m / Ly;
  }
  SpectralY(const SpectralY&) = delete;
  SpectralY& operator=(const SpectralY&) = delete;
  ~SpectralY() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(re_);
    fftw_free(co_);
    fftw_free(tmp_);
  }

  // d1 and/or d2 may be null.
  void derivatives(const double* in, double* d1, double* d2) {
    std::memcpy(re_, in, sizeof(double) * rows_ * ny_);
    fftw_execute(fwd_);
    const double s = 1.0 / ny_;
    if (d1) apply(1, d1, s);
    if (d2) apply(2, d2, s);
  }

 private:
  void apply(int order, double* out, double s) {
    for (int r = 0; r < rows_; ++r)
      for (int m = 0; m < nc_; ++m) {
        const fftw_complex& c = co_[r * nc_ + m];
        fftw_complex& t = tmp_[r * nc_ + m];
        double k = k_[m];
        if (order == 1) {
          double f = (2 * m == ny_) ? 0.0 : k * s;
          t[0] = -f * c[1];
          t[1] = f * c[0];
        } else {
          t[0] = -k * k * s * c[0];
          t[1] = -k * k * s * c[1];
        }
      }
    fftw_execute(bwd_);
    std::memcpy(out, re_, sizeof(double) * rows_ * ny_);
  }

  int rows_, ny_, nc_;
  double* re_;
  fftw_complex* co_;
  fftw_complex* tmp_;
  fftw_plan fwd_, bwd_;
  std::vector<double> k_;
};

// Pointwise flux evaluation on strided fields; polynomial fluxes avoid per-point allocation.
class FluxEval {
 public:
  FluxEval(const ModelDef& m) : n_(m.n), d_(m.d), m_(&m) {
    poly_ = static_cast<int>(m.polynomial_flux.size()) == m.d;
    if (!poly_) return;
    for (const auto& f : m.polynomial_flux) {
      Term t;
      t.c.assign(f.constant.data(), f.constant.data() + n_);
      t.lin.resize(n_ * n_);
      for (int l = 0; l < n_; ++l)
        for (int q = 0; q < n_; ++q) t.lin[l * n_ + q] = f.linear(l, q);
      t.quad.assign(n_ * n_ * n_, 0.0);
      for (int l = 0; l < static_cast<int>(f.quadratic.size()); ++l)
        for (int q = 0; q < n_; ++q)
          for (int r = 0; r < n_; ++r) t.quad[(l * n_ + q) * n_ + r] = 0.5 * f.quadratic[l](q, r);
      t.zero = f.constant.isZero(0) && f.linear.isZero(0);
      for (const auto& qm : f.quadratic) t.zero = t.zero && qm.isZero(0);
      terms_.push_back(std::move(t));
    }
  }

  bool identically_zero(int j) const { return poly_ && terms_[j].zero; }

  // out[l * P + p] = f^j(u(p))_l where u(p)_q = u[q * P + p].
  void eval(int j, const double* u, double* out, std::size_t P) const {
    if (poly_) {
      const Term& t = terms_[j];
      double uq[8];
      for (std::size_t p = 0; p < P; ++p) {
        for (int q = 0; q < n_; ++q) uq[q] = u[q * P + p];
        for (int l = 0; l < n_; ++l) {
          double s = t.c[l];
          for (int q = 0; q < n_; ++q) {
            s += t.lin[l * n_ + q] * uq[q];
            const double* row = &t.quad[(l * n_ + q) * n_];
            for (int r = 0; r < n_; ++r) s += row[r] * uq[q] * uq[r];
          }
          out[l * P + p] = s;
        }
      }
      return;
    }
    Vec v(n_);
    for (std::size_t p = 0; p < P; ++p) {
      for (int q = 0; q < n_; ++q) v(q) = u[q * P + p];
      Vec f = m_->flux[j](v);
      for (int l = 0; l < n_; ++l) out[l * P + p] = f(l);
    }
  }

 private:
  struct Term {
    std::vector<double> c, lin, quad;
    bool zero = false;
  };
  int n_, d_;
  const ModelDef* m_;
  bool poly_ = false;
  std::vector<Term> terms_;
};

// Fourth-order x-derivatives of nf fields with two ghost nodes per side supplied by `ghost(f, g)`,
// g in {-2, -1, nx, nx + 1}.
inline void dx4(const double* in, int nf, const SimGrid& g, const std::function<double(int, int)>& ghost, double* d1,
                double* d2) {
  const int nx = g.nx, ny = g.nyy();
  const double h = g.dx();
  const std::size_t P = g.points();
  std::vector<double> pad((nx + 4) * static_cast<std::size_t>(ny));
  for (int f = 0; f < nf; ++f) {
    const double* src = in + f * P;
    std::memcpy(pad.data() + 2 * ny, src, sizeof(double) * P);
    for (int j = 0; j < ny; ++j) {
      pad[0 * ny + j] = ghost(f, -2);
      pad[1 * ny + j] = ghost(f, -1);
      pad[(nx + 2) * ny + j] = ghost(f, nx);
      pad[(nx + 3) * ny + j] = ghost(f, nx + 1);
    }
    for (int i = 0; i < nx; ++i) {
      const double* a = pad.data() + i * ny;  // rows i-2 .. i+2 at a, a+ny, ...
      for (int j = 0; j < ny; ++j) {
        double m2 = a[j], m1 = a[ny + j], c0 = a[2 * ny + j], p1 = a[3 * ny + j], p2 = a[4 * ny + j];
        if (d1) d1[f * P + i * ny + j] = (m2 - 8 * m1 + 8 * p1 - p2) / (12 * h);
        if (d2) d2[f * P + i * ny + j] = (-m2 + 16 * m1 - 30 * c0 + 16 * p1 - p2) / (12 * h * h);
      }
    }
  }
}

inline std::vector<double> sponge_profile(const SimGrid& g, double fraction, double strength) {
  std::vector<double> s(g.nx, 0.0);
  if (fraction <= 0) return s;
  const double xs = (1 - fraction) * g.Lx;
  for (int i = 0; i < g.nx; ++i) {
    double ax = std::abs(g.x(i));
    if (ax > xs) s[i] = strength * std::pow((ax - xs) / (g.Lx - xs), 2);
  }
  return s;
}

inline Mat mat_inverse_checked(const Mat& a, const char* what) {
  Eigen::FullPivLU<Mat> lu(a);
  if (!lu.isInvertible()) fail(ErrorKind::SingularA, std::string(what) + " is singular");
  return lu.inverse();
}

inline std::vector<double> flat(const Mat& a) {
  std::vector<double> out(a.size());
  for (int l = 0; l < a.rows(); ++l)
    for (int q = 0; q < a.cols(); ++q) out[l * a.cols() + q] = a(l, q);
  return out;
}

inline bool g_is_identity(const ModelDef& m) {
  for (double s : {-0.7, 0.3, 1.1}) {
    Vec u = Vec::Constant(m.n, s);
    for (int q = 0; q < m.n; ++q) u(q) += 0.1 * q;
    if ((m.g(u) - u).norm() > 1e-12 * (1 + u.norm())) return false;
  }
  return true;
}

}  // namespace detail

struct SimOptions {
  double T = 200;
  double cfl = 0.5;
  double dt = 0;  // 0: derived from cfl
  double sponge_fraction = 0.1;
  double sponge_strength = 1.0;
  int samples = 48;
  double t_first = 0.1;
  std::vector<double> p_values = {4.0};
  bool detect_blowup = true;
  double blowup_floor = 1e-3;  // L2 level below which growth is not treated as blowup
  double support_threshold = 1e-8;  // relative amplitude defining the perturbation support
  bool discrete_background = true;  // replace the profile by the scheme's own steady state
};

struct DecaySeries {
  int d = 2;
  std::vector<double> p_values;
  std::vector<double> t, L2, Linf, Sobolev2, ut_L2;
  std::vector<std::vector<double>> Lp;  // Lp[k][sample]
  double t_boundary = std::numeric_limits<double>::infinity();

  const std::vector<double>& column(const std::string& name) const {
    if (name == "L2") return L2;
    if (name == "Linf") return Linf;
    if (name == "Sobolev2") return Sobolev2;
    if (name == "ut_L2") return ut_L2;
    for (size_t k = 0; k < p_values.size(); ++k)
      if (name == "L" + format_p(p_values[k])) return Lp[k];
    fail(ErrorKind::DomainError, "unknown norm column '" + name + "'");
  }
  // -(d-1)/2 (1 - 1/p) for Lebesgue norms, -(d-1)/4 for the Sobolev proxy; NaN where no bound is stated.
  double target(const std::string& name) const {
    const double k = d - 1;
    if (name == "L2" || name == "Sobolev2") return -k / 4;
    if (name == "Linf") return -k / 2;
    for (double p : p_values)
      if (name == "L" + format_p(p)) return -k / 2 * (1 - 1 / p);
    return std::numeric_limits<double>::quiet_NaN();
  }
  static std::string format_p(double p) {
    std::ostringstream os;
    os << p;
    return os.str();
  }
};

struct DecayFit {
  std::string column;
  double exponent = 0;
  double ci = 0;  // 95% half-width
  double target = 0;
  double gap = 0;
  double t0 = 0, t1 = 0;
  int samples = 0;
  json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"column", column}, {"exponent", exponent}, {"ci95", ci},      {"target", num(target)},
            {"gap", num(gap)},  {"t0", t0},             {"t1", t1},       {"samples", samples}};
  }
};

// Least squares of log norm against log(1 + t) over [t0, t1]; the window must span a decade in 1 + t.
inline DecayFit measure_decay(const DecaySeries& s, const std::string& column, double t0, double t1) {
  if (!((1 + t1) >= 10 * (1 + t0) * (1 - 1e-9)))
    fail(ErrorKind::WindowTooShort, "fit window spans less than one decade in 1 + t");
  const auto& v = s.column(column);
  std::vector<double> xs, ys;
  for (size_t k = 0; k < s.t.size(); ++k)
    if (s.t[k] >= t0 - 1e-12 && s.t[k] <= t1 + 1e-12 && v[k] > 0) {
      xs.push_back(std::log1p(s.t[k]));
      ys.push_back(std::log(v[k]));
    }
  const int n = static_cast<int>(xs.size());
  if (n < 3) fail(ErrorKind::WindowTooShort, "fewer than three samples in the fit window");
  double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n, my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (int k = 0; k < n; ++k) sxx += (xs[k] - mx) * (xs[k] - mx), sxy += (xs[k] - mx) * (ys[k] - my);
  DecayFit f;
  f.column = column;
  f.exponent = sxy / sxx;
  double rss = 0;
  for (int k = 0; k < n; ++k) {
    double r = ys[k] - (my + f.exponent * (xs[k] - mx));
    rss += r * r;
  }
  f.ci = n > 2 ? 1.96 * std::sqrt(rss / (n - 2) / sxx) : 0.0;
  f.target = s.target(column);
  f.gap = f.exponent - f.target;
  f.t0 = t0;
  f.t1 = t1;
  f.samples = n;
  return f;
}

// Pre-boundary decade: [ (1 + t1) / 10 - 1, t1 ] with t1 = min(T, t_boundary).
inline DecayFit measure_decay(const DecaySeries& s, const std::string& column) {
  double t1 = std::min(s.t.empty() ? 0.0 : s.t.back(), s.t_boundary);
  double t0 = (1 + t1) / 10 - 1;
  if (t0 < 0) fail(ErrorKind::WindowTooShort, "pre-boundary window is shorter than one decade");
  return measure_decay(s, column, t0, t1);
}

inline void write_series_csv(const DecaySeries& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ConfigError, "cannot write " + path);
  out.precision(12);
  out << "t,L2";
  for (double p : s.p_values) out << ",L" << DecaySeries::format_p(p);
  out << ",Linf,Sobolev2,ut_L2\n";
  for (size_t k = 0; k < s.t.size(); ++k) {
    out << s.t[k] << ',' << s.L2[k];
    for (const auto& c : s.Lp) out << ',' << c[k];
    out << ',' << s.Linf[k] << ',' << s.Sobolev2[k] << ',' << s.ut_L2[k] << '\n';
  }
}

// Flat binary snapshot: a short text header terminated by "end\n", then nf * nx * ny doubles
// (host byte order, layout [field][x][y]).
inline void write_snapshot(const Field& f, const std::vector<std::string>& names, double t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::ConfigError, "cannot write " + path);
  out.precision(17);
  out << "hhshock-field 1\n"
      << "dims " << f.nf << ' ' << f.grid.nx << ' ' << f.grid.nyy() << '\n'
      << "dx " << f.grid.dx() << " dy " << f.grid.dy() << '\n'
      << "x0 " << -f.grid.Lx << '\n'
      << "t " << t << '\n'
      << "fields";
  for (const auto& n : names) out << ' ' << n;
  out << "\nend\n";
  out.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(sizeof(double) * f.data.size()));
}

struct Snapshot {
  int nf = 0, nx = 0, ny = 0;
  double dx = 0, dy = 0, x0 = 0, t = 0;
  std::vector<std::string> names;
  std::vector<double> data;
};

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::ConfigError, "cannot read " + path);
  Snapshot s;
  std::string line, key;
  std::getline(in, line);
  if (line != "hhshock-field 1") fail(ErrorKind::ConfigError, path + ": not a field snapshot");
  while (std::getline(in, line) && line != "end") {
    std::istringstream ls(line);
    ls >> key;
    if (key == "dims") ls >> s.nf >> s.nx >> s.ny;
    else if (key == "dx") ls >> s.dx >> key >> s.dy;
    else if (key == "x0") ls >> s.x0;
    else if (key == "t") ls >> s.t;
    else if (key == "fields")
      for (std::string n; ls >> n;) s.names.push_back(n);
  }
  s.data.resize(static_cast<std::size_t>(s.nf) * s.nx * s.ny);
  in.read(reinterpret_cast<char*>(s.data.data()), static_cast<std::streamsize>(sizeof(double) * s.data.size()));
  if (!in) fail(ErrorKind::ConfigError, path + ": truncated snapshot");
  return s;
}

namespace detail {

// Norms of the first n fields of `e` (pointwise Euclidean magnitude), with the order-2 Sobolev proxy
// from the solver's own derivative operators.
struct NormSet {
  double L2 = 0, Linf = 0, H2 = 0;
  std::vector<double> Lp;
};

inline NormSet norms(const double* e, int n, const SimGrid& g, const std::vector<double>& ps, SpectralY* sy) {
  const std::size_t P = g.points();
  const double w = g.dx() * g.dy();
  NormSet out;
  out.Lp.assign(ps.size(), 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0;
    for (int l = 0; l < n; ++l) s += e[l * P + p] * e[l * P + p];
    double a = std::sqrt(s);
    out.L2 += s;
    out.Linf = std::max(out.Linf, a);
    for (size_t k = 0; k < ps.size(); ++k) out.Lp[k] += std::pow(a, ps[k]);
  }
  std::vector<double> ex(n * P), exx(n * P);
  auto zero = [](int, int) { return 0.0; };
  dx4(e, n, g, zero, ex.data(), exx.data());
  double h2 = out.L2;
  for (std::size_t q = 0; q < n * P; ++q) h2 += ex[q] * ex[q] + exx[q] * exx[q];
  if (g.d == 2) {
    std::vector<double> ey(n * P), eyy(n * P), exy(n * P);
    for (int l = 0; l < n; ++l) sy->derivatives(e + l * P, ey.data() + l * P, eyy.data() + l * P);
    dx4(ey.data(), n, g, zero, exy.data(), nullptr);
    for (std::size_t q = 0; q < n * P; ++q) h2 += ey[q] * ey[q] + eyy[q] * eyy[q] + 2 * exy[q] * exy[q];
  }
  out.L2 = std::sqrt(out.L2 * w);
  out.H2 = std::sqrt(h2 * w);
  for (size_t k = 0; k < ps.size(); ++k) out.Lp[k] = std::pow(out.Lp[k] * w, 1 / ps[k]);
  return out;
}

inline std::vector<long> sample_steps(double T, double dt, long nsteps, int samples, double t_first) {
  std::vector<long> out = {0};
  if (samples < 2 || T <= 0) {
    out.push_back(nsteps);
    return out;
  }
  double a = std::log(std::max(t_first, dt)), b = std::log(T);
  for (int k = 0; k < samples; ++k) {
    long s = std::lround(std::exp(a + (b - a) * k / (samples - 1)) / dt);
    s = std::clamp(s, 1L, nsteps);
    if (s > out.back()) out.push_back(s);
  }
  if (out.back() != nsteps) out.push_back(nsteps);
  return out;
}

inline double support_radius(const Field& pert, int nf, double threshold) {
  double mx = 0;
  for (std::size_t q = 0; q < nf * pert.grid.points(); ++q) mx = std::max(mx, std::abs(pert.data[q]));
  if (mx == 0) return 0;
  double r = 0;
  for (int f = 0; f < nf; ++f)
    for (int i = 0; i < pert.grid.nx; ++i)
      for (int j = 0; j < pert.grid.nyy(); ++j)
        if (std::abs(pert.at(f, i, j)) > threshold * mx) r = std::max(r, std::abs(pert.grid.x(i)));
  return r;
}

inline void check_support(const Field& pert, int nf, const SimOptions& opt) {
  double mx = 0;
  for (std::size_t q = 0; q < nf * pert.grid.points(); ++q) mx = std::max(mx, std::abs(pert.data[q]));
  if (mx == 0 || opt.sponge_fraction <= 0) return;
  const double xs = (1 - opt.sponge_fraction) * pert.grid.Lx;
  for (int f = 0; f < nf; ++f)
    for (int i = 0; i < pert.grid.nx; ++i)
      if (std::abs(pert.grid.x(i)) > xs)
        for (int j = 0; j < pert.grid.nyy(); ++j)
          if (std::abs(pert.at(f, i, j)) > 1e-10 * mx)
            fail(ErrorKind::PreconditionError, "perturbation reaches into the sponge layer");
}

// Largest wave speed of the principal part: roots c of B(w) - c C(w) - c^2 A = 0 over directions w.
inline double principal_speed(const Mat& a, const std::vector<std::vector<Mat>>& b, const std::vector<Mat>& c, int d) {
  const int n = static_cast<int>(a.rows());
  Mat ai = mat_inverse_checked(a, "script A");
  double cmax = 0;
  const int dirs = d == 1 ? 2 : 32;
  for (int k = 0; k < dirs; ++k) {
    double th = 2 * M_PI * k / dirs;
    Vec w = d == 1 ? Vec::Constant(1, k == 0 ? 1.0 : -1.0) : (Vec(2) << std::cos(th), std::sin(th)).finished();
    Mat bw = Mat::Zero(n, n), cw = Mat::Zero(n, n);
    for (int j = 0; j < d; ++j) {
      cw += w(j) * c[j];
      for (int l = 0; l < d; ++l) bw += w(j) * w(l) * b[j][l];
    }
    Mat comp = Mat::Zero(2 * n, 2 * n);
    comp.topRightCorner(n, n) = Mat::Identity(n, n);
    comp.bottomLeftCorner(n, n) = ai * bw;
    comp.bottomRightCorner(n, n) = -ai * cw;
    CVec ev = eigenvalues(to_complex(comp));
    for (int q = 0; q < ev.size(); ++q) cmax = std::max(cmax, std::abs(ev(q)));
  }
  return cmax;
}

}  // namespace detail

struct SimState {
  SimGrid grid;
  int n = 1;
  Field u, w, ubar;
  double t = 0;
  std::string boundary;
};

struct SimResult {
  DecaySeries series;
  SimState final_state;
  double dt = 0;
  double cfl = 0;
  long steps = 0;
  double c_max = 0;
  double support_radius = 0;
  double max_deviation = 0;  // sup over samples of the Linf deviation
  json to_json() const {
    return {{"dt", dt},
            {"cfl", cfl},
            {"steps", steps},
            {"c_max", c_max},
            {"support_radius", support_radius},
            {"t_boundary", series.t_boundary},
            {"max_deviation", max_deviation}};
  }
};

// Semilinear second-order system (constant script A, B, C0, C1; g(u) = u) as a first-order system in
// (u, w = u_t): FD4 in x, spectral in y, RK4 in time, sponge layers relaxing to the background.
class SecondOrderSolver {
 public:
  SecondOrderSolver(const ModelDef& m, const Background& bg, const SimGrid& g, const SimOptions& opt)
      : m_(m), g_(g), opt_(opt), flux_(m), n_(m.n), P_(g.points()) {
    g.validate();
    if (!m.constant_coefficients)
      fail(ErrorKind::QuasilinearUnsupported, "the default scheme needs constant script A, B, C");
    if (!detail::g_is_identity(m)) fail(ErrorKind::QuasilinearUnsupported, "the default scheme needs g(u) = u");
    if (m.d != g.d) fail(ErrorKind::DomainError, "grid dimension does not match the model");
    Vec u0 = bg.u_minus;
    Mat acal = m.coef_a(u0);
    ainv_ = detail::flat(detail::mat_inverse_checked(acal, "script A"));
    std::vector<std::vector<Mat>> b(m.d, std::vector<Mat>(m.d));
    std::vector<Mat> c(m.d);
    for (int j = 0; j < m.d; ++j) {
      c[j] = m.coef_c0(u0, j) + m.coef_c1(u0, j);
      for (int k = 0; k < m.d; ++k) b[j][k] = m.coef_b(u0, j, k);
    }
    bxx_ = detail::flat(b[0][0]);
    cx_ = detail::flat(c[0]);
    if (m.d == 2) {
      bxy_ = detail::flat(b[0][1] + b[1][0]);
      byy_ = detail::flat(b[1][1]);
      cy_ = detail::flat(c[1]);
      sy_ = std::make_unique<detail::SpectralY>(g.nx, g.ny, g.Ly);
    }
    c_max_ = detail::principal_speed(acal, b, c, m.d);
    double kx = 2.3094 / g.dx(), ky = g.d == 2 ? M_PI / g.dy() : 0.0;
    double damp = eigenvalues(to_complex(Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(
                                  ainv_.data(), n_, n_))).cwiseAbs().maxCoeff();
    dt_stable_ = std::min(2.8 / std::max(1e-300, c_max_ * std::hypot(kx, ky)), 2.7 / damp);
    sponge_ = detail::sponge_profile(g, opt.sponge_fraction, opt.sponge_strength);
    ubar_ = Field(g, n_);
    for (int i = 0; i < g.nx; ++i) {
      Vec v = bg.value(g.x(i));
      for (int l = 0; l < n_; ++l)
        for (int j = 0; j < g.nyy(); ++j) ubar_.at(l, i, j) = v(l);
    }
    const double h = g.dx();
    for (int s = 0; s < 4; ++s) {
      int gi = s < 2 ? s - 2 : g.nx + s - 2;
      Vec v = bg.value(-g.Lx + gi * h);
      ghost_u_.push_back(std::vector<double>(v.data(), v.data() + n_));
      std::vector<std::vector<double>> fl;
      for (int j = 0; j < m.d; ++j) {
        Vec f = m.flux[j](v);
        fl.push_back(std::vector<double>(f.data(), f.data() + n_));
      }
      ghost_f_.push_back(fl);
    }
    if (opt.discrete_background && (bg.u_minus - bg.u_plus).norm() > 0) polish_background(m, bg, b[0][0]);
  }

  double c_max() const { return c_max_; }
  double dt_stable() const { return dt_stable_; }
  const Field& ubar() const { return ubar_; }
  double background_residual() const { return bg_residual_; }
  int background_newton_steps() const { return bg_newton_; }

  // U = [u fields, w fields]
  void rhs(const std::vector<double>& U, std::vector<double>& dU) {
    const std::size_t nP = n_ * P_;
    const double* u = U.data();
    const double* w = U.data() + nP;
    f0_.resize(nP);
    fx_.resize(nP);
    uxx_.resize(nP);
    wx_.resize(nP);
    flux_.eval(0, u, f0_.data(), P_);
    auto gidx = [&](int gi) { return gi < 0 ? gi + 2 : gi - g_.nx + 2; };
    detail::dx4(f0_.data(), n_, g_, [&](int f, int gi) { return ghost_f_[gidx(gi)][0][f]; }, fx_.data(), nullptr);
    detail::dx4(u, n_, g_, [&](int f, int gi) { return ghost_u_[gidx(gi)][f]; }, nullptr, uxx_.data());
    auto zero = [](int, int) { return 0.0; };
    detail::dx4(w, n_, g_, zero, wx_.data(), nullptr);
    const bool two = g_.d == 2;
    if (two) {
      uy_.resize(nP), uyy_.resize(nP), uxy_.resize(nP), wy_.resize(nP), f1y_.resize(nP), f1_.resize(nP);
      for (int l = 0; l < n_; ++l) {
        sy_->derivatives(u + l * P_, uy_.data() + l * P_, uyy_.data() + l * P_);
        sy_->derivatives(w + l * P_, wy_.data() + l * P_, nullptr);
      }
      if (flux_.identically_zero(1)) {
        std::fill(f1y_.begin(), f1y_.end(), 0.0);
      } else {
        flux_.eval(1, u, f1_.data(), P_);
        for (int l = 0; l < n_; ++l) sy_->derivatives(f1_.data() + l * P_, f1y_.data() + l * P_, nullptr);
      }
      detail::dx4(uy_.data(), n_, g_, zero, uxy_.data(), nullptr);
    }
    dU.resize(2 * nP);
    const int ny = g_.nyy();
    double tmp[8];
    for (std::size_t p = 0; p < P_; ++p) {
      const double sg = sponge_[p / ny];
      for (int l = 0; l < n_; ++l) {
        double s = -w[l * P_ + p] - fx_[l * P_ + p];
        if (two) s -= f1y_[l * P_ + p];
        for (int q = 0; q < n_; ++q) {
          s += bxx_[l * n_ + q] * uxx_[q * P_ + p] + cx_[l * n_ + q] * wx_[q * P_ + p];
          if (two)
            s += bxy_[l * n_ + q] * uxy_[q * P_ + p] + byy_[l * n_ + q] * uyy_[q * P_ + p] +
                 cy_[l * n_ + q] * wy_[q * P_ + p];
        }
        tmp[l] = s;
      }
      for (int l = 0; l < n_; ++l) {
        double s = 0;
        for (int q = 0; q < n_; ++q) s += ainv_[l * n_ + q] * tmp[q];
        dU[nP + l * P_ + p] = s - sg * w[l * P_ + p];
        dU[l * P_ + p] = w[l * P_ + p] - sg * (u[l * P_ + p] - ubar_.data[l * P_ + p]);
      }
    }
  }

  // pert = phi - ubar, psi = u_t at t = 0 (n fields each).
  SimResult run(const Field& pert, const Field& psi) {
    if (pert.nf != n_ || psi.nf != n_) fail(ErrorKind::DomainError, "initial data must have n fields");
    detail::check_support(pert, n_, opt_);
    detail::check_support(psi, n_, opt_);
    const std::size_t nP = n_ * P_;
    std::vector<double> U(2 * nP);
    for (std::size_t q = 0; q < nP; ++q) U[q] = ubar_.data[q] + pert.data[q], U[nP + q] = psi.data[q];
    double dt = opt_.dt > 0 ? opt_.dt : opt_.cfl * dt_stable_;
    long nsteps = std::max(1L, static_cast<long>(std::ceil(opt_.T / dt - 1e-9)));
    dt = opt_.T / nsteps;
    SimResult res;
    res.dt = dt;
    res.cfl = dt / dt_stable_;
    if (res.cfl > 0.9) {
      std::ostringstream os;
      os << "CFL number " << res.cfl << " exceeds 0.9";
      fail(ErrorKind::CFLViolation, os.str());
    }
    res.steps = nsteps;
    res.c_max = c_max_;
    res.support_radius = detail::support_radius(pert, n_, opt_.support_threshold);
    auto& s = res.series;
    s.d = g_.d;
    s.p_values = opt_.p_values;
    s.Lp.assign(opt_.p_values.size(), {});
    s.t_boundary = 0.8 * (g_.Lx - res.support_radius) / c_max_;
    auto stops = detail::sample_steps(opt_.T, dt, nsteps, opt_.samples, opt_.t_first);
    std::vector<double> k1, k2, k3, k4, tmp(2 * nP), e(nP);
    long step = 0;
    for (long stop : stops) {
      for (; step < stop; ++step) {
        rhs(U, k1);
        for (std::size_t q = 0; q < 2 * nP; ++q) tmp[q] = U[q] + 0.5 * dt * k1[q];
        rhs(tmp, k2);
        for (std::size_t q = 0; q < 2 * nP; ++q) tmp[q] = U[q] + 0.5 * dt * k2[q];
        rhs(tmp, k3);
        for (std::size_t q = 0; q < 2 * nP; ++q) tmp[q] = U[q] + dt * k3[q];
        rhs(tmp, k4);
        for (std::size_t q = 0; q < 2 * nP; ++q) U[q] += dt / 6 * (k1[q] + 2 * k2[q] + 2 * k3[q] + k4[q]);
      }
      for (std::size_t q = 0; q < nP; ++q) e[q] = U[q] - ubar_.data[q];
      auto nrm = detail::norms(e.data(), n_, g_, opt_.p_values, sy_.get());
      auto wn = detail::norms(U.data() + nP, n_, g_, {}, sy_.get());
      if (!std::isfinite(nrm.L2) || !std::isfinite(wn.L2)) fail(ErrorKind::BlowupDetected, "solution is not finite");
      if (opt_.detect_blowup && !s.L2.empty() && nrm.L2 > 10 * std::max(s.L2.back(), opt_.blowup_floor)) {
        std::ostringstream os;
        os << "L2 deviation grew from " << s.L2.back() << " to " << nrm.L2 << " over one sample interval";
        fail(ErrorKind::BlowupDetected, os.str());
      }
      s.t.push_back(step * dt);
      s.L2.push_back(nrm.L2);
      s.Linf.push_back(nrm.Linf);
      s.Sobolev2.push_back(nrm.H2);
      s.ut_L2.push_back(wn.L2);
      for (size_t k = 0; k < nrm.Lp.size(); ++k) s.Lp[k].push_back(nrm.Lp[k]);
      res.max_deviation = std::max(res.max_deviation, nrm.Linf);
    }
    auto& st = res.final_state;
    st.grid = g_;
    st.n = n_;
    st.u = Field(g_, n_);
    st.w = Field(g_, n_);
    std::copy(U.begin(), U.begin() + nP, st.u.data.begin());
    std::copy(U.begin() + nP, U.end(), st.w.data.begin());
    st.ubar = ubar_;
    st.t = opt_.T;
    st.boundary = "sponge fraction " + std::to_string(opt_.sponge_fraction) + ", ghost nodes at the background";
    return res;
  }

 private:
  // Newton on the x-only steady equations -D1 f^1(u) + B^{11} D2 u = 0 (FD4, ghost nodes at the endstates),
  // bordered by a phase condition against the profile slope and a slack along the constant vector, which
  // absorbs the exponentially small boundary imbalance of the nearly translation-invariant problem.
  void polish_background(const ModelDef& m, const Background& bg, const Mat& b11) {
    const int nx = g_.nx, n = n_, ny = g_.nyy();
    const double h = g_.dx();
    const double c1[5] = {1 / (12 * h), -8 / (12 * h), 0, 8 / (12 * h), -1 / (12 * h)};
    const double c2[5] = {-1 / (12 * h * h), 16 / (12 * h * h), -30 / (12 * h * h), 16 / (12 * h * h),
                          -1 / (12 * h * h)};
    std::vector<Vec> u(nx), phi(nx);
    for (int i = 0; i < nx; ++i) u[i] = bg.value(g_.x(i)), phi[i] = bg.slope(g_.x(i));
    double pn = 0;
    for (const auto& v : phi) pn += v.squaredNorm();
    pn = std::sqrt(pn);
    if (pn == 0) return;
    for (auto& v : phi) v /= pn;
    const std::vector<Vec> uref = u;
    auto value = [&](int k) -> Vec {
      if (k >= 0 && k < nx) return u[k];
      return Eigen::Map<const Vec>(ghost_u_[k < 0 ? k + 2 : k - nx + 2].data(), n);
    };
    auto jac = [&](const Vec& v) { return m.flux_jacobian.empty() ? fd_jacobian(m.flux[0], v) : m.flux_jacobian[0](v); };
    const int N = n * nx + 1;
    double s = 0;
    auto residual = [&](Vec& r) {
      r.setZero(N);
      for (int i = 0; i < nx; ++i) {
        Vec acc = Vec::Zero(n);
        for (int q = 0; q < 5; ++q) {
          Vec v = value(i + q - 2);
          acc += -c1[q] * m.flux[0](v) + c2[q] * (b11 * v);
        }
        r.segment(i * n, n) = acc + Vec::Constant(n, s);
      }
      double ph = 0;
      for (int i = 0; i < nx; ++i) ph += phi[i].dot(u[i] - uref[i]);
      r(N - 1) = ph;
    };
    Vec r;
    residual(r);
    double scale = 1;
    for (const auto& v : u) scale = std::max(scale, v.cwiseAbs().maxCoeff());
    for (bg_newton_ = 0; bg_newton_ < 30; ++bg_newton_) {
      if (r.head(N - 1).cwiseAbs().maxCoeff() <= 1e-14 * scale / (h * h)) break;
      std::vector<Eigen::Triplet<double>> trip;
      for (int i = 0; i < nx; ++i) {
        for (int q = 0; q < 5; ++q) {
          int k = i + q - 2;
          if (k < 0 || k >= nx) continue;
          Mat blk = -c1[q] * jac(u[k]) + c2[q] * b11;
          for (int a = 0; a < n; ++a)
            for (int c = 0; c < n; ++c)
              if (blk(a, c) != 0.0) trip.emplace_back(i * n + a, k * n + c, blk(a, c));
        }
        for (int a = 0; a < n; ++a) trip.emplace_back(i * n + a, N - 1, 1.0);
        for (int c = 0; c < n; ++c)
          if (phi[i](c) != 0.0) trip.emplace_back(N - 1, i * n + c, phi[i](c));
      }
      Eigen::SparseMatrix<double> J(N, N);
      J.setFromTriplets(trip.begin(), trip.end());
      Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
      lu.compute(J);
      if (lu.info() != Eigen::Success) fail(ErrorKind::ConvergenceError, "discrete background Jacobian is singular");
      Vec du = lu.solve(-r);
      for (int i = 0; i < nx; ++i) u[i] += du.segment(i * n, n);
      s += du(N - 1);
      residual(r);
    }
    bg_residual_ = r.head(N - 1).cwiseAbs().maxCoeff();
    if (bg_residual_ > 1e-10 * scale / (h * h))
      fail(ErrorKind::ConvergenceError, "discrete background did not converge");
    for (int i = 0; i < nx; ++i)
      for (int l = 0; l < n; ++l)
        for (int j = 0; j < ny; ++j) ubar_.at(l, i, j) = u[i](l);
  }

  const ModelDef& m_;
  SimGrid g_;
  SimOptions opt_;
  detail::FluxEval flux_;
  int n_;
  std::size_t P_;
  std::vector<double> ainv_, bxx_, bxy_, byy_, cx_, cy_;
  std::unique_ptr<detail::SpectralY> sy_;
  double c_max_ = 0, dt_stable_ = 0;
  std::vector<double> sponge_;
  Field ubar_;
  std::vector<std::vector<double>> ghost_u_;
  std::vector<std::vector<std::vector<double>>> ghost_f_;
  std::vector<double> f0_, f1_, fx_, uxx_, wx_, uy_, uyy_, uxy_, wy_, f1y_;
  double bg_residual_ = 0;
  int bg_newton_ = 0;
};

inline SimResult simulate_second_order(const ModelDef& m, const Background& bg, const SimGrid& g, const Field& pert,
                                       const Field& psi, const SimOptions& opt = {}) {
  SecondOrderSolver s(m, bg, g, opt);
  return s.run(pert, psi);
}

// ---------------------------------------------------------------------------------------------
// Generalized Jin-Xin relaxation system in (u, v^1..v^d):
//   A u_t - sum_i Cs^i u_{x_i} + sum_i v^i_{x_i} = 0
//   v^i_t + sum_j Bp^{ij} u_{x_j} = f^i(u) - A^{-1} (v^i - Cs^i u)
// with Cs^i = C1^i + C0^i and Bp^{ij} the coefficient of d_i(. d_j u), i.e. coef_b(j, i).

struct JinXinSystem {
  int n = 1, d = 1;
  Mat A, Ainv;
  std::vector<Mat> Cs;
  std::vector<std::vector<Mat>> Bp;
  std::vector<Mat> M;  // U_t + sum_j M_j U_{x_j} = source, U = (u, v^1, ..., v^d)
  int fields() const { return n * (1 + d); }
  Mat relax_exp(double tau) const {  // exp(-A^{-1} tau)
    Eigen::ComplexEigenSolver<CMat> es(to_complex(Ainv));
    CVec ex = (-tau * es.eigenvalues().array()).exp();
    CMat v = es.eigenvectors();
    return (v * ex.asDiagonal() * v.inverse()).real();
  }
  json to_json() const {
    json b = json::array();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) b.push_back({{"i", i + 1}, {"j", j + 1}, {"B", mat_json(Bp[i][j])}});
    json cs = json::array();
    for (const auto& c : Cs) cs.push_back(mat_json(c));
    return {{"n", n}, {"d", d}, {"fields", fields()}, {"A", mat_json(A)}, {"C_sum", cs}, {"B", b}};
  }
  static json mat_json(const Mat& a) {
    json r = json::array();
    for (int l = 0; l < a.rows(); ++l) {
      json row = json::array();
      for (int q = 0; q < a.cols(); ++q) row.push_back(a(l, q));
      r.push_back(row);
    }
    return r;
  }
};

inline JinXinSystem jinxin_assemble(const ModelDef& m) {
  if (!m.constant_coefficients) fail(ErrorKind::NotSemilinear, "relaxation form needs constant script A, B, C");
  if (!detail::g_is_identity(m)) fail(ErrorKind::GNotIdentity, "relaxation form needs g(u) = u");
  JinXinSystem s;
  s.n = m.n;
  s.d = m.d;
  Vec u0 = Vec::Zero(m.n);
  s.A = m.coef_a(u0);
  s.Ainv = detail::mat_inverse_checked(s.A, "script A");
  s.Bp.assign(m.d, std::vector<Mat>(m.d));
  for (int i = 0; i < m.d; ++i) {
    s.Cs.push_back(m.coef_c0(u0, i) + m.coef_c1(u0, i));
    for (int j = 0; j < m.d; ++j) s.Bp[i][j] = m.coef_b(u0, j, i);
  }
  const int n = m.n, N = s.fields();
  for (int j = 0; j < m.d; ++j) {
    Mat mj = Mat::Zero(N, N);
    mj.topLeftCorner(n, n) = -s.Ainv * s.Cs[j];
    mj.block(0, n * (1 + j), n, n) = s.Ainv;
    for (int i = 0; i < m.d; ++i) mj.block(n * (1 + i), 0, n, n) = s.Bp[i][j];
    s.M.push_back(mj);
  }
  return s;
}

enum class JinXinInit { ZeroPsi, DivergenceForm, Equilibrium };

inline const char* to_string(JinXinInit k) {
  switch (k) {
    case JinXinInit::ZeroPsi: return "zero_psi";
    case JinXinInit::DivergenceForm: return "divergence_form";
    case JinXinInit::Equilibrium: return "equilibrium";
  }
  return "?";
}

inline JinXinInit parse_jinxin_init(const std::string& s) {
  if (s == "zero_psi") return JinXinInit::ZeroPsi;
  if (s == "divergence_form") return JinXinInit::DivergenceForm;
  if (s == "equilibrium") return JinXinInit::Equilibrium;
  fail(ErrorKind::ConfigError, "unknown relaxation initialization '" + s + "'");
}

struct RelaxationState {
  SimGrid grid;
  int n = 1, d = 1;
  Field U;           // n (1 + d) fields: u, then v^1, ..., v^d
  Field implied_psi; // u_t at t = 0 implied by v
  double t = 0;
  double residual = 0;
  JinXinInit mode = JinXinInit::ZeroPsi;
};

namespace detail {

// sum_i D_i (q^i) with FD4 in x (edge values repeated) and spectral y; q holds d blocks of n fields.
inline std::vector<double> divergence(const std::vector<double>& q, int n, const SimGrid& g) {
  const std::size_t P = g.points(), nP = n * P;
  std::vector<double> out(nP, 0.0), tmp(nP);
  auto edge = [&](const double* base) {
    return [&g, base, P = g.points(), ny = g.nyy()](int f, int gi) {
      int i = gi < 0 ? 0 : g.nx - 1;
      return base[f * P + static_cast<std::size_t>(i) * ny];
    };
  };
  dx4(q.data(), n, g, edge(q.data()), tmp.data(), nullptr);
  for (std::size_t k = 0; k < nP; ++k) out[k] += tmp[k];
  if (g.d == 2) {
    SpectralY sy(g.nx, g.ny, g.Ly);
    for (int l = 0; l < n; ++l) {
      sy.derivatives(q.data() + nP + l * P, tmp.data() + l * P, nullptr);
      for (std::size_t k = 0; k < P; ++k) out[l * P + k] += tmp[l * P + k];
    }
  }
  return out;
}

inline std::vector<double> apply_blocks(const Mat& a, const double* src, int n, std::size_t P) {
  std::vector<double> out(n * P, 0.0);
  for (int l = 0; l < n; ++l)
    for (int q = 0; q < n; ++q)
      if (a(l, q) != 0.0)
        for (std::size_t p = 0; p < P; ++p) out[l * P + p] += a(l, q) * src[q * P + p];
  return out;
}

}  // namespace detail

// phi and psi are full states (n fields); psi_i (d blocks of n fields) is required for divergence_form.
// Compatibility: u_t(0) = -A^{-1} sum_i D_i (v^i - Cs^i phi) must equal psi.
inline RelaxationState jinxin_initialize(const ModelDef& m, const JinXinSystem& sys, const Field& phi, const Field& psi,
                                         JinXinInit mode, const Field* psi_i = nullptr, double tol = 1e-3) {
  const SimGrid& g = phi.grid;
  const int n = sys.n, d = sys.d;
  const std::size_t P = g.points(), nP = n * P;
  if (phi.nf != n || psi.nf != n) fail(ErrorKind::DomainError, "initial data must have n fields");
  double psi_max = 0;
  for (double v : psi.data) psi_max = std::max(psi_max, std::abs(v));
  RelaxationState st;
  st.grid = g;
  st.n = n;
  st.d = d;
  st.mode = mode;
  st.U = Field(g, n * (1 + d));
  std::copy(phi.data.begin(), phi.data.end(), st.U.data.begin());
  detail::FluxEval fe(m);
  std::vector<double> fi(nP);
  for (int i = 0; i < d; ++i) {
    auto v = detail::apply_blocks(sys.Cs[i], phi.data.data(), n, P);
    if (mode == JinXinInit::ZeroPsi) {
      if (psi_max > 0) fail(ErrorKind::PsiNotZero, "zero_psi initialization needs psi = 0");
    } else if (mode == JinXinInit::DivergenceForm) {
      if (!psi_i || psi_i->nf != n * d)
        fail(ErrorKind::PreconditionError, "divergence_form needs psi^i with psi = sum_i d_i psi^i");
      auto ap = detail::apply_blocks(sys.A, psi_i->field(i * n), n, P);
      for (std::size_t k = 0; k < nP; ++k) v[k] -= ap[k];
    } else {
      fe.eval(i, phi.data.data(), fi.data(), P);
      auto af = detail::apply_blocks(sys.A, fi.data(), n, P);
      for (std::size_t k = 0; k < nP; ++k) v[k] += af[k];
    }
    std::copy(v.begin(), v.end(), st.U.field(n * (1 + i)));
  }
  // implied u_t(0) and the compatibility residual
  std::vector<double> q(d * nP);
  for (int i = 0; i < d; ++i) {
    auto cphi = detail::apply_blocks(sys.Cs[i], phi.data.data(), n, P);
    const double* v = st.U.field(n * (1 + i));
    for (std::size_t k = 0; k < nP; ++k) q[i * nP + k] = v[k] - cphi[k];
  }
  auto div = detail::divergence(q, n, g);
  auto ut = detail::apply_blocks(-sys.Ainv, div.data(), n, P);
  st.implied_psi = Field(g, n);
  std::copy(ut.begin(), ut.end(), st.implied_psi.data.begin());
  std::vector<double> target(psi.data);
  if (mode == JinXinInit::Equilibrium) {
    std::vector<double> fl(d * nP);
    for (int i = 0; i < d; ++i) fe.eval(i, phi.data.data(), fl.data() + i * nP, P);
    auto dv = detail::divergence(fl, n, g);
    for (std::size_t k = 0; k < nP; ++k) target[k] = -dv[k];
  }
  for (std::size_t k = 0; k < nP; ++k) st.residual = std::max(st.residual, std::abs(ut[k] - target[k]));
  double scale = 1.0;
  for (double v : target) scale = std::max(scale, std::abs(v));
  if (st.residual > tol * scale) {
    std::ostringstream os;
    os << "compatibility residual " << st.residual << " exceeds " << tol * scale;
    fail(ErrorKind::CompatibilityResidualTooLarge, os.str());
  }
  return st;
}

struct RelaxationResult {
  DecaySeries series;
  RelaxationState final_state;
  double dt = 0, cfl = 0;
  long steps = 0;
  double c_max = 0;
  double support_radius = 0;
  double max_deviation = 0;
  double max_conservation_defect = 0;  // per step, |mass change + boundary flux|, sponge-free runs only
  json to_json() const {
    return {{"dt", dt},         {"cfl", cfl},
            {"steps", steps},   {"c_max", c_max},
            {"support_radius", support_radius}, {"t_boundary", series.t_boundary},
            {"max_deviation", max_deviation},   {"max_conservation_defect", max_conservation_defect}};
  }
};

// Fromm (unlimited centred-slope MUSCL) flux splitting in x, spectral in y, SSP-RK3, with the linear
// relaxation source solved exactly in a Strang splitting.
class RelaxationSolver {
 public:
  RelaxationSolver(const ModelDef& m, const JinXinSystem& sys, const Background& bg, const SimGrid& g,
                   const SimOptions& opt)
      : sys_(sys), g_(g), opt_(opt), flux_(m), n_(sys.n), N_(sys.fields()), P_(g.points()) {
    g.validate();
    if (m.d != g.d) fail(ErrorKind::DomainError, "grid dimension does not match the model");
    Eigen::EigenSolver<Mat> es(sys.M[0]);
    if (es.eigenvalues().imag().cwiseAbs().maxCoeff() > 1e-10 * scale_of(sys.M[0]))
      fail(ErrorKind::PreconditionError, "relaxation system is not hyperbolic in x");
    Mat R = es.eigenvectors().real(), Ri = detail::mat_inverse_checked(R, "eigenvector matrix");
    Vec lam = es.eigenvalues().real();
    Mat mp = R * lam.cwiseMax(0.0).asDiagonal() * Ri, mm = R * lam.cwiseMin(0.0).asDiagonal() * Ri;
    mplus_ = detail::flat(mp);
    mminus_ = detail::flat(mm);
    double rho1 = lam.cwiseAbs().maxCoeff(), rho2 = 0;
    if (g.d == 2) {
      my_ = detail::flat(sys.M[1]);
      rho2 = eigenvalues(to_complex(sys.M[1])).cwiseAbs().maxCoeff();
      sy_ = std::make_unique<detail::SpectralY>(g.nx * N_, g.ny, g.Ly);
      syn_ = std::make_unique<detail::SpectralY>(g.nx, g.ny, g.Ly);
    }
    c_max_ = std::max(rho1, rho2);
    dt_stable_ = 1.0 / (rho1 / g.dx() + (g.d == 2 ? rho2 * M_PI / g.dy() / std::sqrt(3.0) : 0.0));
    sponge_ = detail::sponge_profile(g, opt.sponge_fraction, opt.sponge_strength);
    // background u and the zero_psi reference for v: Cs ubar + (I - E(t)) A r^i, r^i = f^i(ubar) - Bp^{i1} ubar'
    ubar_.assign(n_ * P_, 0.0);
    base_v_.assign(sys.d * n_ * P_, 0.0);
    drift_.assign(sys.d * n_ * P_, 0.0);
    for (int i = 0; i < g.nx; ++i) {
      double x = g.x(i);
      Vec u = bg.value(x), du = bg.slope(x);
      for (int k = 0; k < sys.d; ++k) {
        Vec cu = sys.Cs[k] * u;
        Vec ar = sys.A * (m.flux[k](u) - sys.Bp[k][0] * du);
        for (int l = 0; l < n_; ++l)
          for (int j = 0; j < g.nyy(); ++j) {
            std::size_t p = static_cast<std::size_t>(i) * g.nyy() + j;
            base_v_[(k * n_ + l) * P_ + p] = cu(l);
            drift_[(k * n_ + l) * P_ + p] = ar(l);
          }
      }
      for (int l = 0; l < n_; ++l)
        for (int j = 0; j < g.nyy(); ++j) ubar_[l * P_ + static_cast<std::size_t>(i) * g.nyy() + j] = u(l);
    }
  }

  double c_max() const { return c_max_; }
  double dt_stable() const { return dt_stable_; }

  // Hyperbolic part plus sponge; returns sum over y of (right - left) boundary flux of u, times dy.
  double rhs(const std::vector<double>& U, double t, std::vector<double>& dU) {
    const int nx = g_.nx, ny = g_.nyy();
    const double h = g_.dx();
    dU.assign(N_ * P_, 0.0);
    // padded copy with two zero-gradient ghost columns per side
    pad_.resize(static_cast<std::size_t>(N_) * (nx + 4) * ny);
    for (int f = 0; f < N_; ++f) {
      double* dst = pad_.data() + static_cast<std::size_t>(f) * (nx + 4) * ny;
      const double* src = U.data() + f * P_;
      std::memcpy(dst + 2 * ny, src, sizeof(double) * P_);
      for (int j = 0; j < ny; ++j) {
        dst[j] = dst[ny + j] = src[j];
        dst[(nx + 2) * ny + j] = dst[(nx + 3) * ny + j] = src[static_cast<std::size_t>(nx - 1) * ny + j];
      }
    }
    auto V = [&](int f, int i, int j) { return pad_[(static_cast<std::size_t>(f) * (nx + 4) + i + 2) * ny + j]; };
    double ul[16], ur[16], fl[16];
    double bflux = 0;
    flux_prev_.assign(static_cast<std::size_t>(N_) * ny, 0.0);
    for (int k = 0; k <= nx; ++k) {  // interface between nodes k-1 and k
      for (int j = 0; j < ny; ++j) {
        for (int f = 0; f < N_; ++f) {
          ul[f] = V(f, k - 1, j) + 0.25 * (V(f, k, j) - V(f, k - 2, j));
          ur[f] = V(f, k, j) - 0.25 * (V(f, k + 1, j) - V(f, k - 1, j));
        }
        for (int a = 0; a < N_; ++a) {
          double s = 0;
          for (int b = 0; b < N_; ++b) s += mplus_[a * N_ + b] * ul[b] + mminus_[a * N_ + b] * ur[b];
          fl[a] = s;
        }
        for (int f = 0; f < N_; ++f) {
          double prev = flux_prev_[f * ny + j];
          if (k > 0) dU[f * P_ + static_cast<std::size_t>(k - 1) * ny + j] -= (fl[f] - prev) / h;
          flux_prev_[f * ny + j] = fl[f];
        }
        if (k == 0)
          for (int l = 0; l < n_; ++l) bflux -= fl[l];
        if (k == nx)
          for (int l = 0; l < n_; ++l) bflux += fl[l];
      }
    }
    if (g_.d == 2) {
      uy_.resize(N_ * P_);
      sy_->derivatives(U.data(), uy_.data(), nullptr);
      for (int a = 0; a < N_; ++a)
        for (int b = 0; b < N_; ++b) {
          double c = my_[a * N_ + b];
          if (c == 0.0) continue;
          for (std::size_t p = 0; p < P_; ++p) dU[a * P_ + p] -= c * uy_[b * P_ + p];
        }
    }
    if (opt_.sponge_fraction > 0) {
      Mat e = sys_.relax_exp(t);
      Mat ie = Mat::Identity(n_, n_) - e;
      for (std::size_t p = 0; p < P_; ++p) {
        double sg = sponge_[p / ny];
        if (sg == 0.0) continue;
        for (int l = 0; l < n_; ++l) dU[l * P_ + p] -= sg * (U[l * P_ + p] - ubar_[l * P_ + p]);
        for (int k = 0; k < sys_.d; ++k)
          for (int l = 0; l < n_; ++l) {
            double ref = base_v_[(k * n_ + l) * P_ + p];
            for (int q = 0; q < n_; ++q) ref += ie(l, q) * drift_[(k * n_ + q) * P_ + p];
            std::size_t idx = (n_ * (1 + k) + l) * P_ + p;
            dU[idx] -= sg * (U[idx] - ref);
          }
      }
    }
    return bflux * g_.dy();
  }

  // Exact solve of v^i_t = f^i(u) - A^{-1}(v^i - Cs^i u) with u frozen.
  void source(std::vector<double>& U, const Mat& e) {
    fvals_.resize(n_ * P_);
    for (int i = 0; i < sys_.d; ++i) {
      flux_.eval(i, U.data(), fvals_.data(), P_);
      Mat af = sys_.A, cs = sys_.Cs[i];
      double veq[8], dv[8];
      for (std::size_t p = 0; p < P_; ++p) {
        for (int l = 0; l < n_; ++l) {
          double s = 0;
          for (int q = 0; q < n_; ++q) s += af(l, q) * fvals_[q * P_ + p] + cs(l, q) * U[q * P_ + p];
          veq[l] = s;
          dv[l] = U[(n_ * (1 + i) + l) * P_ + p] - s;
        }
        for (int l = 0; l < n_; ++l) {
          double s = veq[l];
          for (int q = 0; q < n_; ++q) s += e(l, q) * dv[q];
          U[(n_ * (1 + i) + l) * P_ + p] = s;
        }
      }
    }
  }

  double mass(const std::vector<double>& U) const {
    double s = 0;
    for (int l = 0; l < n_; ++l)
      for (std::size_t p = 0; p < P_; ++p) s += U[l * P_ + p];
    return s * g_.dx() * g_.dy();
  }

  RelaxationResult run(const RelaxationState& init) {
    if (init.U.nf != N_) fail(ErrorKind::DomainError, "relaxation state has the wrong number of fields");
    std::vector<double> U(init.U.data);
    Field pert(g_, n_);
    for (std::size_t q = 0; q < n_ * P_; ++q) pert.data[q] = U[q] - ubar_[q];
    detail::check_support(pert, n_, opt_);
    double dt = opt_.dt > 0 ? opt_.dt : opt_.cfl * dt_stable_;
    long nsteps = std::max(1L, static_cast<long>(std::ceil(opt_.T / dt - 1e-9)));
    dt = opt_.T / nsteps;
    RelaxationResult res;
    res.dt = dt;
    res.cfl = dt / dt_stable_;
    if (res.cfl > 0.9) {
      std::ostringstream os;
      os << "CFL number " << res.cfl << " exceeds 0.9";
      fail(ErrorKind::CFLViolation, os.str());
    }
    res.steps = nsteps;
    res.c_max = c_max_;
    res.support_radius = detail::support_radius(pert, n_, opt_.support_threshold);
    auto& s = res.series;
    s.d = g_.d;
    s.p_values = opt_.p_values;
    s.Lp.assign(opt_.p_values.size(), {});
    s.t_boundary = 0.8 * (g_.Lx - res.support_radius) / c_max_;
    const Mat half = sys_.relax_exp(0.5 * dt);
    auto stops = detail::sample_steps(opt_.T, dt, nsteps, opt_.samples, opt_.t_first);
    std::vector<double> L0, U1(N_ * P_), U2(N_ * P_), e(n_ * P_), tmp;
    long step = 0;
    double t = init.t;
    for (long stop : stops) {
      for (; step < stop; ++step) {
        source(U, half);
        const double m0 = mass(U);
        double b0 = rhs(U, t, L0);
        for (std::size_t q = 0; q < U.size(); ++q) U1[q] = U[q] + dt * L0[q];
        double b1 = rhs(U1, t + dt, tmp);
        for (std::size_t q = 0; q < U.size(); ++q) U2[q] = 0.75 * U[q] + 0.25 * (U1[q] + dt * tmp[q]);
        double b2 = rhs(U2, t + 0.5 * dt, tmp);
        for (std::size_t q = 0; q < U.size(); ++q) U[q] = U[q] / 3 + 2.0 / 3 * (U2[q] + dt * tmp[q]);
        if (opt_.sponge_fraction <= 0) {
          double defect = mass(U) - m0 + dt * (b0 / 6 + b1 / 6 + 2 * b2 / 3);
          res.max_conservation_defect = std::max(res.max_conservation_defect, std::abs(defect));
        }
        source(U, half);
        t += dt;
      }
      for (std::size_t q = 0; q < n_ * P_; ++q) e[q] = U[q] - ubar_[q];
      auto nrm = detail::norms(e.data(), n_, g_, opt_.p_values, syn_.get());
      rhs(U, t, tmp);
      auto un = detail::norms(tmp.data(), n_, g_, {}, syn_.get());
      if (!std::isfinite(nrm.L2)) fail(ErrorKind::BlowupDetected, "solution is not finite");
      if (opt_.detect_blowup && !s.L2.empty() && nrm.L2 > 10 * std::max(s.L2.back(), opt_.blowup_floor)) {
        std::ostringstream os;
        os << "L2 deviation grew from " << s.L2.back() << " to " << nrm.L2 << " over one sample interval";
        fail(ErrorKind::BlowupDetected, os.str());
      }
      s.t.push_back(step * dt);
      s.L2.push_back(nrm.L2);
      s.Linf.push_back(nrm.Linf);
      s.Sobolev2.push_back(nrm.H2);
      s.ut_L2.push_back(un.L2);
      for (size_t k = 0; k < nrm.Lp.size(); ++k) s.Lp[k].push_back(nrm.Lp[k]);
      res.max_deviation = std::max(res.max_deviation, nrm.Linf);
    }
    auto& st = res.final_state;
    st = init;
    std::copy(U.begin(), U.end(), st.U.data.begin());
    st.t = t;
    return res;
  }

 private:
  const JinXinSystem& sys_;
  SimGrid g_;
  SimOptions opt_;
  detail::FluxEval flux_;
  int n_, N_;
  std::size_t P_;
  std::vector<double> mplus_, mminus_, my_;
  std::unique_ptr<detail::SpectralY> sy_, syn_;
  double c_max_ = 0, dt_stable_ = 0;
  std::vector<double> sponge_, ubar_, base_v_, drift_;
  std::vector<double> pad_, flux_prev_, uy_, fvals_;
};

inline RelaxationResult simulate_jinxin(const ModelDef& m, const JinXinSystem& sys, const Background& bg,
                                        const RelaxationState& init, const SimOptions& opt = {}) {
  RelaxationSolver s(m, sys, bg, init.grid, opt);
  return s.run(init);
}

// ---------------------------------------------------------------------------------------------

using Perturbation = std::function<Vec(double, double)>;

struct EquivalenceOptions {
  SimGrid base;  // coarsest grid; nx doubles per level, ny fixed (spectral in y)
  int levels = 3;
  double T = 10;
  double cfl_second = 0.5;
  double cfl_relax = 0.4;
  double sponge_fraction = 0.1;
  JinXinInit init = JinXinInit::ZeroPsi;
  int jobs = 1;
};

struct EquivalenceReport {
  JinXinInit init = JinXinInit::ZeroPsi;
  std::vector<int> nx;
  std::vector<double> dx, diff, orders;
  double fitted_order = 0;
  json to_json() const {
    return {{"init", to_string(init)}, {"nx", nx}, {"dx", dx}, {"l2_difference", diff},
            {"pairwise_orders", orders}, {"fitted_order", fitted_order}};
  }
};

inline Field grid_field_nodes(const SimGrid& g, int n, const Perturbation& fn) { return make_field(g, n, fn); }

// L2 distance between the two solvers' u at time T on matched grids, per refinement level.
inline EquivalenceReport equivalence_test(const ModelDef& m, const Background& bg, const Perturbation& pert,
                                          const EquivalenceOptions& opt) {
  auto sys = jinxin_assemble(m);
  auto one = [&](int level) {
    SimGrid g = opt.base;
    g.nx = (opt.base.nx - 1) * (1 << level) + 1;  // nested nodes
    Field p = make_field(g, m.n, pert);
    Field zero(g, m.n);
    SimOptions so;
    so.T = opt.T;
    so.samples = 2;
    so.sponge_fraction = opt.sponge_fraction;
    so.cfl = opt.cfl_second;
    auto a = simulate_second_order(m, bg, g, p, zero, so);
    // the relaxation run starts from the continuous background; the O(dx^4) offset to the discrete one
    // is below the second-order difference being measured
    Field phi = make_field(g, m.n, [&](double x, double y) { return Vec(bg.value(x) + pert(x, y)); });
    auto st = jinxin_initialize(m, sys, phi, zero, opt.init);
    so.cfl = opt.cfl_relax;
    auto b = simulate_jinxin(m, sys, bg, st, so);
    double s = 0;
    const std::size_t nP = m.n * g.points();
    for (std::size_t q = 0; q < nP; ++q) {
      double e = a.final_state.u.data[q] - b.final_state.U.data[q];
      s += e * e;
    }
    return std::make_pair(g, std::sqrt(s * g.dx() * g.dy()));
  };
  EquivalenceReport rep;
  rep.init = opt.init;
  std::vector<std::pair<SimGrid, double>> out(opt.levels);
  if (opt.jobs > 1) {
    std::vector<std::future<std::pair<SimGrid, double>>> fs;
    for (int l = 0; l < opt.levels; ++l) fs.push_back(std::async(std::launch::async, one, l));
    for (int l = 0; l < opt.levels; ++l) out[l] = fs[l].get();
  } else {
    for (int l = 0; l < opt.levels; ++l) out[l] = one(l);
  }
  for (const auto& [g, e] : out) {
    rep.nx.push_back(g.nx);
    rep.dx.push_back(g.dx());
    rep.diff.push_back(e);
  }
  for (int l = 0; l + 1 < opt.levels; ++l) rep.orders.push_back(std::log(rep.diff[l] / rep.diff[l + 1]) / std::log(2.0));
  if (opt.levels >= 2) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int k = opt.levels;
    for (int l = 0; l < k; ++l) {
      double x = std::log(rep.dx[l]), y = std::log(rep.diff[l]);
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    rep.fitted_order = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  }
  return rep;
}

}  // namespace hhshock
