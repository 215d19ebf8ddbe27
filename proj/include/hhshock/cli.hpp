#pragma once

// Task runner behind the hhshock executable: config parsing, dispatch, and report assembly.
// Config files are JSON with // and /* */ comments; see README.md for the schema.

#include "hhshock/evans.hpp"
#include "hhshock/glancing.hpp"
#include "hhshock/models.hpp"
#include "hhshock/simulator.hpp"

#include <chrono>
#include <filesystem>
#include <random>
#include <set>

namespace hhshock::cli {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kReportSchema = "hhshock-report/1";

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> t = {"check-state", "solve-profile", "evans",
                                             "glancing",    "simulate",      "jinxin-compare"};
  return t;
}

// ---------------------------------------------------------------------------------------------
// Config reading

struct ConfigText {
  std::string path;
  std::string text;

  // first line mentioning "key"; 0 when absent
  int line_of(const std::string& key) const {
    auto pos = text.find('"' + key + '"');
    if (pos == std::string::npos) return 0;
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
  }
};

// A JSON object plus its dotted path. Every key read is recorded; finish() rejects the rest.
class Section {
 public:
  Section(const json& obj, std::string path, const ConfigText* src) : obj_(obj), path_(std::move(path)), src_(src) {
    if (!obj_.is_object()) error(path_.empty() ? "config" : path_, "must be an object");
  }

  bool has(const std::string& key) const { return obj_.contains(key); }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return obj_.at(key);
  }

  Section section(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return Section(obj_.contains(key) ? obj_.at(key) : empty, where(key), src_);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number()) error(key, "must be a number");
    return v.get<double>();
  }
  double number(const std::string& key) {
    require(key);
    return number(key, 0.0);
  }
  double positive(const std::string& key, double def) {
    double v = number(key, def);
    if (!(v > 0) || !std::isfinite(v)) error(key, "must be strictly positive");
    return v;
  }
  int integer(const std::string& key, int def, int min_value) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number_integer()) error(key, "must be an integer");
    int i = v.get<int>();
    if (i < min_value) error(key, "must be at least " + std::to_string(min_value));
    return i;
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_boolean()) error(key, "must be true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_string()) error(key, "must be a string");
    return v.get<std::string>();
  }
  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
    std::string s = string(key, def);
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      error(key, "must be one of " + list);
    }
    return s;
  }
  Vec vec(const std::string& key, int size = -1) {
    require(key);
    return to_vec(raw(key), key, size);
  }
  Vec vec(const std::string& key, const Vec& def) { return has(key) ? vec(key, static_cast<int>(def.size())) : def; }
  std::vector<Vec> vec_list(const std::string& key, int size) {
    require(key);
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) error(key, "must be a non-empty list of vectors");
    std::vector<Vec> out;
    for (const auto& e : v) out.push_back(to_vec(e, key, size));
    return out;
  }
  Mat mat(const std::string& key, int rows, int cols) {
    require(key);
    return to_mat(raw(key), key, rows, cols);
  }
  Mat to_mat(const json& v, const std::string& key, int rows, int cols) const {
    if (!v.is_array() || static_cast<int>(v.size()) != rows) error(key, "must have " + std::to_string(rows) + " rows");
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
      Vec r = to_vec(v[i], key, cols);
      m.row(i) = r.transpose();
    }
    return m;
  }
  Vec to_vec(const json& v, const std::string& key, int size) const {
    if (v.is_number() && size <= 1) return Vec::Constant(1, v.get<double>());
    if (!v.is_array()) error(key, "must be a list of numbers");
    if (size >= 0 && static_cast<int>(v.size()) != size) error(key, "must have " + std::to_string(size) + " entries");
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) error(key, "must contain numbers only");
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    return out;
  }

  void require(const std::string& key) const {
    if (!has(key)) error(key, "is required");
  }

  // rejects keys that were never read
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) error(it.key(), "unknown key");
  }

  [[noreturn]] void error(const std::string& key, const std::string& msg) const {
    std::string field = where(key);
    int line = src_ ? src_->line_of(key) : 0;
    std::string loc = src_ && !src_->path.empty() ? src_->path : "config";
    if (line > 0) loc += ":" + std::to_string(line);
    fail(ErrorKind::ConfigError, loc + ": " + field + " " + msg);
  }

  const std::string& path() const { return path_; }

 private:
  std::string where(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& obj_;
  std::string path_;
  const ConfigText* src_;
  std::set<std::string> used_;
};

inline json parse_config_text(const std::string& text, const std::string& path) {
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    // nlohmann reports "line L, column C" in its message
    fail(ErrorKind::ConfigError, (path.empty() ? std::string("config") : path) + ": " + e.what());
  }
}

inline ConfigText read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot read config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return {path, os.str()};
}

// ---------------------------------------------------------------------------------------------
// Model section

inline ModelDef model_from_config(Section s) {
  std::string id = s.choice("id", "", {"burgers_dw", "acoustics_dw", "jinxin_generic"});
  ModelDef m;
  if (id == "burgers_dw") {
    double a = s.positive("a", 1.0);
    int d = s.integer("d", 2, 1);
    if (d > 3) s.error("d", "must be at most 3");
    m = burgers_dw(a, d);
  } else if (id == "acoustics_dw") {
    double a = s.positive("a", 0.5), b = s.positive("b", 1.0), U = s.number("U", 0.0);
    m = acoustics_dw(a, b, U);
  } else {
    int n = s.integer("n", 1, 1), d = s.integer("d", 2, 1);
    if (d > 3) s.error("d", "must be at most 3");
    Mat A = s.mat("A", n, n);
    std::vector<std::vector<Mat>> B(d, std::vector<Mat>(d));
    const json& bj = s.raw("B");
    if (!bj.is_array() || static_cast<int>(bj.size()) != d) s.error("B", "must be a d x d array of n x n matrices");
    for (int j = 0; j < d; ++j) {
      if (!bj[j].is_array() || static_cast<int>(bj[j].size()) != d) s.error("B", "must be a d x d array of n x n matrices");
      for (int k = 0; k < d; ++k) B[j][k] = s.to_mat(bj[j][k], "B", n, n);
    }
    auto family = [&](const std::string& key) {
      std::vector<Mat> out(d, Mat::Zero(n, n));
      if (!s.has(key)) return out;
      const json& v = s.raw(key);
      if (!v.is_array() || static_cast<int>(v.size()) != d) s.error(key, "must list d matrices");
      for (int j = 0; j < d; ++j) out[j] = s.to_mat(v[j], key, n, n);
      return out;
    };
    auto c0 = family("C0"), c1 = family("C1");
    const json& fj = s.raw("flux");
    if (!fj.is_array() || static_cast<int>(fj.size()) != d) s.error("flux", "must list d polynomial fluxes");
    std::vector<PolynomialFlux> flux;
    for (int j = 0; j < d; ++j) {
      Section f(fj[j], s.path() + ".flux", nullptr);
      PolynomialFlux pf{f.vec("constant", Vec::Zero(n)), f.has("linear") ? f.mat("linear", n, n) : Mat::Zero(n, n), {}};
      if (f.has("quadratic")) {
        const json& q = f.raw("quadratic");
        if (!q.is_array() || static_cast<int>(q.size()) != n) f.error("quadratic", "must list n symmetric n x n matrices");
        for (int l = 0; l < n; ++l) pf.quadratic.push_back(f.to_mat(q[l], "quadratic", n, n));
      }
      f.finish();
      flux.push_back(pf);
    }
    m = jinxin_generic(n, d, A, B, c0, c1, flux);
  }
  s.finish();
  return m;
}

inline json model_json(const ModelDef& m) {
  return {{"id", m.name}, {"n", m.n}, {"d", m.d}, {"params", m.params.is_null() ? json::object() : json(m.params)}};
}

// ---------------------------------------------------------------------------------------------
// Shared option sections

inline DissipativityTolerances tolerances_from(Section s) {
  DissipativityTolerances t;
  t.margin = s.positive("margin", t.margin);
  t.imag = s.positive("imag", t.imag);
  t.condition = s.positive("condition", t.condition);
  t.cluster = s.positive("cluster", t.cluster);
  s.finish();
  return t;
}

inline json tolerances_json(const DissipativityTolerances& t) {
  return {{"margin", t.margin}, {"imag", t.imag}, {"condition", t.condition}, {"cluster", t.cluster}};
}

inline StabilityGrids grids_from(Section s, int jobs) {
  StabilityGrids g;
  g.directions = s.integer("directions", g.directions, 2);
  g.xi.directions = g.directions;
  g.xi.xi_min = s.positive("xi_min", g.xi.xi_min);
  g.xi.xi_max = s.positive("xi_max", g.xi.xi_max);
  g.xi.magnitudes = s.integer("magnitudes", g.xi.magnitudes, 2);
  if (g.xi.xi_max <= g.xi.xi_min) s.error("xi_max", "must exceed xi_min");
  g.jobs = jobs;
  s.finish();
  return g;
}

inline ProfileOptions profile_options_from(Section& s) {
  ProfileOptions po;
  po.L = s.positive("L", po.L);
  po.h = s.positive("h", po.h);
  po.tol = s.positive("rh_tol", po.tol);
  po.eps0 = s.positive("eps0", po.eps0);
  std::string method = s.choice("method", "automatic", {"automatic", "shooting", "collocation"});
  po.method = method == "shooting"      ? ProfileOptions::Method::Shooting
              : method == "collocation" ? ProfileOptions::Method::Collocation
                                        : ProfileOptions::Method::Automatic;
  if (s.has("phase_value")) po.phase_value = s.number("phase_value");
  po.tail_fraction = s.positive("tail_fraction", po.tail_fraction);
  if (po.tail_fraction >= 0.5) s.error("tail_fraction", "must be below 0.5");
  if (po.h >= po.L) s.error("h", "must be smaller than L");
  return po;
}

struct BackgroundSpec {
  bool is_profile = false;
  Vec state, u_minus, u_plus;
  ProfileOptions po;
};

inline BackgroundSpec background_from(Section s, int n) {
  BackgroundSpec b;
  std::string type = s.choice("type", "profile", {"profile", "constant"});
  if (type == "constant") {
    b.state = s.vec("state", n);
  } else {
    b.is_profile = true;
    b.u_minus = s.vec("u_minus", n);
    b.u_plus = s.vec("u_plus", n);
    b.po = profile_options_from(s);
  }
  s.finish();
  return b;
}

inline SimGrid sim_grid_from(Section s, int d) {
  SimGrid g;
  g.d = d;
  g.nx = s.integer("nx", g.nx, 9);
  g.ny = d == 2 ? s.integer("ny", g.ny, 4) : 1;
  g.Lx = s.positive("Lx", g.Lx);
  if (d == 2) g.Ly = s.positive("Ly", g.Ly);
  if (d == 2 && g.ny % 2 != 0) s.error("ny", "must be even");
  s.finish();
  return g;
}

// Perturbation shapes. random_modes draws its phases and weights from the run seed.
inline Perturbation perturbation_from(Section s, int n, const SimGrid& g, std::uint64_t seed, json* echo) {
  std::string type = s.choice("type", "gaussian", {"gaussian", "random_modes", "none"});
  double amp = s.number("amplitude", 0.05);
  Vec dir = s.vec("direction", Vec::Ones(n));
  Vec width = s.has("width") ? s.vec("width") : Vec::Constant(2, 2.0);
  if (width.size() < 2) width = Vec::Constant(2, width(0));
  if ((width.array() <= 0).any()) s.error("width", "must be strictly positive");
  Vec center = s.has("center") ? s.vec("center") : (Vec(2) << 0.0, g.d == 2 ? 0.5 * g.Ly : 0.0).finished();
  if (center.size() < 2) center = (Vec(2) << center(0), 0.0).finished();
  int modes = s.integer("modes", 4, 1);
  s.finish();
  *echo = {{"type", type}, {"amplitude", amp}, {"direction", vec_json(dir)}, {"width", vec_json(width)},
           {"center", vec_json(center)}};
  if (type == "none" || amp == 0.0) return [n](double, double) { return Vec(Vec::Zero(n)); };
  const double sx = width(0), sy = width(1), cx = center(0), cy = center(1);
  if (type == "gaussian")
    return [=](double x, double y) {
      double e = (x - cx) * (x - cx) / (2 * sx * sx);
      if (g.d == 2) e += (y - cy) * (y - cy) / (2 * sy * sy);
      return Vec(amp * std::exp(-e) * dir);
    };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<double> w(modes), ph(modes);
  for (int k = 0; k < modes; ++k) {
    w[k] = U(rng) / (1.0 + k);
    ph[k] = 2 * kPi * U(rng);
  }
  (*echo)["modes"] = modes;
  (*echo)["weights"] = w;
  (*echo)["phases"] = ph;
  return [=](double x, double y) {
    double s = 0;
    for (int k = 0; k < modes; ++k) s += w[k] * std::cos(g.d == 2 ? 2 * kPi * k * y / g.Ly + ph[k] : ph[k] + k * x / sx);
    return Vec(amp * s * std::exp(-(x - cx) * (x - cx) / (2 * sx * sx)) * dir);
  };
}

// ---------------------------------------------------------------------------------------------
// Running

struct RunOptions {
  std::string config_path;
  std::string out_dir = "out";
  int jobs = 1;
  std::optional<std::uint64_t> seed;
};

struct TaskOutput {
  json results = json::object();
  std::vector<Verdict> verdicts;
  std::vector<std::string> files;  // relative to the output directory
};

struct RunReport {
  json report;
  json manifest;
  int exit_code = 0;
};

namespace detail {

inline void add(TaskOutput& o, Verdict v) { o.verdicts.push_back(std::move(v)); }

inline Profile build_profile(const ModelDef& m, const BackgroundSpec& b) {
  return solve_profile(m, b.u_minus, b.u_plus, b.po);
}

inline json profile_summary(const Profile& p) {
  return {{"method", p.method},
          {"L", p.L},
          {"h", p.h},
          {"points", p.size()},
          {"delta", p.delta},
          {"u_minus", vec_json(p.u_minus)},
          {"u_plus", vec_json(p.u_plus)}};
}

inline TaskOutput run_check_state(const ModelDef& m, Section& task, int jobs) {
  TaskOutput o;
  auto tol = tolerances_from(task.section("tolerances"));
  auto grids = grids_from(task.section("grid"), jobs);
  std::vector<Vec> states = task.vec_list("states", m.n);
  task.finish();
  json arr = json::array();
  for (const auto& u : states) {
    auto st = check_state_stability(m, u, grids, tol);
    arr.push_back(st.to_json());
    for (const Verdict* v : {&st.hyperbolicity.ha, &st.hyperbolicity.hb, &st.d1, &st.d2, &st.d3, &st.fast}) {
      Verdict c = *v;
      c.witnesses.push_back({{"state", vec_json(u)}});
      add(o, c);
    }
  }
  o.results["tolerances"] = tolerances_json(tol);
  o.results["states"] = arr;
  return o;
}

inline TaskOutput run_solve_profile(const ModelDef& m, Section& task, const std::string& out, int) {
  TaskOutput o;
  Section ps = task.section("profile");
  BackgroundSpec b;
  b.is_profile = true;
  b.u_minus = ps.vec("u_minus", m.n);
  b.u_plus = ps.vec("u_plus", m.n);
  b.po = profile_options_from(ps);
  ps.finish();
  auto tol = tolerances_from(task.section("tolerances"));
  int directions = task.integer("directions", 16, 2);
  VerifyOptions vo;
  Section vs = task.section("verify");
  vo.residual_tol = vs.positive("residual_tol", vo.residual_tol);
  vo.r2_min = vs.positive("r2_min", vo.r2_min);
  vo.tail_tol = vs.positive("tail_tol", vo.tail_tol);
  vs.finish();
  task.finish();

  auto lax = check_S1_lax(m, b.u_minus, b.u_plus);
  add(o, lax.verdict);
  auto p = build_profile(m, b);
  auto cert = verify_profile(p, m, 2, vo);
  double sc = std::max(1.0, (p.u_plus - p.u_minus).norm());
  Verdict res = make_verdict("profile_residual", vo.residual_tol * sc - cert.residual, 0.0,
                             "h = " + std::to_string(p.h) + ", L = " + std::to_string(p.L));
  res.note = std::string("ODE ") + kProfileOde;
  add(o, res);
  auto omegas = direction_grid(m.d, directions);
  add(o, check_S2_multiplicities(m, p.u_plus, p.u_minus, omegas, tol));
  add(o, check_S3_nondegeneracy(m, p, omegas));
  auto s6 = check_S6_symmetry(m, p.u_plus, p.u_minus, omegas, tol);
  add(o, s6.verdict);
  write_profile(p, out + "/profile.dat");
  o.files.push_back("profile.dat");
  o.results["profile"] = profile_summary(p);
  o.results["certificate"] = cert.to_json();
  o.results["lax"] = {{"i_minus", lax.i_minus}, {"i_plus", lax.i_plus}};
  o.results["S6_branch"] = s6.branch;
  o.results["tolerances"] = tolerances_json(tol);
  o.results["verify"] = {{"residual_tol", vo.residual_tol}, {"r2_min", vo.r2_min}, {"tail_tol", vo.tail_tol}};
  return o;
}

inline TaskOutput run_evans(const ModelDef& m, Section& task, const std::string& out, int jobs) {
  TaskOutput o;
  auto bg = background_from(task.section("profile"), m.n);
  if (!bg.is_profile) fail(ErrorKind::ConfigError, "evans.profile.type must be profile");
  Section es = task.section("evans");
  EvansOptions eo;
  eo.L_int = es.number("L_int", 0.0);
  if (eo.L_int < 0) es.error("L_int", "must be non-negative");
  eo.rtol = es.positive("rtol", eo.rtol);
  eo.atol = es.positive("atol", eo.atol);
  eo.transport_tol = es.positive("transport_tol", eo.transport_tol);
  eo.variables = es.choice("variables", "flux", {"flux", "derivative"}) == "flux" ? OdeVariables::Flux
                                                                                  : OdeVariables::Derivative;
  eo.c = es.number("c", 0.0);
  if (eo.c < 0) es.error("c", "must be non-negative");
  eo.jobs = jobs;
  Section cs = task.section("contours");
  double rho_min = cs.positive("rho_min", 0.1), rho_max = cs.positive("rho_max", 2.0);
  int count = cs.integer("count", 4, 1), points = cs.integer("points", 96, 8);
  if (rho_max <= rho_min) cs.error("rho_max", "must exceed rho_min (contours must be closed annuli)");
  cs.finish();
  int slices = es.integer("zeta_hat_slices", 8, 1);
  S7Options so;
  so.zero_tol = es.positive("zero_tol", so.zero_tol);
  so.derivative_tol = es.positive("derivative_tol", so.derivative_tol);
  so.rho_small = es.positive("rho_small", so.rho_small);
  so.fd_step = es.positive("fd_step", so.fd_step);
  so.winding.zero_tol = es.positive("winding_zero_tol", so.winding.zero_tol);
  double translation_tol = es.positive("translation_tol", 1e-8);
  es.finish();
  task.finish();

  auto p = build_profile(m, bg);
  EvansFunction ev(m, p, eo);
  auto family = default_contour_family(m.d, rho_min, rho_max, count, points);
  auto rep = check_S7(ev, zeta_hat_grid(m.d, slices), family, so);
  add(o, rep.verdict);
  const double xr = std::min(8.0, 0.5 * p.L);
  double tr = translation_mode_residual(m, p, linspace(-xr, xr, 33));
  add(o, make_verdict("translation_mode", translation_tol - tr, 0.0, "33 points on [-" + std::to_string(xr) + ", " + std::to_string(xr) + "]"));
  for (std::size_t k = 0; k < rep.contours.size(); ++k) write_contour_csv(rep.contours[k], out + "/contours.csv", k > 0);
  if (!rep.contours.empty()) o.files.push_back("contours.csv");
  o.results["profile"] = profile_summary(p);
  o.results["S7"] = rep.to_json();
  o.results["translation_residual"] = tr;
  o.results["evans_options"] = {{"L_int", eo.L_int}, {"rtol", eo.rtol},   {"atol", eo.atol},
                                {"c", eo.c},         {"zeta_hat_slices", slices},
                                {"rho_small", so.rho_small}, {"fd_step", so.fd_step}};
  return o;
}

inline TaskOutput run_glancing(const ModelDef& m, Section& task, const std::string& out, int) {
  TaskOutput o;
  if (m.d < 2) fail(ErrorKind::ConfigError, "glancing needs d >= 2");
  Vec u = task.vec("state", m.n);
  int side = task.integer("side", 1, -1);
  if (side != 1 && side != -1) task.error("side", "must be +1 or -1");
  std::vector<Vec> etas = task.vec_list("etas", m.d - 1);
  GlancingOptions go;
  Section gs = task.section("options");
  go.window = gs.number("window", 0.0);
  if (go.window < 0) gs.error("window", "must be non-negative");
  go.samples = gs.integer("samples", go.samples, 11);
  go.zero = gs.positive("zero", go.zero);
  go.nonzero = gs.positive("nonzero", go.nonzero);
  go.stencil = gs.positive("stencil", go.stencil);
  gs.finish();
  Section s5 = task.section("S5");
  bool do_s5 = s5.boolean("enabled", true);
  double radius = s5.positive("radius", 0.5);
  int samples = s5.integer("samples", 16, 2);
  s5.finish();
  task.finish();

  json per_eta = json::array();
  std::vector<std::vector<SurfaceRow>> surfaces(m.n);
  std::vector<bool> flat(m.n, false);
  for (const auto& eta : etas) {
    auto gd = analyze_glancing(m, u, side, eta, go);
    per_eta.push_back(gd.to_json());
    for (const auto& b : gd.branches) {
      if (b.flat) flat[b.branch] = true;
      for (std::size_t r = 0; r < b.points.size(); ++r) {
        surfaces[b.branch].push_back({eta, b.points[r].xi1, b.points[r].tau, b.points[r].sbar});
        if (!do_s5) continue;
        auto rep = check_S5(m, u, eta, radius, b.branch, static_cast<int>(r), go, samples);
        Verdict v = rep.verdict;
        v.witnesses.push_back({{"branch", b.branch}, {"eta", vec_json(eta)}, {"computed_pass", rep.computed_pass}});
        add(o, v);
      }
    }
  }
  for (int l = 0; l < m.n; ++l) {
    if (flat[l] || surfaces[l].empty()) continue;
    std::string name = "glancing_surface_branch" + std::to_string(l) + ".csv";
    write_surface_csv(surfaces[l], out + "/" + name);
    o.files.push_back(name);
  }
  o.results["state"] = vec_json(u);
  o.results["side"] = side;
  o.results["etas"] = per_eta;
  json fl = json::array();
  for (int l = 0; l < m.n; ++l)
    if (flat[l]) fl.push_back(l);
  o.results["flat_branches"] = fl;
  o.results["options"] = {{"window", go.window}, {"samples", go.samples}, {"zero", go.zero},
                          {"nonzero", go.nonzero}, {"stencil", go.stencil}, {"S5_radius", radius},
                          {"S5_samples", samples}};
  return o;
}

inline Background make_background(const ModelDef& m, const BackgroundSpec& b, json* summary) {
  if (!b.is_profile) {
    *summary = {{"type", "constant"}, {"state", vec_json(b.state)}};
    return constant_background(b.state);
  }
  auto p = std::make_shared<Profile>(build_profile(m, b));
  *summary = profile_summary(*p);
  (*summary)["type"] = "profile";
  Background bg = profile_background(*p);
  // keep the profile alive for the background's callbacks
  auto v = bg.value, s = bg.slope;
  bg.value = [p, v](double x) { return v(x); };
  bg.slope = [p, s](double x) { return s(x); };
  return bg;
}

inline TaskOutput run_simulate(const ModelDef& m, Section& task, const std::string& out, std::uint64_t seed) {
  TaskOutput o;
  auto bs = background_from(task.section("background"), m.n);
  SimGrid g = sim_grid_from(task.section("grid"), m.d);
  if (m.d > 2) fail(ErrorKind::ConfigError, "simulate supports d <= 2");
  json pert_echo;
  auto pert_fn = perturbation_from(task.section("perturbation"), m.n, g, seed, &pert_echo);
  SimOptions so;
  Section ss = task.section("options");
  so.T = ss.positive("T", so.T);
  so.cfl = ss.positive("cfl", so.cfl);
  so.sponge_fraction = ss.number("sponge_fraction", so.sponge_fraction);
  if (so.sponge_fraction < 0 || so.sponge_fraction >= 0.5) ss.error("sponge_fraction", "must lie in [0, 0.5)");
  so.sponge_strength = ss.positive("sponge_strength", so.sponge_strength);
  so.samples = ss.integer("samples", so.samples, 2);
  so.t_first = ss.positive("t_first", so.t_first);
  if (ss.has("p_values")) {
    Vec pv = ss.vec("p_values");
    so.p_values.assign(pv.data(), pv.data() + pv.size());
    for (double p : so.p_values)
      if (!(p >= 1)) ss.error("p_values", "entries must be at least 1");
  }
  so.detect_blowup = ss.boolean("detect_blowup", so.detect_blowup);
  so.blowup_floor = ss.positive("blowup_floor", so.blowup_floor);
  so.support_threshold = ss.positive("support_threshold", so.support_threshold);
  ss.finish();
  Section ds = task.section("decay");
  std::vector<std::string> columns = {"L2", "Linf"};
  for (double p : so.p_values) {
    std::ostringstream c;
    c << 'L' << p;
    columns.push_back(c.str());
  }
  double band = ds.positive("band", 0.6);
  std::map<std::string, std::pair<double, double>> windows;
  if (ds.has("windows")) {
    Section ws = ds.section("windows");
    for (const auto& c : columns)
      if (ws.has(c)) {
        Vec w = ws.vec(c, 2);
        if (w(0) >= w(1)) ws.error(c, "must be an increasing interval");
        windows[c] = {w(0), w(1)};
      }
    ws.finish();
  }
  double stationary_tol = ds.positive("stationary_tol", 1e-8);
  bool snapshot = task.boolean("snapshot", true);
  ds.finish();
  task.finish();

  json bsum;
  Background bg = make_background(m, bs, &bsum);
  Field pert = make_field(g, m.n, pert_fn);
  SecondOrderSolver solver(m, bg, g, so);
  auto r = solver.run(pert, Field(g, m.n));
  write_series_csv(r.series, out + "/series.csv");
  o.files.push_back("series.csv");
  if (snapshot) {
    std::vector<std::string> names;
    for (int k = 0; k < m.n; ++k) names.push_back("u" + std::to_string(k + 1));
    write_snapshot(r.final_state.u, names, r.final_state.t, out + "/final_u.bin");
    o.files.push_back("final_u.bin");
  }
  const std::string grid_desc = g.to_json().dump();
  bool zero = pert_echo["type"] == "none" || pert_echo["amplitude"].get<double>() == 0.0;
  json fits = json::array();
  if (zero) {
    add(o, make_verdict("stationary", stationary_tol - r.max_deviation, 0.0, grid_desc));
  } else {
    for (const auto& c : columns) {
      double target = r.series.target(c);
      auto [lo, hi] = windows.count(c) ? windows[c] : std::make_pair(target - band * std::abs(target), target + band * std::abs(target));
      try {
        auto f = measure_decay(r.series, c);
        json fj = {{"column", c}, {"exponent", f.exponent}, {"ci", f.ci},   {"target", f.target},
                   {"window", {f.t0, f.t1}}, {"accepted", {lo, hi}}, {"samples", f.samples}};
        fits.push_back(fj);
        Verdict v = make_verdict("decay_" + c, std::min(f.exponent - lo, hi - f.exponent), 0.0, grid_desc);
        v.witnesses.push_back(fj);
        add(o, v);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::WindowTooShort) throw;
        Verdict v = make_verdict("decay_" + c, -1.0, 0.0, grid_desc);
        v.note = e.what();
        add(o, v);
      }
    }
  }
  o.results["background"] = bsum;
  o.results["background_residual"] = solver.background_residual();
  o.results["perturbation"] = pert_echo;
  o.results["run"] = r.to_json();
  o.results["fits"] = fits;
  return o;
}

inline TaskOutput run_jinxin_compare(const ModelDef& m, Section& task, const std::string& out, std::uint64_t seed,
                                     int jobs) {
  TaskOutput o;
  auto bs = background_from(task.section("background"), m.n);
  if (m.d > 2) fail(ErrorKind::ConfigError, "jinxin-compare supports d <= 2");
  SimGrid g = sim_grid_from(task.section("grid"), m.d);
  json pert_echo;
  auto pert_fn = perturbation_from(task.section("perturbation"), m.n, g, seed, &pert_echo);
  EquivalenceOptions eo;
  eo.base = g;
  Section cs = task.section("options");
  eo.levels = cs.integer("levels", eo.levels, 2);
  eo.T = cs.positive("T", eo.T);
  eo.cfl_second = cs.positive("cfl_second", eo.cfl_second);
  eo.cfl_relax = cs.positive("cfl_relax", eo.cfl_relax);
  eo.sponge_fraction = cs.number("sponge_fraction", eo.sponge_fraction);
  if (eo.sponge_fraction < 0 || eo.sponge_fraction >= 0.5) cs.error("sponge_fraction", "must lie in [0, 0.5)");
  eo.init = parse_jinxin_init(cs.choice("init", "zero_psi", {"zero_psi", "divergence_form", "equilibrium"}));
  std::string expect = cs.choice("expect", "converge", {"converge", "persist"});
  double min_order = cs.positive("min_order", 1.8);
  double max_order = cs.positive("max_order", 0.5);
  cs.finish();
  task.finish();
  eo.jobs = jobs;

  json bsum;
  Background bg = make_background(m, bs, &bsum);
  auto rep = equivalence_test(m, bg, pert_fn, eo);
  {
    std::ofstream csv(out + "/equivalence.csv");
    if (!csv) fail(ErrorKind::ConfigError, "cannot write " + out + "/equivalence.csv");
    csv.precision(15);
    csv << "nx,dx,l2_difference\n";
    for (std::size_t k = 0; k < rep.nx.size(); ++k) csv << rep.nx[k] << ',' << rep.dx[k] << ',' << rep.diff[k] << '\n';
  }
  o.files.push_back("equivalence.csv");
  std::ostringstream gd;
  gd << "base " << g.to_json().dump() << ", " << eo.levels << " levels, T = " << eo.T;
  if (expect == "converge") {
    add(o, make_verdict("equivalence_order", rep.fitted_order - min_order, 0.0, gd.str()));
  } else {
    Verdict v = make_verdict("difference_persists", max_order - rep.fitted_order, 0.0, gd.str());
    v.note = "negative control: the inter-solver difference must not converge";
    add(o, v);
  }
  o.results["background"] = bsum;
  o.results["perturbation"] = pert_echo;
  o.results["equivalence"] = rep.to_json();
  o.results["expect"] = expect;
  o.results["thresholds"] = {{"min_order", min_order}, {"max_order", max_order}};
  return o;
}

inline std::string iso_time(std::chrono::system_clock::time_point t) {
  std::time_t tt = std::chrono::system_clock::to_time_t(t);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  return buf;
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ConfigError, "cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace detail

// Runs one task from parsed config text. Writes report.json and manifest.json into opt.out_dir.
// Exit code: 0 all verdicts pass, 2 some verdict failed, 1 execution error (reported, then rethrown
// to the caller only for ConfigError so that the front end can print diagnostics).
inline RunReport run_task(const std::string& task, const ConfigText& cfg, const RunOptions& opt) {
  auto started = std::chrono::system_clock::now();
  auto t0 = std::chrono::steady_clock::now();
  if (std::find(task_names().begin(), task_names().end(), task) == task_names().end())
    fail(ErrorKind::ConfigError, "unknown task " + task);
  if (opt.jobs < 1) fail(ErrorKind::ConfigError, "--jobs must be at least 1");
  json root = parse_config_text(cfg.text, cfg.path);
  Section top(root, "", &cfg);
  int version = top.integer("version", kConfigVersion, 1);
  if (version != kConfigVersion) top.error("version", "must be " + std::to_string(kConfigVersion));
  std::string declared = top.string("task", task);
  if (declared != task) top.error("task", "is " + declared + " but the command is " + task);
  std::uint64_t seed = 0;
  if (top.has("seed")) {
    const json& sj = top.raw("seed");
    if (!sj.is_number_unsigned()) top.error("seed", "must be a non-negative integer");
    seed = sj.get<std::uint64_t>();
  }
  if (opt.seed) seed = *opt.seed;
  ModelDef m = model_from_config(top.section("model"));
  Section body = top.section(task);
  top.finish();

  std::filesystem::create_directories(opt.out_dir);
  TaskOutput o;
  std::string error;
  try {
    if (task == "check-state") o = detail::run_check_state(m, body, opt.jobs);
    else if (task == "solve-profile") o = detail::run_solve_profile(m, body, opt.out_dir, opt.jobs);
    else if (task == "evans") o = detail::run_evans(m, body, opt.out_dir, opt.jobs);
    else if (task == "glancing") o = detail::run_glancing(m, body, opt.out_dir, opt.jobs);
    else if (task == "simulate") o = detail::run_simulate(m, body, opt.out_dir, seed);
    else o = detail::run_jinxin_compare(m, body, opt.out_dir, seed, opt.jobs);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ConfigError) throw;
    error = e.what();
  }

  RunReport rr;
  json verdicts = json::array();
  bool all_pass = true;
  for (const auto& v : o.verdicts) {
    verdicts.push_back(v.to_json());
    all_pass = all_pass && v.pass;
  }
  rr.exit_code = !error.empty() ? 1 : all_pass ? 0 : 2;
  rr.report = {{"schema", kReportSchema},
               {"task", task},
               {"model", model_json(m)},
               {"seed", seed},
               {"status", !error.empty() ? "error" : all_pass ? "pass" : "fail"},
               {"verdicts", verdicts},
               {"results", o.results}};
  if (!error.empty()) rr.report["error"] = error;
  detail::write_json(rr.report, opt.out_dir + "/report.json");

  auto finished = std::chrono::system_clock::now();
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json files = json::array({"report.json"});
  for (const auto& f : o.files) files.push_back(f);
  rr.manifest = {{"tool", "hhshock"},
#ifdef HHSHOCK_VERSION
                 {"version", HHSHOCK_VERSION},
#else
                 {"version", "unknown"},
#endif
                 {"task", task},
                 {"config", cfg.path},
                 {"config_bytes", cfg.text.size()},
                 {"seed", seed},
                 {"jobs", opt.jobs},
                 {"started", detail::iso_time(started)},
                 {"finished", detail::iso_time(finished)},
                 {"wall_time_s", wall},
                 {"exit_code", rr.exit_code},
                 {"outputs", files}};
  detail::write_json(rr.manifest, opt.out_dir + "/manifest.json");
  return rr;
}

}  // namespace hhshock::cli
