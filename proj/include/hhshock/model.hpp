#pragma once

#include "hhshock/linalg.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <sstream>

namespace hhshock {

using VecFn = std::function<Vec(const Vec&)>;
using MatFn = std::function<Mat(const Vec&)>;

// A system  g(u)_t + sum_j f^j(u)_{x_j} = sum_{j,k} (B^{jk} u_{x_j})_{x_k} - (A u_t)_t
//                                       + sum_j (C0^j u_t)_{x_j} + sum_j (C1^j u_{x_j})_t.
// Indices are 0-based: j = 0 is the shock-normal direction x_1.
// f_l(u) = c_l + (L u)_l + 1/2 u^T Q_l u
struct PolynomialFlux {
  Vec constant;
  Mat linear;
  std::vector<Mat> quadratic;  // empty, or n matrices

  Vec operator()(const Vec& u) const {
    Vec out = constant + linear * u;
    for (size_t l = 0; l < quadratic.size(); ++l) out(l) += 0.5 * u.dot(quadratic[l] * u);
    return out;
  }
  Mat jacobian(const Vec& u) const {
    Mat out = linear;
    for (size_t l = 0; l < quadratic.size(); ++l)
      out.row(l) += (0.5 * (quadratic[l] + quadratic[l].transpose()) * u).transpose();
    return out;
  }
};

struct ModelDef {
  std::string name;
  int d = 1;
  int n = 1;
  std::vector<VecFn> flux;                        // f^j, size d
  VecFn g;                                        // g
  MatFn coef_a;                                   // script A(u)
  std::function<Mat(const Vec&, int, int)> coef_b;  // B^{jk}(u): j differentiated first, k outer
  std::function<Mat(const Vec&, int)> coef_c0;
  std::function<Mat(const Vec&, int)> coef_c1;
  std::vector<MatFn> flux_jacobian;               // optional analytic Df^j (empty or size d)
  MatFn g_jacobian;                               // optional analytic Dg
  bool constant_coefficients = false;             // A, B, C0, C1 independent of u
  std::vector<PolynomialFlux> polynomial_flux;    // optional structured copy of flux (time-domain solvers)
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

inline void check_state(const ModelDef& m, const Vec& u) {
  if (u.size() != m.n) {
    std::ostringstream os;
    os << "state has dimension " << u.size() << ", model '" << m.name << "' expects " << m.n;
    fail(ErrorKind::DomainError, os.str());
  }
  if (!u.allFinite()) fail(ErrorKind::DomainError, "state is not finite");
}

inline Mat fd_jacobian(const VecFn& fn, const Vec& u) {
  const int n = static_cast<int>(u.size());
  const double h = std::max(1e-6, 1e-6 * (n ? u.cwiseAbs().maxCoeff() : 0.0));
  Vec probe = u;
  Vec f0 = fn(u);
  Mat jac(f0.size(), n);
  for (int q = 0; q < n; ++q) {
    probe(q) = u(q) + h;
    Vec fp = fn(probe);
    probe(q) = u(q) - h;
    Vec fm = fn(probe);
    probe(q) = u(q);
    jac.col(q) = (fp - fm) / (2 * h);
  }
  return jac;
}

// Derivative of a matrix-valued coefficient along direction dir, by central differences (step 1e-6).
inline Mat fd_directional(const MatFn& fn, const Vec& u, const Vec& dir) {
  const double nd = dir.norm();
  if (nd == 0.0) return Mat::Zero(fn(u).rows(), fn(u).cols());
  const double h = 1e-6;
  Vec e = dir / nd;
  return (fn(u + h * e) - fn(u - h * e)) * (nd / (2 * h));
}

// Partial derivative of a matrix-valued coefficient with respect to u_q.
inline Mat fd_partial(const MatFn& fn, const Vec& u, int q) {
  Vec e = Vec::Zero(u.size());
  e(q) = 1.0;
  return fd_directional(fn, u, e);
}

struct DerivativeMatrices {
  std::vector<Mat> a;  // A^j = Df^j
  Mat a0;              // A^0 = Dg
};

inline DerivativeMatrices derivative_matrices(const ModelDef& m, const Vec& u) {
  check_state(m, u);
  DerivativeMatrices out;
  for (int j = 0; j < m.d; ++j) {
    Mat aj = m.flux_jacobian.empty() ? fd_jacobian(m.flux[j], u) : m.flux_jacobian[j](u);
    if (!aj.allFinite()) fail(ErrorKind::DomainError, "flux Jacobian evaluation is not finite");
    out.a.push_back(aj);
  }
  Mat j0 = m.g_jacobian ? m.g_jacobian(u) : fd_jacobian(m.g, u);
  if (!j0.allFinite()) fail(ErrorKind::DomainError, "Dg evaluation is not finite");
  double asym = (j0 - j0.transpose()).cwiseAbs().maxCoeff();
  if (asym >= 1e-8 * scale_of(j0)) {
    std::ostringstream os;
    os << "Dg asymmetry " << asym << " exceeds 1e-8";
    fail(ErrorKind::NonSymmetricA0, os.str());
  }
  out.a0 = 0.5 * (j0 + j0.transpose());
  return out;
}

struct SymbolBundle {
  Vec u;
  Vec xi;
  Mat A, B, C;          // full symbols at xi
  Mat A2, B12, B21, B22, C2;  // transverse parts at eta = (xi_2, ..., xi_d)
  Mat acal, a0;         // script A(u) and A^0(u)
  std::vector<Mat> aj;  // A^j(u)
};

inline Mat coef_c(const ModelDef& m, const Vec& u, int j) { return m.coef_c0(u, j) + m.coef_c1(u, j); }

inline SymbolBundle assemble_symbols(const ModelDef& m, const Vec& u, const Vec& xi) {
  check_state(m, u);
  if (xi.size() != m.d) fail(ErrorKind::DomainError, "wavenumber dimension does not match the model");
  auto dm = derivative_matrices(m, u);
  const int n = m.n;
  SymbolBundle s;
  s.u = u;
  s.xi = xi;
  s.A = s.B = s.C = s.A2 = s.B12 = s.B21 = s.B22 = s.C2 = Mat::Zero(n, n);
  for (int j = 0; j < m.d; ++j) {
    Mat cj = coef_c(m, u, j);
    s.A += xi(j) * dm.a[j];
    s.C += xi(j) * cj;
    if (j >= 1) {
      s.A2 += xi(j) * dm.a[j];
      s.C2 += xi(j) * cj;
      s.B12 += xi(j) * m.coef_b(u, j, 0);
      s.B21 += xi(j) * m.coef_b(u, 0, j);
    }
    for (int k = 0; k < m.d; ++k) {
      Mat bjk = m.coef_b(u, j, k);
      s.B += xi(j) * xi(k) * bjk;
      if (j >= 1 && k >= 1) s.B22 += xi(j) * xi(k) * bjk;
    }
  }
  s.acal = m.coef_a(u);
  s.a0 = dm.a0;
  s.aj = dm.a;
  if (!s.B.allFinite() || !s.C.allFinite() || !s.acal.allFinite())
    fail(ErrorKind::DomainError, "coefficient evaluation is not finite");
  return s;
}

// P(lambda, xi) = lambda^2 A + B(xi) - i lambda C(xi) + lambda A^0 + i A(xi)
inline CMat dispersion_matrix(const SymbolBundle& s, cplx lambda) {
  return lambda * lambda * to_complex(s.acal) + to_complex(s.B) - kI * lambda * to_complex(s.C) +
         lambda * to_complex(s.a0) + kI * to_complex(s.A);
}

inline CMat dispersion_matrix(const ModelDef& m, const Vec& u, cplx lambda, const Vec& xi) {
  return dispersion_matrix(assemble_symbols(m, u, xi), lambda);
}

struct DispersionRoots {
  std::vector<cplx> roots;       // 2n roots, sorted by real part descending
  std::vector<double> residuals; // relative smallest singular value of P at each root
};

inline DispersionRoots dispersion_roots(const SymbolBundle& s) {
  const int n = static_cast<int>(s.acal.rows());
  Eigen::PartialPivLU<Mat> lu(s.acal);
  if (std::abs(lu.determinant()) <= 1e-14 * std::pow(scale_of(s.acal), n))
    fail(ErrorKind::SingularA, "script A is not invertible");
  CMat m1 = to_complex(s.a0) - kI * to_complex(s.C);
  CMat m0 = to_complex(s.B) + kI * to_complex(s.A);
  CMat ainv = to_complex(lu.inverse());
  CMat comp = CMat::Zero(2 * n, 2 * n);
  comp.topRightCorner(n, n) = CMat::Identity(n, n);
  comp.bottomLeftCorner(n, n) = -ainv * m0;
  comp.bottomRightCorner(n, n) = -ainv * m1;
  CVec ev = eigenvalues(comp);
  DispersionRoots out;
  out.roots.assign(ev.data(), ev.data() + 2 * n);
  std::sort(out.roots.begin(), out.roots.end(), complex_order);
  double coeff = std::max({scale_of(s.acal), scale_of(m1), scale_of(m0)});
  for (const auto& l : out.roots)
    out.residuals.push_back(smallest_singular_value(dispersion_matrix(s, l)) / ((1 + std::norm(l)) * coeff));
  return out;
}

inline DispersionRoots dispersion_roots(const ModelDef& m, const Vec& u, const Vec& xi) {
  return dispersion_roots(assemble_symbols(m, u, xi));
}

// Construction-time sanity checks on a state: script A and A^0 symmetric positive definite.
inline void validate_at(const ModelDef& m, const Vec& u) {
  auto s = assemble_symbols(m, u, Vec::Zero(m.d));
  for (const Mat* p : {&s.acal, &s.a0}) {
    const Mat& q = *p;
    if ((q - q.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale_of(q))
      fail(p == &s.a0 ? ErrorKind::NonSymmetricA0 : ErrorKind::DomainError, "coefficient is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (q + q.transpose()));
    if (es.eigenvalues().minCoeff() <= 1e-12 * scale_of(q))
      fail(p == &s.a0 ? ErrorKind::NonSymmetricA0 : ErrorKind::DomainError, "coefficient is not positive definite");
  }
}

}  // namespace hhshock
