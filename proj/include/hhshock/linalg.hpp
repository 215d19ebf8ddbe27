#pragma once

#include "hhshock/core.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <map>
#include <sstream>

namespace hhshock {

struct EigenGroup {
  cplx value;      // cluster mean
  int multiplicity;
  CMat right;      // orthonormal basis of the cluster's invariant subspace (n x k)
  CMat left;       // rows with left * right = I
};

struct EigenDecomposition {
  CVec values;
  CMat vectors;
};

inline EigenDecomposition eig(const CMat& m) {
  Eigen::ComplexEigenSolver<CMat> es(m, true);
  if (es.info() != Eigen::Success) fail(ErrorKind::ConvergenceError, "complex eigensolver did not converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline CVec eigenvalues(const CMat& m) {
  Eigen::ComplexEigenSolver<CMat> es(m, false);
  if (es.info() != Eigen::Success) fail(ErrorKind::ConvergenceError, "complex eigensolver did not converge");
  return es.eigenvalues();
}

inline double condition_number(const CMat& m) {
  Eigen::JacobiSVD<CMat> svd(m);
  const auto& s = svd.singularValues();
  if (s(s.size() - 1) == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / s(s.size() - 1);
}

inline double smallest_singular_value(const CMat& m) {
  Eigen::JacobiSVD<CMat> svd(m);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

// Single-linkage clustering of values at distance thr. Pairs of distinct clusters closer than
// ambiguity * thr are reported as an error, since their grouping would depend on rounding.
inline std::vector<std::vector<int>> cluster_values(const std::vector<cplx>& vals, double thr,
                                                    double ambiguity = 100.0) {
  const int n = static_cast<int>(vals.size());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int i) { return parent[i] == i ? i : parent[i] = find(parent[i]); };
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(vals[i] - vals[j]) <= thr) parent[find(i)] = find(j);
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) groups[find(i)].push_back(i);
  std::vector<std::vector<int>> out;
  for (auto& [root, members] : groups) out.push_back(members);
  if (ambiguity > 1.0) {
    for (size_t a = 0; a < out.size(); ++a)
      for (size_t b = a + 1; b < out.size(); ++b)
        for (int i : out[a])
          for (int j : out[b]) {
            double dist = std::abs(vals[i] - vals[j]);
            if (dist <= ambiguity * thr) {
              std::ostringstream os;
              os << "eigenvalues " << vals[i] << " and " << vals[j] << " are separated by " << dist
                 << ", inside the ambiguity band (" << thr << ", " << ambiguity * thr << "]";
              fail(ErrorKind::EigenspaceClusterError, os.str());
            }
          }
  }
  auto mean = [&](const std::vector<int>& g) {
    cplx s = 0;
    for (int i : g) s += vals[i];
    return s / double(g.size());
  };
  std::sort(out.begin(), out.end(), [&](const auto& a, const auto& b) { return complex_order(mean(a), mean(b)); });
  return out;
}

inline CMat orthonormalize(const CMat& m) {
  Eigen::HouseholderQR<CMat> qr(m);
  CMat q = qr.householderQ() * CMat::Identity(m.rows(), m.cols());
  return q;
}

// Orthonormal basis for the range of a rank-k projector, with deterministic column choice.
inline CMat orthonormal_range(const CMat& proj, int k) {
  Eigen::ColPivHouseholderQR<CMat> qr(proj);
  CMat q = qr.householderQ() * CMat::Identity(proj.rows(), k);
  return q;
}

// Eigen decomposition grouped into clusters. rel_tol is relative to max(1, |m|_max).
inline std::vector<EigenGroup> eigen_groups(const CMat& m, double rel_tol = 1e-8, double ambiguity = 100.0) {
  auto dec = eig(m);
  const int n = static_cast<int>(m.rows());
  std::vector<cplx> vals(dec.values.data(), dec.values.data() + n);
  auto clusters = cluster_values(vals, rel_tol * scale_of(m), ambiguity);
  Eigen::PartialPivLU<CMat> lu(dec.vectors);
  CMat vinv = lu.inverse();
  std::vector<EigenGroup> out;
  for (const auto& c : clusters) {
    const int k = static_cast<int>(c.size());
    CMat r(n, k), l(k, n);
    cplx mean = 0;
    for (int j = 0; j < k; ++j) {
      r.col(j) = dec.vectors.col(c[j]);
      l.row(j) = vinv.row(c[j]);
      mean += vals[c[j]];
    }
    Eigen::HouseholderQR<CMat> qr(r);
    CMat q = qr.householderQ() * CMat::Identity(n, k);
    CMat gamma = q.adjoint() * r;  // r = q * gamma
    out.push_back({mean / double(k), k, q, gamma * l});
  }
  return out;
}

inline std::vector<int> multiplicity_profile(const std::vector<EigenGroup>& groups) {
  std::vector<int> m;
  for (const auto& g : groups) m.push_back(g.multiplicity);
  return m;
}

// Spectral projector onto eigenvalues selected by pred, with the eigenvalue count.
inline CMat spectral_projector(const CMat& m, const std::function<bool(cplx)>& pred, int* count = nullptr) {
  auto dec = eig(m);
  Eigen::PartialPivLU<CMat> lu(dec.vectors);
  CMat vinv = lu.inverse();
  const int n = static_cast<int>(m.rows());
  CMat p = CMat::Zero(n, n);
  int c = 0;
  for (int i = 0; i < n; ++i)
    if (pred(dec.values(i))) {
      p += dec.vectors.col(i) * vinv.row(i);
      ++c;
    }
  if (count) *count = c;
  return p;
}

// Matrix sign function by scaled Newton iteration. Requires no eigenvalue on the imaginary axis.
// (I - sign)/2 and (I + sign)/2 are the stable and unstable Riesz projectors.
inline CMat matrix_sign(const CMat& m, int max_iter = 100) {
  const int n = static_cast<int>(m.rows());
  CMat x = m;
  bool last = false;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::PartialPivLU<CMat> lu(x);
    CMat xi = lu.inverse();
    if (!xi.allFinite()) fail(ErrorKind::ImaginaryAxisEigenvalue, "matrix sign iteration hit a singular iterate");
    double mu = 1.0;
    if (it < 6) {
      cplx det = lu.determinant();
      mu = std::pow(std::abs(det), -1.0 / n);
      if (!std::isfinite(mu) || mu == 0.0) mu = 1.0;
    }
    CMat next = 0.5 * (mu * x + xi / mu);
    double change = (next - x).cwiseAbs().maxCoeff();
    x = std::move(next);
    if (last) return x;
    // quadratic convergence: one more step after the change is small reaches rounding level
    if (change <= 1e-9 * scale_of(x)) last = true;
  }
  fail(ErrorKind::ConvergenceError, "matrix sign iteration did not converge");
}

inline Mat spd_power(const Mat& m, double power) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale_of(m))
    fail(ErrorKind::NonSymmetricA0, "matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()));
  if (es.eigenvalues().minCoeff() <= 0.0) fail(ErrorKind::NonSymmetricA0, "matrix is not positive definite");
  Vec d = es.eigenvalues().array().pow(power);
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat spd_inverse_sqrt(const Mat& m) { return spd_power(m, -0.5); }
inline Mat spd_sqrt(const Mat& m) { return spd_power(m, 0.5); }

inline CMat to_complex(const Mat& m) { return m.cast<cplx>(); }

}  // namespace hhshock
