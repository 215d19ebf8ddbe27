#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hhshock {

using cplx = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

inline constexpr cplx kI{0.0, 1.0};
inline constexpr double kPi = 3.14159265358979323846;

enum class ErrorKind {
  DomainError,
  ConfigError,
  NonSymmetricA0,
  SingularA,
  SingularA0,
  SingularB11,
  ConvergenceError,
  EigenspaceClusterError,
  BranchMatchError,
  PreconditionError,
  NoConnection,
  RHViolation,
  NotLax,
  CharacteristicEndstate,
  DegenerateProfile,
  DecayFitError,
  AttachmentError,
  InterpolationOutOfRange,
  ImaginaryAxisEigenvalue,
  NoImaginaryEigenvalue,
  SplittingError,
  IntegrationBlowup,
  PathError,
  ZeroOnContour,
  NonIntegerWinding,
  BranchTrackingError,
  WindowExhausted,
  MultiplicityAmbiguous,
  CFLViolation,
  BlowupDetected,
  QuasilinearUnsupported,
  NotSemilinear,
  GNotIdentity,
  CompatibilityResidualTooLarge,
  PsiNotZero,
  WindowTooShort,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::NonSymmetricA0: return "NonSymmetricA0";
    case ErrorKind::SingularA: return "SingularA";
    case ErrorKind::SingularA0: return "SingularA0";
    case ErrorKind::SingularB11: return "SingularB11";
    case ErrorKind::ConvergenceError: return "ConvergenceError";
    case ErrorKind::EigenspaceClusterError: return "EigenspaceClusterError";
    case ErrorKind::BranchMatchError: return "BranchMatchError";
    case ErrorKind::PreconditionError: return "PreconditionError";
    case ErrorKind::NoConnection: return "NoConnection";
    case ErrorKind::RHViolation: return "RHViolation";
    case ErrorKind::NotLax: return "NotLax";
    case ErrorKind::CharacteristicEndstate: return "CharacteristicEndstate";
    case ErrorKind::DegenerateProfile: return "DegenerateProfile";
    case ErrorKind::DecayFitError: return "DecayFitError";
    case ErrorKind::AttachmentError: return "AttachmentError";
    case ErrorKind::InterpolationOutOfRange: return "InterpolationOutOfRange";
    case ErrorKind::ImaginaryAxisEigenvalue: return "ImaginaryAxisEigenvalue";
    case ErrorKind::NoImaginaryEigenvalue: return "NoImaginaryEigenvalue";
    case ErrorKind::SplittingError: return "SplittingError";
    case ErrorKind::IntegrationBlowup: return "IntegrationBlowup";
    case ErrorKind::PathError: return "PathError";
    case ErrorKind::ZeroOnContour: return "ZeroOnContour";
    case ErrorKind::NonIntegerWinding: return "NonIntegerWinding";
    case ErrorKind::BranchTrackingError: return "BranchTrackingError";
    case ErrorKind::WindowExhausted: return "WindowExhausted";
    case ErrorKind::MultiplicityAmbiguous: return "MultiplicityAmbiguous";
    case ErrorKind::CFLViolation: return "CFLViolation";
    case ErrorKind::BlowupDetected: return "BlowupDetected";
    case ErrorKind::QuasilinearUnsupported: return "QuasilinearUnsupported";
    case ErrorKind::NotSemilinear: return "NotSemilinear";
    case ErrorKind::GNotIdentity: return "GNotIdentity";
    case ErrorKind::CompatibilityResidualTooLarge: return "CompatibilityResidualTooLarge";
    case ErrorKind::PsiNotZero: return "PsiNotZero";
    case ErrorKind::WindowTooShort: return "WindowTooShort";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

// kappa(r) = r^2 / (1 + r^2)
inline double kappa(double r) { return r * r / (1.0 + r * r); }

inline double scale_of(const Mat& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }
inline double scale_of(const CMat& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }

// Deterministic ordering of complex numbers: real part descending, then imaginary descending.
inline bool complex_order(const cplx& a, const cplx& b) {
  if (a.real() != b.real()) return a.real() > b.real();
  return a.imag() > b.imag();
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results must be written by index,
// which keeps reductions deterministic regardless of scheduling.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  jobs = std::min(jobs, count);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < count; i += jobs) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = a;
    return out;
  }
  for (int i = 0; i < n; ++i) out[i] = a + (b - a) * i / (n - 1);
  return out;
}

inline std::vector<double> logspace(double a, double b, int n) {
  std::vector<double> out(n);
  double la = std::log(a), lb = std::log(b);
  for (int i = 0; i < n; ++i) out[i] = std::exp(n == 1 ? la : la + (lb - la) * i / (n - 1));
  return out;
}

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y, double* intercept = nullptr,
                        double* r2 = nullptr) {
  const int n = static_cast<int>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  double slope = sxy / sxx;
  if (intercept) *intercept = my - slope * mx;
  if (r2) *r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return slope;
}

}  // namespace hhshock
