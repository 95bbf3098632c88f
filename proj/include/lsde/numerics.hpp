#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lsde/errors.hpp"

namespace lsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Uniform time grid t_r = t0 + r*dt, r = 0..steps(). The end time is snapped
/// to t0 + steps()*dt where steps() = round((t_end - t0)/dt).
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double t0, double t_end, double dt);

  double t0() const { return t0_; }
  double t_end() const { return t0_ + static_cast<double>(steps_) * dt_; }
  double dt() const { return dt_; }
  /// Number of Euler steps R. There are R+1 grid points.
  std::size_t steps() const { return steps_; }
  std::size_t size() const { return steps_ + 1; }
  double span() const { return static_cast<double>(steps_) * dt_; }
  double time(std::size_t r) const { return t0_ + static_cast<double>(r) * dt_; }

  /// Index of the grid point closest to t. Throws OutOfRange outside [t0, t_end].
  std::size_t nearest_index(double t) const;
  bool contains(double t) const;

 private:
  double t0_ = 0.0;
  double dt_ = 1.0;
  std::size_t steps_ = 0;
};

struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped onto [a, b].
Quadrature gauss_legendre(std::size_t n, double a, double b);

/// n-point Gauss-Hermite rule for the standard normal density; weights sum to 1.
Quadrature gauss_hermite_normal(std::size_t n);

/// Tensor-product Gauss-Hermite nodes (rows) and weights for N(mean, cov).
struct GaussianCubature {
  Mat nodes;
  Vec weights;
};
GaussianCubature gaussian_cubature(const Vec& mean, const Mat& cov, std::size_t order);

/// Piecewise-linear interpolation of grid-sampled values (vectors or matrices).
template <typename T>
T interp_linear(const TimeGrid& grid, const std::vector<T>& values, double t) {
  if (values.size() != grid.size()) throw InvalidArgument("interp_linear: values length does not match grid");
  const double tol = 1e-12 * std::max(1.0, std::abs(grid.t_end()));
  if (t < grid.t0() - tol || t > grid.t_end() + tol)
    throw OutOfRange("interp_linear: t = " + std::to_string(t) + " outside grid span");
  const double u = (t - grid.t0()) / grid.dt();
  if (u <= 0.0) return values.front();
  const auto r = static_cast<std::size_t>(std::floor(u));
  if (r >= grid.steps()) return values.back();
  const double w = u - static_cast<double>(r);
  if (w == 0.0) return values[r];
  return ((1.0 - w) * values[r] + w * values[r + 1]).eval();
}

/// Cholesky factor of a symmetric matrix with diagonal jitter. If the
/// factorization fails, the jitter is raised by a decade at most three times
/// starting from max(jitter, 1e-8 * mean diagonal).
class PsdFactor {
 public:
  PsdFactor() = default;
  explicit PsdFactor(const Mat& mat, double jitter = 0.0);

  Mat solve(const Mat& rhs) const;
  Vec solve(const Vec& rhs) const;
  Mat inverse() const;
  double log_det() const;
  double jitter() const { return jitter_; }
  Eigen::Index dim() const { return dim_; }
  /// Lower Cholesky factor of (mat + jitter*I).
  Mat lower() const { return llt_.matrixL(); }

 private:
  Eigen::LLT<Mat> llt_;
  double jitter_ = 0.0;
  Eigen::Index dim_ = 0;
};

/// Solve (mat + jitter*I) X = rhs through PsdFactor.
Mat psd_solve(const Mat& mat, const Mat& rhs, double jitter = 0.0);

/// Default relative jitter applied to kernel matrices.
inline constexpr double kDefaultRelativeJitter = 1e-8;

/// 0.5*(A + A^T)
inline Mat symmetrize(const Mat& a) { return 0.5 * (a + a.transpose()); }

/// Symmetrize and raise negative eigenvalues to `floor`. Returns true if any
/// eigenvalue was below `threshold` and the matrix was modified.
bool clip_psd(Mat& a, double threshold = -1e-10, double floor = 0.0);

/// Inverse of a symmetric positive definite matrix, or throws NumericalError.
Mat spd_inverse(const Mat& a, const char* what);

/// log-determinant of an SPD matrix via Cholesky.
double spd_log_det(const Mat& a, const char* what);

/// Writes a warning line to stderr unless warnings are silenced.
void log_warning(const std::string& msg);
void set_warnings_enabled(bool on);

/// Evenly spaced points from lo to hi inclusive.
std::vector<double> linspace(double lo, double hi, std::size_t n);

}  // namespace lsde
