#include "lsde/numerics.hpp"

#include <Eigen/Eigenvalues>

#include <atomic>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace lsde {

TimeGrid::TimeGrid(double t0, double t_end, double dt) : t0_(t0), dt_(dt) {
  if (!(dt > 0.0)) throw InvalidArgument("TimeGrid: dt must be positive");
  if (!(t_end > t0)) throw InvalidArgument("TimeGrid: t_end must exceed t0");
  const double steps = std::round((t_end - t0) / dt);
  if (steps < 1.0) throw InvalidArgument("TimeGrid: span shorter than one step");
  steps_ = static_cast<std::size_t>(steps);
}

bool TimeGrid::contains(double t) const {
  const double tol = 1e-9 * dt_;
  return t >= t0_ - tol && t <= t_end() + tol;
}

std::size_t TimeGrid::nearest_index(double t) const {
  if (!contains(t)) {
    std::ostringstream os;
    os << "time " << t << " outside grid span [" << t0_ << ", " << t_end() << "]";
    throw OutOfRange(os.str());
  }
  const double u = std::round((t - t0_) / dt_);
  if (u <= 0.0) return 0;
  return std::min(static_cast<std::size_t>(u), steps_);
}

Quadrature gauss_legendre(std::size_t n, double a, double b) {
  if (n == 0) throw InvalidArgument("gauss_legendre: n must be at least 1");
  if (!(b > a)) throw InvalidArgument("gauss_legendre: require b > a");
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (b + a);
  const std::size_t m = (n + 1) / 2;
  for (std::size_t i = 0; i < m; ++i) {
    // Newton iteration on P_n from the Tricomi-style initial guess.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double kk = static_cast<double>(k);
        const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
        p0 = p1;
        p1 = p2;
      }
      const double pn = (n == 1) ? x : p1;
      const double pnm1 = (n == 1) ? 1.0 : p0;
      dp = static_cast<double>(n) * (x * pn - pnm1) / (x * x - 1.0);
      const double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // recompute derivative at the converged root
    double p0 = 1.0;
    double p1 = x;
    for (std::size_t k = 2; k <= n; ++k) {
      const double kk = static_cast<double>(k);
      const double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
      p0 = p1;
      p1 = p2;
    }
    const double pn = (n == 1) ? x : p1;
    const double pnm1 = (n == 1) ? 1.0 : p0;
    dp = static_cast<double>(n) * (x * pn - pnm1) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    q.nodes[i] = mid - half * x;
    q.nodes[n - 1 - i] = mid + half * x;
    q.weights[i] = half * w;
    q.weights[n - 1 - i] = half * w;
  }
  if (n % 2 == 1) {
    // exact midpoint for odd n; the weight formula above is fine but x may be 1e-17 off
    q.nodes[n / 2] = mid;
  }
  return q;
}

PsdFactor::PsdFactor(const Mat& mat, double jitter) : dim_(mat.rows()) {
  if (mat.rows() != mat.cols()) throw InvalidArgument("PsdFactor: matrix must be square");
  if (dim_ == 0) return;
  const Mat sym = symmetrize(mat);
  const Mat eye = Mat::Identity(dim_, dim_);
  auto attempt = [&](double j) {
    llt_.compute(sym + j * eye);
    jitter_ = j;
    return llt_.info() == Eigen::Success && llt_.matrixLLT().diagonal().minCoeff() > 0.0;
  };
  if (attempt(jitter)) return;
  const double mean_diag = std::max(sym.diagonal().cwiseAbs().mean(), 1e-300);
  double j = std::max(jitter, kDefaultRelativeJitter * mean_diag);
  for (int k = 0; k < 3; ++k) {
    j *= 10.0;
    if (attempt(j)) return;
  }
  std::ostringstream os;
  os << "Cholesky factorization failed after jitter escalation (last jitter " << j << ")";
  throw NumericalError(os.str(), j);
}

Mat PsdFactor::solve(const Mat& rhs) const {
  if (rhs.rows() != dim_) throw InvalidArgument("PsdFactor::solve: dimension mismatch");
  if (dim_ == 0) return rhs;
  return llt_.solve(rhs);
}

Vec PsdFactor::solve(const Vec& rhs) const {
  if (rhs.size() != dim_) throw InvalidArgument("PsdFactor::solve: dimension mismatch");
  if (dim_ == 0) return rhs;
  return llt_.solve(rhs);
}

Mat PsdFactor::inverse() const { return solve(Mat(Mat::Identity(dim_, dim_))); }

double PsdFactor::log_det() const {
  if (dim_ == 0) return 0.0;
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

Mat psd_solve(const Mat& mat, const Mat& rhs, double jitter) {
  if ((mat - mat.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, mat.cwiseAbs().maxCoeff()))
    throw InvalidArgument("psd_solve: matrix is not symmetric");
  return PsdFactor(mat, jitter).solve(rhs);
}

bool clip_psd(Mat& a, double threshold, double floor) {
  a = symmetrize(a);
  if (a.rows() == 0) return false;
  if (a.rows() == 1) {
    if (a(0, 0) < threshold) {
      a(0, 0) = floor;
      return true;
    }
    return false;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  if (es.eigenvalues().minCoeff() >= threshold) return false;
  const Vec ev = es.eigenvalues().cwiseMax(floor);
  a = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  a = symmetrize(a);
  return true;
}

Mat spd_inverse(const Mat& a, const char* what) {
  Eigen::LLT<Mat> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix not positive definite");
  return llt.solve(Mat::Identity(a.rows(), a.cols()));
}

double spd_log_det(const Mat& a, const char* what) {
  Eigen::LLT<Mat> llt(symmetrize(a));
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": matrix not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = 0.5 * (lo + hi);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i)
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

}  // namespace lsde

namespace lsde {

Quadrature gauss_hermite_normal(std::size_t n) {
  if (n == 0) throw InvalidArgument("gauss_hermite_normal: n must be at least 1");
  // Golub-Welsch on the probabilists' Hermite recurrence
  Mat J = Mat::Zero(n, n);
  for (std::size_t i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  Quadrature q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    q.nodes[i] = es.eigenvalues()[i];
    q.weights[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
  return q;
}

GaussianCubature gaussian_cubature(const Vec& mean, const Mat& cov, std::size_t order) {
  const Eigen::Index K = mean.size();
  if (cov.rows() != K || cov.cols() != K) throw InvalidArgument("gaussian_cubature: dimension mismatch");
  const Quadrature q = gauss_hermite_normal(order);
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(cov));
  const Mat root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::size_t total = 1;
  for (Eigen::Index k = 0; k < K; ++k) total *= order;
  GaussianCubature out;
  out.nodes.resize(static_cast<Eigen::Index>(total), K);
  out.weights.resize(static_cast<Eigen::Index>(total));
  std::vector<std::size_t> idx(K, 0);
  Vec xi(K);
  for (std::size_t n = 0; n < total; ++n) {
    double w = 1.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      xi[k] = q.nodes[idx[k]];
      w *= q.weights[idx[k]];
    }
    out.nodes.row(static_cast<Eigen::Index>(n)) = (mean + root * xi).transpose();
    out.weights[static_cast<Eigen::Index>(n)] = w;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (++idx[k] < order) break;
      idx[k] = 0;
    }
  }
  return out;
}

namespace {
std::atomic<bool> g_warnings{true};
}

void log_warning(const std::string& msg) {
  if (g_warnings) std::fprintf(stderr, "warning: %s\n", msg.c_str());
}

void set_warnings_enabled(bool on) { g_warnings = on; }

}  // namespace lsde
