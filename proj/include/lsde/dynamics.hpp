#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lsde/kernel.hpp"

namespace lsde {

/// Moments of the drift under q_x(t) q_f.
struct DriftMoments {
  Vec mean_f;       // <f>
  Mat mean_jac;     // <df/dx>, entry (k, j) = <d f_k / d x_j>
  double mean_fsq;  // <f^T f>
};

/// Path-KL density 0.5 * E|f(x) + A x - b|^2 at one time, its gradient in
/// (m, S), and the drift moments needed by the control update. `d_cov` is the
/// symmetric gradient: de = tr(d_cov * dS) for symmetric dS.
struct EnergyTerms {
  double value = 0.0;
  Vec d_mean;
  Mat d_cov;
  Vec mean_f;
  Mat mean_jac;
};

/// Anything that can act as the prior drift during smoothing.
class DriftModel {
 public:
  virtual ~DriftModel() = default;
  virtual Eigen::Index dim() const = 0;
  virtual DriftMoments drift_moments(const GaussianMoment& q) const = 0;
  virtual EnergyTerms energy(const GaussianMoment& q, const Mat& A, const Vec& b) const = 0;
  /// KL of the drift's own variational parameters (zero for fixed drifts).
  virtual double kl() const { return 0.0; }
};

/// Fixed drift f(x) = -A x + b.
class LinearDrift : public DriftModel {
 public:
  LinearDrift(Mat A, Vec b);
  Eigen::Index dim() const override { return A_.rows(); }
  DriftMoments drift_moments(const GaussianMoment& q) const override;
  EnergyTerms energy(const GaussianMoment& q, const Mat& A, const Vec& b) const override;
  const Mat& A() const { return A_; }
  const Vec& b() const { return b_; }

 private:
  Mat A_;
  Vec b_;
};

/// Known nonlinear drift whose Gaussian expectations are taken by tensor
/// Gauss-Hermite cubature. Without a Hessian callback, second derivatives come
/// from central differences of the Jacobian.
class QuadratureDrift : public DriftModel {
 public:
  using Field = std::function<Vec(const Vec&)>;
  using Jacobian = std::function<Mat(const Vec&)>;
  /// Hessian of component k, K x K.
  using Hessian = std::function<Mat(const Vec&, Eigen::Index)>;

  QuadratureDrift(Eigen::Index dim, Field f, Jacobian jac, Hessian hess = nullptr, std::size_t order = 20);
  Eigen::Index dim() const override { return dim_; }
  DriftMoments drift_moments(const GaussianMoment& q) const override;
  EnergyTerms energy(const GaussianMoment& q, const Mat& A, const Vec& b) const override;

 private:
  Mat hessian(const Vec& x, Eigen::Index k) const;
  Eigen::Index dim_;
  Field f_;
  Jacobian jac_;
  Hessian hess_;
  std::size_t order_;
};

struct FixedPointSet {
  Mat locations;  // L x K
  Vec alphas;     // standard deviations of the zero observations
};

/// Pointwise posterior of the drift.
struct DriftPrediction {
  Vec mean;
  Vec var;
};

/// Sparse GP drift prior conditioned on fixed points and local Jacobians,
/// together with its variational posterior over inducing values.
class DynamicsModel : public DriftModel {
 public:
  DynamicsModel() = default;
  /// Inducing means and Jacobians start at zero; inducing covariances at the
  /// prior Omega_u.
  DynamicsModel(KernelSpec kernel, Mat Z, FixedPointSet fixed_points);

  Eigen::Index dim() const override { return kernel_.dim(); }
  Eigen::Index num_inducing() const { return Z_.rows(); }
  Eigen::Index num_fixed_points() const { return fp_.locations.rows(); }
  FeatureLayout layout() const { return {num_inducing(), num_fixed_points(), dim()}; }

  const KernelSpec& kernel() const { return kernel_; }
  const Mat& inducing_locations() const { return Z_; }
  const FixedPointSet& fixed_points() const { return fp_; }
  const std::vector<Vec>& inducing_means() const { return m_u_; }
  const std::vector<Mat>& inducing_covs() const { return S_u_; }
  const std::vector<Mat>& jacobians() const { return J_; }

  // These mark the kernel cache stale; call build() before use.
  void set_kernel(const KernelSpec& kernel);
  void set_fixed_points(const FixedPointSet& fps);
  void set_alphas(const Vec& alphas);

  // Variational moments; these keep the kernel cache.
  void set_inducing_means(const std::vector<Vec>& m_u);
  void set_inducing_covs(const std::vector<Mat>& S_u);
  void set_jacobians(const std::vector<Mat>& J);

  /// Assemble K_theta, Omega_u, G and the prior means.
  void build();
  bool fresh() const { return fresh_; }

  const Mat& k_theta() const;
  const Mat& k_theta_inv() const;
  const Mat& omega_u() const;
  const Mat& omega_u_inv() const;
  /// Last LK columns of K~_zs K~_ss^-1 (M x LK).
  const Mat& G() const;
  double jitter() const { return jitter_; }
  const FeatureExpectationEngine& engine() const;

  /// Jacobian rows for output dimension k stacked fixed-point-major (length LK).
  Vec jacobian_rows(Eigen::Index k) const;
  /// Prior mean of u_k given the fixed-point data: G * jacobian_rows(k).
  Vec prior_mean(Eigen::Index k) const;
  /// [m_u^k; 0_L; jacobian_rows(k)]
  Vec weight_vector(Eigen::Index k) const;
  /// K_theta^-1 [w_1 .. w_K], P x K.
  const Mat& beta() const;
  /// Weight of E[psi psi^T] in <f^T f>.
  const Mat& fsq_weight() const;

  DriftMoments drift_moments(const GaussianMoment& q) const override;
  EnergyTerms energy(const GaussianMoment& q, const Mat& A, const Vec& b) const override;
  double kl() const override { return kl_inducing(); }
  double kl_inducing() const;
  DriftPrediction predict_f(const Vec& x) const;

 private:
  void require_fresh() const;
  void refresh_weights();

  KernelSpec kernel_;
  Mat Z_;
  FixedPointSet fp_;
  std::vector<Vec> m_u_;
  std::vector<Mat> S_u_;
  std::vector<Mat> J_;

  bool fresh_ = false;
  double jitter_ = 0.0;
  Mat k_theta_;
  Mat k_theta_inv_;
  Mat omega_;
  Mat omega_inv_;
  Mat G_;
  Mat beta_;
  Mat fsq_w_;
  std::shared_ptr<FeatureExpectationEngine> engine_;
};

/// Fixed-point Jacobian stability: all eigenvalue real parts negative.
bool is_stable(const Mat& jacobian);

}  // namespace lsde
