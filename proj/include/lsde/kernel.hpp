#pragma once

#include "lsde/numerics.hpp"

namespace lsde {

/// Exponentiated-quadratic covariance
///   k(x, x') = signal_var * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2).
struct KernelSpec {
  double signal_var = 1.0;
  Vec lengthscales;

  Eigen::Index dim() const { return lengthscales.size(); }
  void validate() const;
};

/// Column layout of the feature vector psi(x) = [k(x,Z), k(x,S), d/ds k(x,S)].
/// The derivative block is fixed-point-major: column M + L + i*K + k holds
/// d k(x, s_i) / d s_{i,k}.
struct FeatureLayout {
  Eigen::Index M = 0;
  Eigen::Index L = 0;
  Eigen::Index K = 0;

  Eigen::Index total() const { return M + L + L * K; }
  Eigen::Index u_begin() const { return 0; }
  Eigen::Index s_begin() const { return M; }
  Eigen::Index ds_begin() const { return M + L; }
  Eigen::Index ds_index(Eigen::Index i, Eigen::Index k) const { return M + L + i * K + k; }
};

/// Marginal N(mean, cov) of the latent state at one time.
struct GaussianMoment {
  Vec mean;
  Mat cov;
};

/// Points are stored one per row.
Mat k_cross(const KernelSpec& spec, const Mat& X, const Mat& Xp);

/// Blocks of the joint covariance between inducing values, fixed-point values
/// and fixed-point gradients. "d2" denotes a derivative in the second argument.
struct KernelBlocks {
  Mat Kzz;       // M x M
  Mat Kzs;       // M x L
  Mat Kzs_d2;    // M x LK
  Mat Kss;       // L x L
  Mat Kss_d2;    // L x LK
  Mat Kss_d1d2;  // LK x LK

  /// Full (M + L + LK) square matrix; `alpha_sq` is added to the Kss diagonal.
  Mat assemble(const Vec& alpha_sq) const;
};

KernelBlocks k_blocks(const KernelSpec& spec, const Mat& Z, const Mat& S);

/// Feature vector psi(x) at a single point.
Vec features(const KernelSpec& spec, const FeatureLayout& layout, const Vec& x, const Mat& Z, const Mat& S);
/// d psi / dx at a single point (total x K).
Mat features_jac(const KernelSpec& spec, const FeatureLayout& layout, const Vec& x, const Mat& Z, const Mat& S);

/// E[psi(x)] for x ~ q.
Vec expect_features(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                    const Mat& S);
/// E[psi(x) psi(x)^T] for x ~ q.
Mat expect_features_outer(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                          const Mat& S);
/// E[d psi(x) / dx] for x ~ q, total x K.
Mat expect_features_jac(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                        const Mat& S);

/// Scalar functional of the feature expectations
///   value = c . E[psi] + <D, E[dpsi/dx]> + <W, E[psi psi^T]>
/// Empty members are skipped. W must be symmetric.
struct FeatureFunctional {
  Vec c;
  Mat D;
  Mat W;
};

/// Value of a FeatureFunctional together with its gradient in the moment
/// parameters. `d_cov` is the plain matrix gradient (symmetric, each entry
/// treated as independent).
struct FunctionalGradient {
  double value = 0.0;
  Vec d_mean;
  Mat d_cov;
};

/// All three feature expectations at once.
struct FeatureExpectations {
  Vec psi;        // total
  Mat psi_jac;    // total x K
  Mat psi_outer;  // total x total, empty unless requested
};

/// Evaluates the feature expectations for repeated moments with fixed
/// (spec, Z, S). Holds the per-center data to avoid recomputation.
class FeatureExpectationEngine {
 public:
  FeatureExpectationEngine(const KernelSpec& spec, const Mat& Z, const Mat& S);

  const FeatureLayout& layout() const { return layout_; }

  FeatureExpectations expectations(const GaussianMoment& q, bool with_outer) const;

  /// Value and (mean, cov) gradient of a feature functional.
  FunctionalGradient functional_gradient(const GaussianMoment& q, const FeatureFunctional& f) const;

 private:
  KernelSpec spec_;
  FeatureLayout layout_;
  Mat centers_;  // (M + L) x K; rows [Z; S]
  Vec inv_ell_sq_;
};

}  // namespace lsde
