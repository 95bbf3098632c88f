#include "lsde/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <sstream>

namespace lsde {

LinearDrift::LinearDrift(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {
  if (A_.rows() != A_.cols() || A_.rows() != b_.size() || A_.rows() == 0)
    throw InvalidArgument("LinearDrift: A must be square and match b");
}

DriftMoments LinearDrift::drift_moments(const GaussianMoment& q) const {
  const Mat second = q.cov + q.mean * q.mean.transpose();
  DriftMoments out;
  out.mean_f = -A_ * q.mean + b_;
  out.mean_jac = -A_;
  out.mean_fsq = (A_.transpose() * A_ * second).trace() - 2.0 * b_.dot(A_ * q.mean) + b_.squaredNorm();
  return out;
}

EnergyTerms LinearDrift::energy(const GaussianMoment& q, const Mat& A, const Vec& b) const {
  const Mat D = A - A_;
  const Vec c = b - b_;
  const Mat DtD = D.transpose() * D;
  EnergyTerms e;
  e.value = 0.5 * ((DtD * (q.cov + q.mean * q.mean.transpose())).trace() - 2.0 * c.dot(D * q.mean) + c.squaredNorm());
  e.d_mean = DtD * q.mean - D.transpose() * c;
  e.d_cov = 0.5 * DtD;
  e.mean_f = -A_ * q.mean + b_;
  e.mean_jac = -A_;
  return e;
}

QuadratureDrift::QuadratureDrift(Eigen::Index dim, Field f, Jacobian jac, Hessian hess, std::size_t order)
    : dim_(dim), f_(std::move(f)), jac_(std::move(jac)), hess_(std::move(hess)), order_(order) {
  if (dim_ < 1 || !f_ || !jac_) throw InvalidArgument("QuadratureDrift: drift and Jacobian callbacks required");
  if (order_ < 2) throw InvalidArgument("QuadratureDrift: cubature order must be at least 2");
}

Mat QuadratureDrift::hessian(const Vec& x, Eigen::Index k) const {
  if (hess_) return hess_(x, k);
  const double h = 1e-5;
  Mat H(dim_, dim_);
  for (Eigen::Index j = 0; j < dim_; ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    H.col(j) = (jac_(xp).row(k) - jac_(xm).row(k)).transpose() / (2.0 * h);
  }
  return symmetrize(H);
}

DriftMoments QuadratureDrift::drift_moments(const GaussianMoment& q) const {
  const GaussianCubature cub = gaussian_cubature(q.mean, q.cov, order_);
  DriftMoments out;
  out.mean_f.setZero(dim_);
  out.mean_jac.setZero(dim_, dim_);
  out.mean_fsq = 0.0;
  for (Eigen::Index n = 0; n < cub.weights.size(); ++n) {
    const Vec x = cub.nodes.row(n).transpose();
    const Vec f = f_(x);
    out.mean_f += cub.weights[n] * f;
    out.mean_jac += cub.weights[n] * jac_(x);
    out.mean_fsq += cub.weights[n] * f.squaredNorm();
  }
  return out;
}

EnergyTerms QuadratureDrift::energy(const GaussianMoment& q, const Mat& A, const Vec& b) const {
  // Gradients in (m, S) of E[h(x)] are E[grad h] and 0.5 E[hess h].
  const GaussianCubature cub = gaussian_cubature(q.mean, q.cov, order_);
  EnergyTerms e;
  e.d_mean.setZero(dim_);
  e.d_cov.setZero(dim_, dim_);
  e.mean_f.setZero(dim_);
  e.mean_jac.setZero(dim_, dim_);
  for (Eigen::Index n = 0; n < cub.weights.size(); ++n) {
    const double w = cub.weights[n];
    const Vec x = cub.nodes.row(n).transpose();
    const Vec f = f_(x);
    const Mat J = jac_(x);
    const Vec r = f + A * x - b;
    const Mat JA = J + A;
    e.value += w * 0.5 * r.squaredNorm();
    e.d_mean += w * JA.transpose() * r;
    Mat H = JA.transpose() * JA;
    for (Eigen::Index k = 0; k < dim_; ++k) H += r[k] * hessian(x, k);
    e.d_cov += 0.5 * w * H;
    e.mean_f += w * f;
    e.mean_jac += w * J;
  }
  e.d_cov = symmetrize(e.d_cov);
  return e;
}

DynamicsModel::DynamicsModel(KernelSpec kernel, Mat Z, FixedPointSet fixed_points)
    : kernel_(std::move(kernel)), Z_(std::move(Z)), fp_(std::move(fixed_points)) {
  kernel_.validate();
  const Eigen::Index K = kernel_.dim();
  if (Z_.rows() == 0) throw InvalidArgument("DynamicsModel: at least one inducing point required");
  if (Z_.cols() != K) throw InvalidArgument("DynamicsModel: inducing points have wrong dimension");
  if (fp_.locations.rows() == 0) fp_.locations.resize(0, K);
  m_u_.assign(K, Vec::Zero(Z_.rows()));
  J_.assign(fp_.locations.rows(), Mat::Zero(K, K));
  build();
  S_u_.assign(K, omega_);
  refresh_weights();
}

void DynamicsModel::set_kernel(const KernelSpec& kernel) {
  kernel.validate();
  if (kernel.dim() != dim()) throw InvalidArgument("set_kernel: dimension change not allowed");
  kernel_ = kernel;
  fresh_ = false;
}

void DynamicsModel::set_fixed_points(const FixedPointSet& fps) {
  const Eigen::Index L = fps.locations.rows();
  if (L > 0 && fps.locations.cols() != dim()) throw InvalidArgument("set_fixed_points: wrong dimension");
  if (fps.alphas.size() != L) throw InvalidArgument("set_fixed_points: one alpha per fixed point required");
  fp_ = fps;
  if (L == 0) fp_.locations.resize(0, dim());
  if (static_cast<Eigen::Index>(J_.size()) != L) J_.assign(L, Mat::Zero(dim(), dim()));
  fresh_ = false;
}

void DynamicsModel::set_alphas(const Vec& alphas) {
  if (alphas.size() != num_fixed_points()) throw InvalidArgument("set_alphas: size mismatch");
  fp_.alphas = alphas;
  fresh_ = false;
}

void DynamicsModel::set_inducing_means(const std::vector<Vec>& m_u) {
  if (static_cast<Eigen::Index>(m_u.size()) != dim()) throw InvalidArgument("set_inducing_means: need K vectors");
  for (const auto& v : m_u)
    if (v.size() != num_inducing()) throw InvalidArgument("set_inducing_means: wrong length");
  m_u_ = m_u;
  if (fresh_) refresh_weights();
}

void DynamicsModel::set_inducing_covs(const std::vector<Mat>& S_u) {
  if (static_cast<Eigen::Index>(S_u.size()) != dim()) throw InvalidArgument("set_inducing_covs: need K matrices");
  for (const auto& S : S_u)
    if (S.rows() != num_inducing() || S.cols() != num_inducing())
      throw InvalidArgument("set_inducing_covs: wrong size");
  S_u_.clear();
  for (const auto& S : S_u) S_u_.push_back(symmetrize(S));
  if (fresh_) refresh_weights();
}

void DynamicsModel::set_jacobians(const std::vector<Mat>& J) {
  if (static_cast<Eigen::Index>(J.size()) != num_fixed_points()) throw InvalidArgument("set_jacobians: need L matrices");
  for (const auto& j : J)
    if (j.rows() != dim() || j.cols() != dim() || !j.allFinite())
      throw InvalidArgument("set_jacobians: each Jacobian must be finite K x K");
  J_ = J;
  if (fresh_) refresh_weights();
}

void DynamicsModel::build() {
  kernel_.validate();
  const Eigen::Index K = dim();
  const Eigen::Index M = num_inducing();
  const Eigen::Index L = num_fixed_points();
  const Eigen::Index P = M + L + L * K;
  if (fp_.alphas.size() != L) throw InvalidArgument("DynamicsModel: one alpha per fixed point required");
  for (Eigen::Index i = 0; i < L; ++i)
    if (!(fp_.alphas[i] >= 0.0) || !std::isfinite(fp_.alphas[i]))
      throw InvalidArgument("DynamicsModel: alphas must be finite and nonnegative");

  // separation of fixed points in lengthscale units
  double jitter_scale = 1.0;
  const Vec inv_ell = kernel_.lengthscales.cwiseInverse();
  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index j = i + 1; j < L; ++j) {
      const double d = (fp_.locations.row(i) - fp_.locations.row(j)).transpose().cwiseProduct(inv_ell).norm();
      if (d < 1e-6) {
        std::ostringstream os;
        os << "fixed points " << i << " and " << j << " coincide";
        throw InvalidArgument(os.str());
      }
      if (d < 1e-3) {
        std::ostringstream os;
        os << "fixed points " << i << " and " << j << " are within 1e-3 lengthscales; raising jitter";
        log_warning(os.str());
        jitter_scale = 100.0;
      }
    }

  const KernelBlocks blocks = k_blocks(kernel_, Z_, fp_.locations);
  Vec alpha_sq = fp_.alphas.array().square().matrix();
  Mat Kt = blocks.assemble(alpha_sq);
  // Base jitter goes on the inducing block only so that the fixed-point data
  // stay exactly interpolated; escalation (and crowded fixed points) use the
  // full diagonal. Scale is taken from the kernel part, not from alpha.
  const double base = kDefaultRelativeJitter * blocks.assemble(Vec::Zero(L)).diagonal().mean();
  Kt.topLeftCorner(M, M).diagonal().array() += base;
  PsdFactor factor;
  try {
    factor = PsdFactor(Kt, jitter_scale > 1.0 ? jitter_scale * base : 0.0);
  } catch (const NumericalError& e) {
    std::ostringstream os;
    os << "conditioned kernel matrix is singular";
    if (L > 1) {
      double best = 1e300;
      Eigen::Index bi = 0, bj = 1;
      for (Eigen::Index i = 0; i < L; ++i)
        for (Eigen::Index j = i + 1; j < L; ++j) {
          const double d = (fp_.locations.row(i) - fp_.locations.row(j)).norm();
          if (d < best) {
            best = d;
            bi = i;
            bj = j;
          }
        }
      os << "; closest fixed points " << bi << " and " << bj << " (distance " << best << ")";
    }
    throw NumericalError(os.str(), e.jitter());
  }
  jitter_ = factor.jitter();
  Kt.diagonal().array() += jitter_;
  k_theta_ = Kt;
  k_theta_inv_ = symmetrize(factor.inverse());

  if (L == 0) {
    omega_ = Kt;
    G_.resize(M, 0);
  } else {
    const Eigen::Index Q = L + L * K;
    const Mat Kss = Kt.block(M, M, Q, Q);
    const Mat Kzs = Kt.block(0, M, M, Q);
    PsdFactor fs(Kss, 0.0);
    const Mat X = fs.solve(Mat(Kzs.transpose()));  // K~ss^-1 K~sz
    omega_ = symmetrize(Kt.topLeftCorner(M, M) - Kzs * X);
    G_ = X.transpose().rightCols(L * K);
  }
  omega_inv_ = symmetrize(k_theta_inv_.topLeftCorner(M, M));
  engine_ = std::make_shared<FeatureExpectationEngine>(kernel_, Z_, fp_.locations);
  (void)P;
  fresh_ = true;
  if (S_u_.size() == static_cast<std::size_t>(K)) refresh_weights();
}

void DynamicsModel::refresh_weights() {
  const Eigen::Index K = dim();
  const Eigen::Index M = num_inducing();
  const Eigen::Index P = layout().total();
  Mat Wv(P, K);
  for (Eigen::Index k = 0; k < K; ++k) Wv.col(k) = weight_vector(k);
  beta_ = k_theta_inv_ * Wv;
  Mat S_sum = Mat::Zero(M, M);
  for (Eigen::Index k = 0; k < K; ++k) S_sum += S_u_[k];
  const Mat Ku = k_theta_inv_.topRows(M);
  fsq_w_ = beta_ * beta_.transpose() + Ku.transpose() * S_sum * Ku - static_cast<double>(K) * k_theta_inv_;
  fsq_w_ = symmetrize(fsq_w_);
}

void DynamicsModel::require_fresh() const {
  if (!fresh_) throw ConsistencyError("DynamicsModel cache is stale; call build()");
}

const Mat& DynamicsModel::k_theta() const {
  require_fresh();
  return k_theta_;
}
const Mat& DynamicsModel::k_theta_inv() const {
  require_fresh();
  return k_theta_inv_;
}
const Mat& DynamicsModel::omega_u() const {
  require_fresh();
  return omega_;
}
const Mat& DynamicsModel::omega_u_inv() const {
  require_fresh();
  return omega_inv_;
}
const Mat& DynamicsModel::G() const {
  require_fresh();
  return G_;
}
const FeatureExpectationEngine& DynamicsModel::engine() const {
  require_fresh();
  return *engine_;
}
const Mat& DynamicsModel::beta() const {
  require_fresh();
  return beta_;
}
const Mat& DynamicsModel::fsq_weight() const {
  require_fresh();
  return fsq_w_;
}

Vec DynamicsModel::jacobian_rows(Eigen::Index k) const {
  const Eigen::Index K = dim();
  const Eigen::Index L = num_fixed_points();
  Vec v(L * K);
  for (Eigen::Index i = 0; i < L; ++i) v.segment(i * K, K) = J_[i].row(k).transpose();
  return v;
}

Vec DynamicsModel::prior_mean(Eigen::Index k) const {
  require_fresh();
  if (num_fixed_points() == 0) return Vec::Zero(num_inducing());
  return G_ * jacobian_rows(k);
}

Vec DynamicsModel::weight_vector(Eigen::Index k) const {
  const FeatureLayout lay = layout();
  Vec w = Vec::Zero(lay.total());
  w.head(lay.M) = m_u_[k];
  w.tail(lay.L * lay.K) = jacobian_rows(k);
  return w;
}

DriftMoments DynamicsModel::drift_moments(const GaussianMoment& q) const {
  require_fresh();
  const FeatureExpectations ex = engine_->expectations(q, true);
  DriftMoments out;
  out.mean_f = beta_.transpose() * ex.psi;
  out.mean_jac = beta_.transpose() * ex.psi_jac;
  out.mean_fsq = static_cast<double>(dim()) * kernel_.signal_var + (fsq_w_.cwiseProduct(ex.psi_outer)).sum();
  return out;
}

EnergyTerms DynamicsModel::energy(const GaussianMoment& q, const Mat& A, const Vec& b) const {
  require_fresh();
  const Eigen::Index K = dim();
  const FeatureExpectations ex = engine_->expectations(q, false);
  EnergyTerms e;
  e.mean_f = beta_.transpose() * ex.psi;
  e.mean_jac = beta_.transpose() * ex.psi_jac;

  const Vec Am = A * q.mean;
  FeatureFunctional fn;
  fn.c = beta_ * (Am - b);
  fn.D = beta_ * (A * q.cov);
  fn.W = 0.5 * fsq_w_;
  const FunctionalGradient g = engine_->functional_gradient(q, fn);

  const Mat AtA = A.transpose() * A;
  e.value = g.value + 0.5 * static_cast<double>(K) * kernel_.signal_var +
            0.5 * ((AtA * (q.cov + q.mean * q.mean.transpose())).trace() + b.squaredNorm() - 2.0 * b.dot(Am));
  e.d_mean = g.d_mean + AtA * q.mean + A.transpose() * (e.mean_f - b);
  e.d_cov = g.d_cov + symmetrize(e.mean_jac.transpose() * A) + 0.5 * AtA;
  e.d_cov = symmetrize(e.d_cov);
  return e;
}

double DynamicsModel::kl_inducing() const {
  require_fresh();
  const Eigen::Index M = num_inducing();
  Eigen::LLT<Mat> lo(omega_);
  if (lo.info() != Eigen::Success) throw NumericalError("kl_inducing: Omega_u not positive definite");
  const double logdet_o = 2.0 * lo.matrixLLT().diagonal().array().log().sum();
  double total = 0.0;
  for (Eigen::Index k = 0; k < dim(); ++k) {
    Eigen::LLT<Mat> ls(S_u_[k]);
    if (ls.info() != Eigen::Success) throw NumericalError("kl_inducing: S_u not positive definite");
    const double logdet_s = 2.0 * ls.matrixLLT().diagonal().array().log().sum();
    const Vec d = prior_mean(k) - m_u_[k];
    total += 0.5 * ((lo.solve(S_u_[k])).trace() - static_cast<double>(M) + logdet_o - logdet_s + d.dot(lo.solve(d)));
  }
  return total;
}

DriftPrediction DynamicsModel::predict_f(const Vec& x) const {
  require_fresh();
  if (x.size() != dim()) throw InvalidArgument("predict_f: wrong point dimension");
  const FeatureLayout lay = layout();
  const Vec psi = features(kernel_, lay, x, Z_, fp_.locations);
  const Vec a = k_theta_inv_ * psi;
  const double base = kernel_.signal_var - psi.dot(a);
  DriftPrediction out;
  out.mean = beta_.transpose() * psi;
  out.var.resize(dim());
  const Vec au = a.head(lay.M);
  for (Eigen::Index k = 0; k < dim(); ++k) out.var[k] = base + au.dot(S_u_[k] * au);
  return out;
}

bool is_stable(const Mat& jacobian) {
  Eigen::EigenSolver<Mat> es(jacobian);
  return (es.eigenvalues().real().array() < 0.0).all();
}

}  // namespace lsde
