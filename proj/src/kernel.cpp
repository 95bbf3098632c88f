#include "lsde/kernel.hpp"

#include <array>
#include <cmath>

namespace lsde {

void KernelSpec::validate() const {
  if (!(signal_var > 0.0) || !std::isfinite(signal_var)) throw InvalidArgument("KernelSpec: signal_var must be positive");
  if (lengthscales.size() == 0) throw InvalidArgument("KernelSpec: no lengthscales");
  for (Eigen::Index d = 0; d < lengthscales.size(); ++d)
    if (!(lengthscales[d] > 0.0) || !std::isfinite(lengthscales[d]))
      throw InvalidArgument("KernelSpec: lengthscales must be positive");
}

namespace {

Vec inverse_sq(const Vec& ell) { return ell.array().square().inverse().matrix(); }

void check_points(const KernelSpec& spec, const Mat& X, const char* name) {
  if (X.rows() > 0 && X.cols() != spec.dim())
    throw InvalidArgument(std::string(name) + ": point dimension does not match kernel dimension");
}

double eq_value(double signal_var, const Vec& inv_ell_sq, const Eigen::Ref<const Vec>& x,
                const Eigen::Ref<const Vec>& y) {
  return signal_var * std::exp(-0.5 * ((x - y).array().square() * inv_ell_sq.array()).sum());
}

void check_cov(const Mat& cov, Eigen::Index K) {
  if (cov.rows() != K || cov.cols() != K || K == 0) throw InvalidArgument("Gaussian moment has wrong dimension");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
    throw NumericalError("Gaussian moment covariance is not symmetric");
  const double scale = std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  if (K == 1) {
    if (cov(0, 0) < -1e-10 * scale) throw NumericalError("Gaussian moment covariance is not PSD");
    return;
  }
  Eigen::LDLT<Mat> ldlt(cov);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < -1e-10 * scale)
    throw NumericalError("Gaussian moment covariance is not PSD");
}

// Derivatives of e^{q(y)} for quadratic q: the sum over all ways of grouping
// the differentiation indices into singletons (first derivatives g) and pairs
// (second derivatives H). Valid up to fourth order.
struct Matchings {
  const double* g;
  const Mat* H;

  double h(int i, int j) const { return (*H)(i, j); }
  double operator()() const { return 1.0; }
  double operator()(int i) const { return g[i]; }
  double operator()(int i, int j) const { return g[i] * g[j] + h(i, j); }
  double operator()(int i, int j, int k) const {
    return g[i] * g[j] * g[k] + h(i, j) * g[k] + h(i, k) * g[j] + h(j, k) * g[i];
  }
  double operator()(int i, int j, int k, int l) const {
    return g[i] * g[j] * g[k] * g[l] + h(i, j) * g[k] * g[l] + h(i, k) * g[j] * g[l] + h(i, l) * g[j] * g[k] +
           h(j, k) * g[i] * g[l] + h(j, l) * g[i] * g[k] + h(k, l) * g[i] * g[j] + h(i, j) * h(k, l) +
           h(i, k) * h(j, l) + h(i, l) * h(j, k);
  }
  // Variable-length form; idx holds n <= 4 indices.
  double of(const int* idx, int n) const {
    switch (n) {
      case 0: return 1.0;
      case 1: return (*this)(idx[0]);
      case 2: return (*this)(idx[0], idx[1]);
      case 3: return (*this)(idx[0], idx[1], idx[2]);
      case 4: return (*this)(idx[0], idx[1], idx[2], idx[3]);
      default: throw InvalidArgument("Matchings: order above four");
    }
  }
};

// Moment-dependent quantities shared by all centers.
struct MomentData {
  Eigen::Index K;
  Vec mean;
  Mat Dinv;        // (Lambda + S)^-1
  double pref1;    // s2 * sqrt(|Lambda| / |Lambda + S|)
  Mat Binv;        // (Lambda/2 + S)^-1
  double pref2;    // s2^2 * sqrt(|Lambda/2| / |Lambda/2 + S|)
  Mat H1;          // Hessian of the single-center exponent in m: -Dinv
  Mat H2;          // Hessian of the pair exponent in (a, b, m)
  Mat half_inv_lambda;
};

MomentData moment_data(const KernelSpec& spec, const Vec& inv_ell_sq, const GaussianMoment& q, bool need_pair) {
  const Eigen::Index K = spec.dim();
  if (q.mean.size() != K) throw InvalidArgument("Gaussian moment mean has wrong dimension");
  check_cov(q.cov, K);
  MomentData d;
  d.K = K;
  d.mean = q.mean;
  const Vec lam = spec.lengthscales.array().square().matrix();
  const double log_det_lam = lam.array().log().sum();
  {
    Mat D = symmetrize(q.cov);
    D.diagonal() += lam;
    Eigen::LLT<Mat> llt(D);
    if (llt.info() != Eigen::Success) throw NumericalError("expectation: Lambda + S not positive definite");
    d.Dinv = llt.solve(Mat::Identity(K, K));
    const double log_det_D = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    d.pref1 = spec.signal_var * std::exp(0.5 * (log_det_lam - log_det_D));
    d.H1 = -d.Dinv;
  }
  if (need_pair) {
    Mat B = symmetrize(q.cov);
    B.diagonal() += 0.5 * lam;
    Eigen::LLT<Mat> llt(B);
    if (llt.info() != Eigen::Success) throw NumericalError("expectation: Lambda/2 + S not positive definite");
    d.Binv = llt.solve(Mat::Identity(K, K));
    const double log_det_B = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double log_det_half = log_det_lam - static_cast<double>(K) * std::log(2.0);
    d.pref2 = spec.signal_var * spec.signal_var * std::exp(0.5 * (log_det_half - log_det_B));
    const Mat Li = inv_ell_sq.asDiagonal();
    d.half_inv_lambda = 0.5 * Li;
    d.H2.resize(3 * K, 3 * K);
    const Mat aa = -0.5 * Li - 0.25 * d.Binv;
    const Mat ab = 0.5 * Li - 0.25 * d.Binv;
    const Mat am = 0.5 * d.Binv;
    d.H2.block(0, 0, K, K) = aa;
    d.H2.block(0, K, K, K) = ab;
    d.H2.block(0, 2 * K, K, K) = am;
    d.H2.block(K, 0, K, K) = ab.transpose();
    d.H2.block(K, K, K, K) = aa;
    d.H2.block(K, 2 * K, K, K) = am;
    d.H2.block(2 * K, 0, K, K) = am.transpose();
    d.H2.block(2 * K, K, K, K) = am.transpose();
    d.H2.block(2 * K, 2 * K, K, K) = -d.Binv;
  }
  return d;
}

// Feature descriptor belonging to one kernel center: column index and the
// center-derivative dimension (-1 for the plain kernel value).
struct CenterFeature {
  Eigen::Index col;
  int deriv;
};

}  // namespace

Mat k_cross(const KernelSpec& spec, const Mat& X, const Mat& Xp) {
  spec.validate();
  check_points(spec, X, "k_cross");
  check_points(spec, Xp, "k_cross");
  const Vec inv = inverse_sq(spec.lengthscales);
  Mat out(X.rows(), Xp.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Xp.rows(); ++j)
      out(i, j) = eq_value(spec.signal_var, inv, X.row(i).transpose(), Xp.row(j).transpose());
  return out;
}

KernelBlocks k_blocks(const KernelSpec& spec, const Mat& Z, const Mat& S) {
  spec.validate();
  check_points(spec, Z, "k_blocks");
  check_points(spec, S, "k_blocks");
  const Eigen::Index K = spec.dim();
  const Eigen::Index M = Z.rows();
  const Eigen::Index L = S.rows();
  const Vec inv = inverse_sq(spec.lengthscales);
  KernelBlocks b;
  b.Kzz = k_cross(spec, Z, Z);
  b.Kzs = k_cross(spec, Z, S);
  b.Kss = k_cross(spec, S, S);
  b.Kzs_d2.resize(M, L * K);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < L; ++j)
      for (Eigen::Index k = 0; k < K; ++k) b.Kzs_d2(i, j * K + k) = b.Kzs(i, j) * (Z(i, k) - S(j, k)) * inv[k];
  b.Kss_d2.resize(L, L * K);
  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index j = 0; j < L; ++j)
      for (Eigen::Index k = 0; k < K; ++k) b.Kss_d2(i, j * K + k) = b.Kss(i, j) * (S(i, k) - S(j, k)) * inv[k];
  b.Kss_d1d2.resize(L * K, L * K);
  for (Eigen::Index i = 0; i < L; ++i)
    for (Eigen::Index j = 0; j < L; ++j)
      for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index l = 0; l < K; ++l) {
          const double dk = (S(i, k) - S(j, k)) * inv[k];
          const double dl = (S(i, l) - S(j, l)) * inv[l];
          b.Kss_d1d2(i * K + k, j * K + l) = b.Kss(i, j) * ((k == l ? inv[k] : 0.0) - dk * dl);
        }
  return b;
}

Mat KernelBlocks::assemble(const Vec& alpha_sq) const {
  const Eigen::Index M = Kzz.rows();
  const Eigen::Index L = Kss.rows();
  const Eigen::Index LK = Kss_d1d2.rows();
  if (alpha_sq.size() != L) throw InvalidArgument("KernelBlocks::assemble: alpha size mismatch");
  const Eigen::Index P = M + L + LK;
  Mat out(P, P);
  out.block(0, 0, M, M) = Kzz;
  out.block(0, M, M, L) = Kzs;
  out.block(0, M + L, M, LK) = Kzs_d2;
  out.block(M, 0, L, M) = Kzs.transpose();
  out.block(M, M, L, L) = Kss;
  out.block(M, M, L, L).diagonal() += alpha_sq;
  out.block(M, M + L, L, LK) = Kss_d2;
  out.block(M + L, 0, LK, M) = Kzs_d2.transpose();
  out.block(M + L, M, LK, L) = Kss_d2.transpose();
  out.block(M + L, M + L, LK, LK) = Kss_d1d2;
  return out;
}

Vec features(const KernelSpec& spec, const FeatureLayout& layout, const Vec& x, const Mat& Z, const Mat& S) {
  const Vec inv = inverse_sq(spec.lengthscales);
  Vec psi(layout.total());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) psi[i] = eq_value(spec.signal_var, inv, x, Z.row(i).transpose());
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const double kv = eq_value(spec.signal_var, inv, x, S.row(i).transpose());
    psi[layout.s_begin() + i] = kv;
    for (Eigen::Index k = 0; k < layout.K; ++k) psi[layout.ds_index(i, k)] = kv * (x[k] - S(i, k)) * inv[k];
  }
  return psi;
}

Mat features_jac(const KernelSpec& spec, const FeatureLayout& layout, const Vec& x, const Mat& Z, const Mat& S) {
  const Vec inv = inverse_sq(spec.lengthscales);
  const Eigen::Index K = layout.K;
  Mat jac(layout.total(), K);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double kv = eq_value(spec.signal_var, inv, x, Z.row(i).transpose());
    for (Eigen::Index k = 0; k < K; ++k) jac(i, k) = -kv * (x[k] - Z(i, k)) * inv[k];
  }
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const double kv = eq_value(spec.signal_var, inv, x, S.row(i).transpose());
    for (Eigen::Index k = 0; k < K; ++k) jac(layout.s_begin() + i, k) = -kv * (x[k] - S(i, k)) * inv[k];
    for (Eigen::Index j = 0; j < K; ++j) {
      const double uj = (x[j] - S(i, j)) * inv[j];
      for (Eigen::Index k = 0; k < K; ++k) {
        const double uk = (x[k] - S(i, k)) * inv[k];
        jac(layout.ds_index(i, j), k) = kv * ((j == k ? inv[j] : 0.0) - uj * uk);
      }
    }
  }
  return jac;
}

FeatureExpectationEngine::FeatureExpectationEngine(const KernelSpec& spec, const Mat& Z, const Mat& S)
    : spec_(spec), inv_ell_sq_(inverse_sq(spec.lengthscales)) {
  spec_.validate();
  check_points(spec_, Z, "FeatureExpectationEngine");
  check_points(spec_, S, "FeatureExpectationEngine");
  layout_.M = Z.rows();
  layout_.L = S.rows();
  layout_.K = spec_.dim();
  centers_.resize(Z.rows() + S.rows(), layout_.K);
  if (Z.rows() > 0) centers_.topRows(Z.rows()) = Z;
  if (S.rows() > 0) centers_.bottomRows(S.rows()) = S;
}

namespace {

// Up to 1 + K features per center.
struct CenterFeatures {
  std::array<CenterFeature, 4> items{};
  int count = 0;
};

CenterFeatures center_features(const FeatureLayout& layout, Eigen::Index c) {
  CenterFeatures f;
  if (c < layout.M) {
    f.items[0] = {c, -1};
    f.count = 1;
    return f;
  }
  if (layout.K > 3) throw InvalidArgument("closed-form expectations support latent dimension up to 3");
  const Eigen::Index i = c - layout.M;
  f.items[0] = {layout.s_begin() + i, -1};
  f.count = 1;
  for (Eigen::Index k = 0; k < layout.K; ++k) f.items[f.count++] = {layout.ds_index(i, k), static_cast<int>(k)};
  return f;
}

}  // namespace

FeatureExpectations FeatureExpectationEngine::expectations(const GaussianMoment& q, bool with_outer) const {
  const MomentData md = moment_data(spec_, inv_ell_sq_, q, with_outer);
  const Eigen::Index K = layout_.K;
  const Eigen::Index P = layout_.total();
  const Eigen::Index C = centers_.rows();
  FeatureExpectations out;
  out.psi.setZero(P);
  out.psi_jac.setZero(P, K);

  std::array<double, 3> g1{};
  for (Eigen::Index c = 0; c < C; ++c) {
    const Vec r = q.mean - centers_.row(c).transpose();
    const Vec Dr = md.Dinv * r;
    for (Eigen::Index k = 0; k < K; ++k) g1[k] = -Dr[k];
    const double e = md.pref1 * std::exp(-0.5 * r.dot(Dr));
    const Matchings mt{g1.data(), &md.H1};
    const CenterFeatures cf = center_features(layout_, c);
    for (int f = 0; f < cf.count; ++f) {
      const auto [col, j] = cf.items[f];
      if (j < 0) {
        out.psi[col] = e;
        for (Eigen::Index k = 0; k < K; ++k) out.psi_jac(col, k) = e * mt(static_cast<int>(k));
      } else {
        out.psi[col] = -e * mt(j);
        for (Eigen::Index k = 0; k < K; ++k) out.psi_jac(col, k) = -e * mt(j, static_cast<int>(k));
      }
    }
  }

  if (!with_outer) return out;
  out.psi_outer.setZero(P, P);
  std::array<double, 9> g2{};
  const int iK = static_cast<int>(K);
  for (Eigen::Index ca = 0; ca < C; ++ca) {
    const CenterFeatures fa = center_features(layout_, ca);
    for (Eigen::Index cb = ca; cb < C; ++cb) {
      const CenterFeatures fb = center_features(layout_, cb);
      const Vec amb = centers_.row(ca).transpose() - centers_.row(cb).transpose();
      const Vec rho = q.mean - 0.5 * (centers_.row(ca).transpose() + centers_.row(cb).transpose());
      const Vec Lamb = md.half_inv_lambda * amb;  // 0.5 * Lambda^-1 (a - b)
      const Vec Brho = md.Binv * rho;
      const double e = md.pref2 * std::exp(-0.5 * amb.dot(Lamb) - 0.5 * rho.dot(Brho));
      for (Eigen::Index k = 0; k < K; ++k) {
        g2[k] = -Lamb[k] + 0.5 * Brho[k];
        g2[K + k] = Lamb[k] + 0.5 * Brho[k];
        g2[2 * K + k] = -Brho[k];
      }
      const Matchings mt{g2.data(), &md.H2};
      for (int fi = 0; fi < fa.count; ++fi) {
        for (int fj = 0; fj < fb.count; ++fj) {
          const auto [pa, ja] = fa.items[fi];
          const auto [pb, jb] = fb.items[fj];
          int idx[2];
          int n = 0;
          if (ja >= 0) idx[n++] = ja;
          if (jb >= 0) idx[n++] = iK + jb;
          const double v = e * mt.of(idx, n);
          out.psi_outer(pa, pb) = v;
          out.psi_outer(pb, pa) = v;
        }
      }
    }
  }
  return out;
}

FunctionalGradient FeatureExpectationEngine::functional_gradient(const GaussianMoment& q,
                                                                 const FeatureFunctional& fn) const {
  const bool use_c = fn.c.size() > 0;
  const bool use_D = fn.D.size() > 0;
  const bool use_W = fn.W.size() > 0;
  const MomentData md = moment_data(spec_, inv_ell_sq_, q, use_W);
  const Eigen::Index K = layout_.K;
  const int iK = static_cast<int>(K);
  const Eigen::Index C = centers_.rows();
  const Eigen::Index P = layout_.total();
  if ((use_c && fn.c.size() != P) || (use_D && (fn.D.rows() != P || fn.D.cols() != K)) ||
      (use_W && (fn.W.rows() != P || fn.W.cols() != P)))
    throw InvalidArgument("functional_gradient: weight dimensions do not match feature layout");

  FunctionalGradient out;
  out.d_mean.setZero(K);
  out.d_cov.setZero(K, K);
  double value = 0.0;

  if (use_c || use_D) {
    std::array<double, 3> g1{};
    for (Eigen::Index c = 0; c < C; ++c) {
      const Vec r = q.mean - centers_.row(c).transpose();
      const Vec Dr = md.Dinv * r;
      for (Eigen::Index k = 0; k < K; ++k) g1[k] = -Dr[k];
      const double e = md.pref1 * std::exp(-0.5 * r.dot(Dr));
      const Matchings mt{g1.data(), &md.H1};
      const CenterFeatures cf = center_features(layout_, c);
      for (int f = 0; f < cf.count; ++f) {
        const auto [col, j] = cf.items[f];
        const double cp = use_c ? fn.c[col] : 0.0;
        const double sign = (j < 0) ? e : -e;
        int base[4] = {0, 0, 0, 0};
        int nb = 0;
        if (j >= 0) base[nb++] = j;
        // value
        {
          double v = cp * mt.of(base, nb);
          if (use_D)
            for (int k = 0; k < iK; ++k) {
              int idx[4] = {base[0], base[1], base[2], base[3]};
              idx[nb] = k;
              v += fn.D(col, k) * mt.of(idx, nb + 1);
            }
          value += sign * v;
        }
        for (int a = 0; a < iK; ++a) {
          int ia[4] = {base[0], base[1], base[2], base[3]};
          ia[nb] = a;
          double v = cp * mt.of(ia, nb + 1);
          if (use_D)
            for (int k = 0; k < iK; ++k) {
              int idx[4] = {ia[0], ia[1], ia[2], ia[3]};
              idx[nb + 1] = k;
              v += fn.D(col, k) * mt.of(idx, nb + 2);
            }
          out.d_mean[a] += sign * v;
          for (int b = a; b < iK; ++b) {
            int iab[4] = {ia[0], ia[1], ia[2], ia[3]};
            iab[nb + 1] = b;
            double w = cp * mt.of(iab, nb + 2);
            if (use_D)
              for (int k = 0; k < iK; ++k) {
                int idx[4] = {iab[0], iab[1], iab[2], iab[3]};
                idx[nb + 2] = k;
                w += fn.D(col, k) * mt.of(idx, nb + 3);
              }
            out.d_cov(a, b) += 0.5 * sign * w;
          }
        }
      }
    }
  }

  if (use_W) {
    std::array<double, 9> g2{};
    for (Eigen::Index ca = 0; ca < C; ++ca) {
      const CenterFeatures fa = center_features(layout_, ca);
      for (Eigen::Index cb = ca; cb < C; ++cb) {
        const CenterFeatures fb = center_features(layout_, cb);
        // skip pairs whose weights are all zero
        double wmax = 0.0;
        for (int fi = 0; fi < fa.count; ++fi)
          for (int fj = 0; fj < fb.count; ++fj)
            wmax = std::max(wmax, std::abs(fn.W(fa.items[fi].col, fb.items[fj].col)));
        if (wmax == 0.0) continue;
        const Vec amb = centers_.row(ca).transpose() - centers_.row(cb).transpose();
        const Vec rho = q.mean - 0.5 * (centers_.row(ca).transpose() + centers_.row(cb).transpose());
        const Vec Lamb = md.half_inv_lambda * amb;
        const Vec Brho = md.Binv * rho;
        const double e = md.pref2 * std::exp(-0.5 * amb.dot(Lamb) - 0.5 * rho.dot(Brho));
        if (e == 0.0) continue;
        for (Eigen::Index k = 0; k < K; ++k) {
          g2[k] = -Lamb[k] + 0.5 * Brho[k];
          g2[K + k] = Lamb[k] + 0.5 * Brho[k];
          g2[2 * K + k] = -Brho[k];
        }
        const Matchings mt{g2.data(), &md.H2};
        const double mult = (ca == cb) ? 1.0 : 2.0;
        for (int fi = 0; fi < fa.count; ++fi) {
          for (int fj = 0; fj < fb.count; ++fj) {
            const auto [pa, ja] = fa.items[fi];
            const auto [pb, jb] = fb.items[fj];
            const double w = mult * fn.W(pa, pb) * e;
            if (w == 0.0) continue;
            int base[4] = {0, 0, 0, 0};
            int nb = 0;
            if (ja >= 0) base[nb++] = ja;
            if (jb >= 0) base[nb++] = iK + jb;
            value += w * mt.of(base, nb);
            for (int a = 0; a < iK; ++a) {
              int ia[4] = {base[0], base[1], base[2], base[3]};
              ia[nb] = 2 * iK + a;
              out.d_mean[a] += w * mt.of(ia, nb + 1);
              for (int b = a; b < iK; ++b) {
                int iab[4] = {ia[0], ia[1], ia[2], ia[3]};
                iab[nb + 1] = 2 * iK + b;
                out.d_cov(a, b) += 0.5 * w * mt.of(iab, nb + 2);
              }
            }
          }
        }
      }
    }
  }

  for (Eigen::Index a = 0; a < K; ++a)
    for (Eigen::Index b = 0; b < a; ++b) out.d_cov(a, b) = out.d_cov(b, a);
  out.value = value;
  return out;
}

Vec expect_features(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                    const Mat& S) {
  FeatureExpectationEngine eng(spec, Z, S);
  if (eng.layout().total() != layout.total()) throw InvalidArgument("expect_features: layout mismatch");
  return eng.expectations(q, false).psi;
}

Mat expect_features_outer(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                          const Mat& S) {
  FeatureExpectationEngine eng(spec, Z, S);
  if (eng.layout().total() != layout.total()) throw InvalidArgument("expect_features_outer: layout mismatch");
  return eng.expectations(q, true).psi_outer;
}

Mat expect_features_jac(const KernelSpec& spec, const FeatureLayout& layout, const GaussianMoment& q, const Mat& Z,
                        const Mat& S) {
  FeatureExpectationEngine eng(spec, Z, S);
  if (eng.layout().total() != layout.total()) throw InvalidArgument("expect_features_jac: layout mismatch");
  return eng.expectations(q, false).psi_jac;
}

}  // namespace lsde
