#pragma once

// Independent reference computations shared by unit and acceptance tests.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "lsde/kernel.hpp"

namespace oracle {

using lsde::Mat;
using lsde::Vec;

struct MomentEstimate {
  Mat mean;
  Mat se;  // standard error of the mean
};

// Running mean / standard error accumulator over matrix-valued samples.
class Accumulator {
 public:
  Accumulator(Eigen::Index r, Eigen::Index c) : sum_(Mat::Zero(r, c)), sq_(Mat::Zero(r, c)) {}
  void add(const Mat& x) {
    sum_ += x;
    sq_ += x.cwiseProduct(x);
    ++n_;
  }
  MomentEstimate finish() const {
    const double n = static_cast<double>(n_);
    MomentEstimate e;
    e.mean = sum_ / n;
    Mat var = (sq_ / n - e.mean.cwiseProduct(e.mean)).cwiseMax(0.0) * (n / (n - 1.0));
    e.se = (var / n).cwiseSqrt();
    return e;
  }

 private:
  Mat sum_;
  Mat sq_;
  long n_ = 0;
};

struct FeatureMC {
  MomentEstimate psi;
  MomentEstimate jac;
  MomentEstimate outer;
};

inline Mat chol_lower(const Mat& cov) {
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

inline FeatureMC feature_mc(const lsde::KernelSpec& spec, const Mat& Z, const Mat& S, const lsde::GaussianMoment& q,
                            long samples, unsigned long long seed) {
  lsde::FeatureLayout lay{Z.rows(), S.rows(), spec.dim()};
  const Eigen::Index P = lay.total();
  const Eigen::Index K = spec.dim();
  const Mat Lc = chol_lower(q.cov);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Accumulator a1(P, 1), aj(P, K), ao(P, P);
  Vec xi(K);
  for (long s = 0; s < samples; ++s) {
    for (Eigen::Index k = 0; k < K; ++k) xi[k] = N(rng);
    const Vec x = q.mean + Lc * xi;
    const Vec psi = lsde::features(spec, lay, x, Z, S);
    a1.add(psi);
    aj.add(lsde::features_jac(spec, lay, x, Z, S));
    ao.add(psi * psi.transpose());
  }
  return {a1.finish(), aj.finish(), ao.finish()};
}

// Gauss-Hermite rule for the standard normal (probabilists' weights summing to 1).
inline void gauss_hermite_normal(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  Mat J = Mat::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(static_cast<double>(i));
  Eigen::SelfAdjointEigenSolver<Mat> es(J);
  nodes.resize(n);
  weights.resize(n);
  for (int i = 0; i < n; ++i) {
    nodes[i] = es.eigenvalues()[i];
    weights[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
}

// E[g(x)] for x ~ N(mean, cov) by tensor-product Gauss-Hermite.
inline Mat gh_expect(const lsde::GaussianMoment& q, int order, const std::function<Mat(const Vec&)>& g) {
  std::vector<double> nd, wt;
  gauss_hermite_normal(order, nd, wt);
  const Eigen::Index K = q.mean.size();
  const Mat Lc = chol_lower(q.cov);
  std::vector<int> idx(K, 0);
  Mat acc;
  bool first = true;
  while (true) {
    Vec xi(K);
    double w = 1.0;
    for (Eigen::Index k = 0; k < K; ++k) {
      xi[k] = nd[idx[k]];
      w *= wt[idx[k]];
    }
    Mat v = g(q.mean + Lc * xi);
    if (first) {
      acc = w * v;
      first = false;
    } else {
      acc += w * v;
    }
    Eigen::Index k = 0;
    while (k < K && ++idx[k] == order) idx[k++] = 0;
    if (k == K) break;
  }
  return acc;
}

// Random SPD matrix with eigenvalues in [lo, hi].
inline Mat random_spd(Eigen::Index K, double lo, double hi, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(lo, hi);
  Mat G = Mat::NullaryExpr(K, K, [&]() { return N(rng); });
  Eigen::HouseholderQR<Mat> qr(G);
  Mat Q = qr.householderQ();
  Vec ev(K);
  for (Eigen::Index k = 0; k < K; ++k) ev[k] = U(rng);
  Mat out = Q * ev.asDiagonal() * Q.transpose();
  return 0.5 * (out + out.transpose());
}


// Rauch-Tung-Striebel smoother for x_{r+1} = Phi x_r + c + w_r, w_r ~ N(0, Q),
// x_0 ~ N(mu0, Sig0), observations y = C x_{idx} + d + N(0, diag(Gamma)).
struct Smoothed {
  std::vector<Vec> m;
  std::vector<Mat> S;
  double log_evidence = 0.0;
};

inline Smoothed rts_smoother(const Mat& Phi, const Vec& c, const Mat& Q, const Vec& mu0, const Mat& Sig0,
                             std::size_t steps, const std::vector<std::size_t>& idx, const Mat& Y, const Mat& C,
                             const Vec& d, const Vec& Gamma) {
  const std::size_t n = steps + 1;
  std::vector<Vec> mp(n), mf(n);
  std::vector<Mat> Sp(n), Sf(n);
  const Mat R = Gamma.asDiagonal();
  Smoothed out;
  for (std::size_t r = 0; r < n; ++r) {
    if (r == 0) {
      mp[0] = mu0;
      Sp[0] = Sig0;
    } else {
      mp[r] = Phi * mf[r - 1] + c;
      Sp[r] = Phi * Sf[r - 1] * Phi.transpose() + Q;
    }
    mf[r] = mp[r];
    Sf[r] = Sp[r];
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] != r) continue;
      const Mat Sy = C * Sf[r] * C.transpose() + R;
      const Eigen::LLT<Mat> llt(Sy);
      const Vec innov = Y.col(static_cast<Eigen::Index>(i)) - C * mf[r] - d;
      const Mat Lg = llt.matrixL();
      out.log_evidence += -0.5 * innov.dot(llt.solve(innov)) - Lg.diagonal().array().log().sum() -
                          0.5 * static_cast<double>(innov.size()) * std::log(2.0 * M_PI);
      const Mat Kg = llt.solve(C * Sf[r]).transpose();
      mf[r] = mf[r] + Kg * innov;
      Sf[r] = Sf[r] - Kg * C * Sf[r];
      Sf[r] = 0.5 * (Sf[r] + Sf[r].transpose());
    }
  }
  out.m.assign(n, Vec());
  out.S.assign(n, Mat());
  out.m[n - 1] = mf[n - 1];
  out.S[n - 1] = Sf[n - 1];
  for (std::size_t r = n - 1; r-- > 0;) {
    const Mat G = Sp[r + 1].llt().solve(Phi * Sf[r]).transpose();
    out.m[r] = mf[r] + G * (out.m[r + 1] - mp[r + 1]);
    out.S[r] = Sf[r] + G * (out.S[r + 1] - Sp[r + 1]) * G.transpose();
  }
  return out;
}

// Asymptotic Kolmogorov-Smirnov p-value for a sample against U(0, 1),
// with the Stephens small-sample correction.
inline double ks_uniform_pvalue(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double D = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    D = std::max({D, (static_cast<double>(i) + 1.0) / n - u[i], u[i] - static_cast<double>(i) / n});
  const double lam = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * D;
  if (lam < 0.2) return 1.0;
  double q = 0.0;
  for (int k = 1; k <= 100; ++k) q += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return std::clamp(q, 0.0, 1.0);
}

}  // namespace oracle
