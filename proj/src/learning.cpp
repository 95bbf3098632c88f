#include "lsde/learning.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "lsde/parallel.hpp"

namespace lsde {

std::string to_string(DynamicsVariant v) {
  switch (v) {
    case DynamicsVariant::Conditioned:
      return "conditioned";
    case DynamicsVariant::SparsePlain:
      return "sparse_plain";
    case DynamicsVariant::Linear:
      return "linear";
  }
  return "conditioned";
}

DynamicsVariant parse_variant(const std::string& name) {
  if (name == "conditioned") return DynamicsVariant::Conditioned;
  if (name == "sparse_plain") return DynamicsVariant::SparsePlain;
  if (name == "linear") return DynamicsVariant::Linear;
  throw InvalidArgument("unknown dynamics variant '" + name + "'");
}

std::string to_string(StatsQuadrature q) { return q == StatsQuadrature::Grid ? "grid" : "gauss_legendre"; }

StatsQuadrature parse_quadrature(const std::string& name) {
  if (name == "grid") return StatsQuadrature::Grid;
  if (name == "gauss_legendre") return StatsQuadrature::GaussLegendre;
  throw InvalidArgument("unknown quadrature '" + name + "'");
}

SufficientStats SufficientStats::zeros(Eigen::Index P, Eigen::Index K) {
  SufficientStats s;
  s.outer = Mat::Zero(P, P);
  s.feat_fq = Mat::Zero(P, K);
  s.jac_S = Mat::Zero(P, K);
  s.phi_outer = Mat::Zero(K + 1, K + 1);
  s.fq_phi = Mat::Zero(K, K + 1);
  return s;
}

SufficientStats& SufficientStats::operator+=(const SufficientStats& o) {
  if (o.outer.rows() != outer.rows() || o.phi_outer.rows() != phi_outer.rows())
    throw InvalidArgument("SufficientStats: shape mismatch");
  outer += o.outer;
  feat_fq += o.feat_fq;
  jac_S += o.jac_S;
  phi_outer += o.phi_outer;
  fq_phi += o.fq_phi;
  weight += o.weight;
  constant += o.constant;
  return *this;
}

TimeNodes stats_nodes(const TimeGrid& grid, StatsQuadrature rule) {
  TimeNodes out;
  if (grid.steps() == 0) return out;
  if (rule == StatsQuadrature::Grid) {
    for (std::size_t r = 0; r < grid.steps(); ++r) {
      out.times.push_back(grid.time(r));
      out.weights.push_back(grid.dt());
    }
  } else {
    const std::size_t n = std::min<std::size_t>(3 * grid.steps(), 2000);
    const Quadrature q = gauss_legendre(n, grid.t0(), grid.t_end());
    out.times = q.nodes;
    out.weights = q.weights;
  }
  return out;
}

SufficientStats trial_stats(const PathPosterior& path, const FeatureExpectationEngine* engine, StatsQuadrature rule) {
  const Eigen::Index K = path.dim();
  const Eigen::Index P = engine ? engine->layout().total() : 0;
  SufficientStats s = SufficientStats::zeros(P, K);
  const TimeNodes nodes = stats_nodes(path.grid, rule);
  for (std::size_t i = 0; i < nodes.times.size(); ++i) {
    const double w = nodes.weights[i];
    Vec m;
    Mat S, A;
    Vec b;
    if (rule == StatsQuadrature::Grid) {
      m = path.m[i];
      S = path.S[i];
      A = path.A[i];
      b = path.b[i];
    } else {
      const double t = nodes.times[i];
      m = interp_linear(path.grid, path.m, t);
      S = interp_linear(path.grid, path.S, t);
      A = interp_linear(path.grid, path.A, t);
      b = interp_linear(path.grid, path.b, t);
    }
    const Vec Am = A * m;
    const Vec fq = b - Am;
    const Mat second = S + m * m.transpose();
    s.phi_outer.topLeftCorner(K, K) += w * second;
    s.phi_outer.block(0, K, K, 1) += w * m;
    s.phi_outer.block(K, 0, 1, K) += w * m.transpose();
    s.phi_outer(K, K) += w;
    s.fq_phi.leftCols(K) += w * (b * m.transpose() - A * second);
    s.fq_phi.col(K) += w * fq;
    s.weight += w;
    s.constant += w * 0.5 * ((A.transpose() * A * second).trace() + b.squaredNorm() - 2.0 * b.dot(Am));
    if (engine) {
      const FeatureExpectations ex = engine->expectations({m, S}, true);
      s.outer += w * ex.psi_outer;
      s.feat_fq += w * ex.psi * fq.transpose();
      s.jac_S += w * ex.psi_jac * S * A.transpose();
    }
  }
  s.outer = symmetrize(s.outer);
  return s;
}

SufficientStats accumulate_stats(const std::vector<const PathPosterior*>& paths, const FeatureExpectationEngine* engine,
                                 StatsQuadrature rule, std::size_t workers) {
  if (paths.empty()) throw InvalidArgument("accumulate_stats: no paths");
  std::vector<SufficientStats> parts(paths.size());
  parallel_for(
      paths.size(), [&](std::size_t j) { parts[j] = trial_stats(*paths[j], engine, rule); }, workers);
  SufficientStats total = parts.front();
  for (std::size_t j = 1; j < parts.size(); ++j) total += parts[j];
  return total;
}

double stats_energy(const SufficientStats& stats, const DynamicsModel& model) {
  if (stats.outer.rows() != model.layout().total()) throw InvalidArgument("stats_energy: stats do not match model");
  const double K = static_cast<double>(model.dim());
  return 0.5 * K * model.kernel().signal_var * stats.weight + 0.5 * model.fsq_weight().cwiseProduct(stats.outer).sum() +
         model.beta().cwiseProduct(stats.jac_S - stats.feat_fq).sum() + stats.constant;
}

double linear_energy(const SufficientStats& stats, const Mat& A, const Vec& b) {
  const Eigen::Index K = A.rows();
  if (stats.phi_outer.rows() != K + 1) throw InvalidArgument("linear_energy: stats do not match drift");
  Mat Theta(K, K + 1);
  Theta << -A, b;
  return 0.5 * (Theta * stats.phi_outer * Theta.transpose()).trace() - (Theta * stats.fq_phi.transpose()).trace() +
         stats.constant;
}

std::vector<Mat> update_inducing_cov(const SufficientStats& stats, const DynamicsModel& model) {
  if (stats.outer.rows() != model.layout().total()) throw InvalidArgument("update_inducing_cov: stats do not match model");
  const Eigen::Index M = model.num_inducing();
  const Mat Ku = model.k_theta_inv().topRows(M);
  const Mat prec = symmetrize(model.omega_u_inv() + Ku * stats.outer * Ku.transpose());
  const Mat S = symmetrize(spd_inverse(prec, "update_inducing_cov"));
  return std::vector<Mat>(static_cast<std::size_t>(model.dim()), S);
}

MeanJacobianUpdate update_inducing_means_jacobians(const SufficientStats& stats, const DynamicsModel& model) {
  const FeatureLayout lay = model.layout();
  if (stats.outer.rows() != lay.total())
    throw InvalidArgument("update_inducing_means_jacobians: stats do not match model");
  const Eigen::Index M = lay.M;
  const Eigen::Index LK = lay.L * lay.K;
  const Eigen::Index n = M + LK;
  const Mat& Kinv = model.k_theta_inv();
  Mat Ks(n, lay.total());
  Ks.topRows(M) = Kinv.topRows(M);
  Ks.bottomRows(LK) = Kinv.bottomRows(LK);

  const Mat& Oi = model.omega_u_inv();
  const Mat OiG = Oi * model.G();
  Mat Omt(n, n);
  Omt.topLeftCorner(M, M) = Oi;
  Omt.topRightCorner(M, LK) = -OiG;
  Omt.bottomLeftCorner(LK, M) = -OiG.transpose();
  Omt.bottomRightCorner(LK, LK) = model.G().transpose() * OiG;

  const Mat B1 = symmetrize(Omt + Ks * stats.outer * Ks.transpose());
  const Mat rhs = Ks * (stats.feat_fq - stats.jac_S);
  Mat X;
  try {
    X = PsdFactor(B1, 0.0).solve(rhs);
  } catch (const NumericalError& e) {
    throw NumericalError("update_inducing_means_jacobians: system is singular", e.jitter());
  }
  MeanJacobianUpdate out;
  for (Eigen::Index k = 0; k < lay.K; ++k) out.m_u.push_back(X.col(k).head(M));
  out.J.assign(static_cast<std::size_t>(lay.L), Mat::Zero(lay.K, lay.K));
  for (Eigen::Index i = 0; i < lay.L; ++i)
    for (Eigen::Index k = 0; k < lay.K; ++k) out.J[i].row(k) = X.col(k).segment(M + i * lay.K, lay.K).transpose();
  return out;
}

SparseUpdate update_sparse_plain(const SufficientStats& stats, const DynamicsModel& model) {
  if (model.num_fixed_points() != 0) throw InvalidArgument("update_sparse_plain: model has fixed points");
  if (stats.outer.rows() != model.num_inducing()) throw InvalidArgument("update_sparse_plain: stats do not match model");
  const Mat& Kzz = model.k_theta();
  const Mat S = symmetrize(Kzz * psd_solve(symmetrize(Kzz + stats.outer), Kzz));
  const Mat mu = S * (model.k_theta_inv() * (stats.feat_fq - stats.jac_S));
  SparseUpdate out;
  out.S_u.assign(static_cast<std::size_t>(model.dim()), S);
  for (Eigen::Index k = 0; k < model.dim(); ++k) out.m_u.push_back(mu.col(k));
  return out;
}

LinearDynamics update_linear_dynamics(const SufficientStats& stats) {
  const Eigen::Index K = stats.fq_phi.rows();
  Eigen::LLT<Mat> llt(symmetrize(stats.phi_outer));
  if (llt.info() != Eigen::Success || stats.weight <= 0.0)
    throw NumericalError("update_linear_dynamics: second-moment integral is singular");
  const Mat Theta = llt.solve(Mat(stats.fq_phi.transpose())).transpose();
  return {-Theta.leftCols(K), Theta.col(K)};
}

void update_dynamics(DynamicsModel& model, const SufficientStats& stats, DynamicsVariant variant) {
  switch (variant) {
    case DynamicsVariant::Conditioned: {
      model.set_inducing_covs(update_inducing_cov(stats, model));
      const MeanJacobianUpdate mj = update_inducing_means_jacobians(stats, model);
      model.set_inducing_means(mj.m_u);
      model.set_jacobians(mj.J);
      break;
    }
    case DynamicsVariant::SparsePlain: {
      const SparseUpdate up = update_sparse_plain(stats, model);
      model.set_inducing_covs(up.S_u);
      model.set_inducing_means(up.m_u);
      break;
    }
    case DynamicsVariant::Linear:
      throw InvalidArgument("update_dynamics: the linear variant has no GP model");
  }
}

double collapsed_drift_bound(DynamicsModel& model, const SufficientStats& stats, DynamicsVariant variant) {
  update_dynamics(model, stats, variant);
  return -stats_energy(stats, model) - model.kl_inducing();
}

namespace {

enum class Block { Kernel, Locations, Alphas };

Vec pack(const DynamicsModel& model, Block block) {
  const Eigen::Index K = model.dim();
  const Eigen::Index L = model.num_fixed_points();
  switch (block) {
    case Block::Kernel: {
      Vec v(1 + K);
      v[0] = std::log(model.kernel().signal_var);
      v.tail(K) = model.kernel().lengthscales.array().log().matrix();
      return v;
    }
    case Block::Locations: {
      Vec v(L * K);
      for (Eigen::Index i = 0; i < L; ++i) v.segment(i * K, K) = model.fixed_points().locations.row(i).transpose();
      return v;
    }
    case Block::Alphas:
      return model.fixed_points().alphas.array().log().matrix();
  }
  return {};
}

void unpack(DynamicsModel& model, Block block, const Vec& v) {
  const Eigen::Index K = model.dim();
  switch (block) {
    case Block::Kernel: {
      KernelSpec spec = model.kernel();
      spec.signal_var = std::exp(v[0]);
      spec.lengthscales = v.tail(K).array().exp().matrix();
      model.set_kernel(spec);
      break;
    }
    case Block::Locations: {
      FixedPointSet fps = model.fixed_points();
      for (Eigen::Index i = 0; i < fps.locations.rows(); ++i) fps.locations.row(i) = v.segment(i * K, K).transpose();
      model.set_fixed_points(fps);
      break;
    }
    case Block::Alphas:
      model.set_alphas(v.array().exp().matrix());
      break;
  }
  model.build();
}

/// Collapsed bound at block parameters v; NaN when the model cannot be built.
struct BlockObjective {
  const DynamicsModel& base;
  const std::vector<const PathPosterior*>& paths;
  DynamicsVariant variant;
  Block block;
  StatsQuadrature rule;
  std::size_t workers;
  const SufficientStats* fixed_stats;  // reused when the features do not change

  double operator()(const Vec& v, DynamicsModel* out = nullptr) const {
    try {
      DynamicsModel model = base;
      unpack(model, block, v);
      double value;
      if (fixed_stats) {
        value = collapsed_drift_bound(model, *fixed_stats, variant);
      } else {
        const SufficientStats stats = accumulate_stats(paths, &model.engine(), rule, workers);
        value = collapsed_drift_bound(model, stats, variant);
      }
      if (!std::isfinite(value)) return std::numeric_limits<double>::quiet_NaN();
      if (out) *out = std::move(model);
      return value;
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::quiet_NaN();
    } catch (const InvalidArgument&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }
};

}  // namespace

HyperoptResult optimize_hyperparameters(DynamicsModel& model, const std::vector<const PathPosterior*>& paths,
                                        DynamicsVariant variant, const HyperoptConfig& config, StatsQuadrature rule,
                                        std::size_t workers) {
  if (variant == DynamicsVariant::Linear) throw InvalidArgument("optimize_hyperparameters: linear variant");
  if (config.fd_step <= 0.0 || config.initial_step <= 0.0 || config.max_backtracks < 0)
    throw InvalidArgument("optimize_hyperparameters: invalid line-search settings");
  HyperoptResult res;
  SufficientStats stats = accumulate_stats(paths, &model.engine(), rule, workers);
  double current = collapsed_drift_bound(model, stats, variant);
  res.before = current;

  std::vector<Block> blocks;
  if (config.kernel) blocks.push_back(Block::Kernel);
  if (model.num_fixed_points() > 0 && variant == DynamicsVariant::Conditioned) {
    if (config.locations) blocks.push_back(Block::Locations);
    if (config.alphas) blocks.push_back(Block::Alphas);
  }

  for (int step = 0; step < config.steps; ++step) {
    for (Block block : blocks) {
      const BlockObjective obj{model, paths, variant, block, rule, workers,
                               block == Block::Alphas ? &stats : nullptr};
      const Vec x = pack(model, block);
      Vec grad(x.size());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Vec xp = x, xm = x;
        xp[i] += config.fd_step;
        xm[i] -= config.fd_step;
        const double fp = obj(xp);
        const double fm = obj(xm);
        grad[i] = (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * config.fd_step) : 0.0;
      }
      const double gnorm = grad.norm();
      if (!(gnorm > 0.0) || !std::isfinite(gnorm)) continue;
      const Vec dir = grad / gnorm;
      double delta = config.initial_step;
      for (int bt = 0; bt <= config.max_backtracks; ++bt, delta *= 0.5) {
        ++res.proposals;
        DynamicsModel candidate;
        const double value = obj(x + delta * dir, &candidate);
        if (std::isfinite(value) && value > current + 1e-12 * std::max(1.0, std::abs(current))) {
          model = std::move(candidate);
          current = value;
          ++res.accepted;
          if (block != Block::Alphas) stats = accumulate_stats(paths, &model.engine(), rule, workers);
          break;
        }
      }
    }
  }
  res.after = current;
  return res;
}

void FitConfig::validate() const {
  if (latent_dim <= 0) throw InvalidArgument("config: latent_dim must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("config: dt must be positive");
  if (outer_iters <= 0) throw InvalidArgument("config: outer_iters must be positive");
  if (!(tol >= 0.0)) throw InvalidArgument("config: tol must be nonnegative");
  if (smooth.max_iters <= 0 || !(smooth.tol > 0.0)) throw InvalidArgument("config: invalid smoother settings");
  if (hyperopt.steps < 0 || !(hyperopt.fd_step > 0.0) || !(hyperopt.initial_step > 0.0) || hyperopt.max_backtracks < 0)
    throw InvalidArgument("config: invalid hyperopt settings");
  if (variant != DynamicsVariant::Linear) {
    if (static_cast<Eigen::Index>(inducing_per_dim.size()) != latent_dim)
      throw InvalidArgument("config: inducing_per_dim needs one entry per latent dimension");
    for (int n : inducing_per_dim)
      if (n <= 0) throw InvalidArgument("config: inducing counts must be positive");
    if (inducing_lo.size() != inducing_hi.size() ||
        (!inducing_lo.empty() && static_cast<Eigen::Index>(inducing_lo.size()) != latent_dim))
      throw InvalidArgument("config: inducing bounds need one entry per latent dimension");
    for (std::size_t d = 0; d < inducing_lo.size(); ++d)
      if (!(inducing_hi[d] > inducing_lo[d])) throw InvalidArgument("config: inducing_hi must exceed inducing_lo");
    if (!(signal_var > 0.0) || !(lengthscale > 0.0)) throw InvalidArgument("config: kernel parameters must be positive");
  }
  if (variant == DynamicsVariant::Conditioned) {
    if (num_fixed_points < 0) throw InvalidArgument("config: num_fixed_points must be nonnegative");
    if (!(initial_alpha > 0.0)) throw InvalidArgument("config: initial_alpha must be positive");
    if (!fixed_point_init.empty() &&
        static_cast<Eigen::Index>(fixed_point_init.size()) != num_fixed_points * latent_dim)
      throw InvalidArgument("config: fixed_point_init must hold num_fixed_points x latent_dim values");
  }
  if (!(noise_floor > 0.0)) throw InvalidArgument("config: noise_floor must be positive");
}

std::vector<FixedPointSummary> summarize_fixed_points(const DynamicsModel& model) {
  std::vector<FixedPointSummary> out;
  for (Eigen::Index i = 0; i < model.num_fixed_points(); ++i) {
    FixedPointSummary s;
    s.location = model.fixed_points().locations.row(i).transpose();
    s.alpha = model.fixed_points().alphas[i];
    s.jacobian = model.jacobians()[i];
    Eigen::EigenSolver<Mat> es(s.jacobian, false);
    std::vector<std::pair<double, double>> ev;
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k)
      ev.emplace_back(es.eigenvalues()[k].real(), es.eigenvalues()[k].imag());
    std::sort(ev.begin(), ev.end());
    s.eig_re.resize(static_cast<Eigen::Index>(ev.size()));
    s.eig_im.resize(static_cast<Eigen::Index>(ev.size()));
    for (std::size_t k = 0; k < ev.size(); ++k) {
      s.eig_re[static_cast<Eigen::Index>(k)] = ev[k].first;
      s.eig_im[static_cast<Eigen::Index>(k)] = ev[k].second;
    }
    s.stable = (s.eig_re.array() < 0.0).all();
    out.push_back(std::move(s));
  }
  return out;
}

std::shared_ptr<const DriftModel> FitResult::drift() const {
  if (variant == DynamicsVariant::Linear) return std::make_shared<LinearDrift>(linear.A, linear.b);
  return std::shared_ptr<const DriftModel>(std::shared_ptr<const DriftModel>(), &dynamics);
}

Mat pseudo_latents(const std::vector<TrialData>& trials, const ObservationModel& map, double bin_width) {
  const Eigen::Index K = map.C.cols();
  const Eigen::Index N = map.C.rows();
  std::vector<Vec> cols;
  if (map.kind == ObservationKind::Gaussian) {
    const Vec ginv = map.Gamma.size() == N ? Vec(map.Gamma.cwiseInverse()) : Vec(Vec::Ones(N));
    const Mat CtGi = map.C.transpose() * ginv.asDiagonal();
    Mat H = CtGi * map.C;
    H.diagonal().array() += 1e-10 * std::max(1.0, H.diagonal().mean());
    Eigen::LDLT<Mat> ldlt(H);
    for (const auto& tr : trials)
      for (Eigen::Index i = 0; i < tr.Y.cols(); ++i) cols.push_back(ldlt.solve(CtGi * (tr.Y.col(i) - map.d)));
  } else {
    if (!(bin_width > 0.0)) throw InvalidArgument("pseudo_latents: bin width must be positive");
    Mat H = map.C.transpose() * map.C;
    H.diagonal().array() += 1e-10 * std::max(1.0, H.diagonal().mean());
    Eigen::LDLT<Mat> ldlt(H);
    for (const auto& tr : trials) {
      const double span = tr.t_end - tr.t0;
      const auto bins = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(span / bin_width)));
      const double w = span / static_cast<double>(bins);
      Mat counts = Mat::Zero(N, static_cast<Eigen::Index>(bins));
      for (Eigen::Index n = 0; n < N; ++n)
        for (double t : tr.events[static_cast<std::size_t>(n)]) {
          auto b = static_cast<std::size_t>((t - tr.t0) / w);
          counts(n, static_cast<Eigen::Index>(std::min(b, bins - 1))) += 1.0;
        }
      for (Eigen::Index b = 0; b < counts.cols(); ++b) {
        const Vec eta = ((counts.col(b).array() + 0.5) / w).log().matrix() - map.d;
        cols.push_back(ldlt.solve(map.C.transpose() * eta));
      }
    }
  }
  Mat X(K, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = cols[i];
  return X;
}

ObservationModel pca_output_map(const std::vector<TrialData>& trials, Eigen::Index K, double noise_floor) {
  if (trials.empty()) throw InvalidArgument("pca_output_map: no trials");
  const Eigen::Index N = trials.front().num_channels();
  if (K <= 0 || K > N) throw InvalidArgument("pca_output_map: latent dimension must be in [1, channels]");
  Eigen::Index T = 0;
  for (const auto& tr : trials) {
    if (tr.kind != ObservationKind::Gaussian) throw InvalidArgument("pca_output_map: Gaussian observations required");
    if (tr.num_channels() != N) throw InvalidArgument("pca_output_map: channel count mismatch");
    T += tr.Y.cols();
  }
  if (T < 2) throw InvalidArgument("pca_output_map: need at least two observations");
  Mat Y(N, T);
  Eigen::Index c = 0;
  for (const auto& tr : trials) {
    Y.middleCols(c, tr.Y.cols()) = tr.Y;
    c += tr.Y.cols();
  }
  ObservationModel map;
  map.kind = ObservationKind::Gaussian;
  map.d = Y.rowwise().mean();
  const Mat centered = Y.colwise() - map.d;
  const Mat cov = centered * centered.transpose() / static_cast<double>(T - 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  map.C.resize(N, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::Index col = N - 1 - k;
    Vec v = es.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;
    map.C.col(k) = std::sqrt(std::max(es.eigenvalues()[col], 0.0)) * v;
  }
  map.Gamma = (cov - map.C * map.C.transpose()).diagonal().cwiseMax(noise_floor);
  return map;
}

Mat kmeans(const Mat& X, Eigen::Index k, std::uint64_t seed, int iters) {
  const Eigen::Index K = X.rows();
  const Eigen::Index n = X.cols();
  if (k == 0) return Mat(0, K);
  if (k > n) throw InvalidArgument("kmeans: more clusters than points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Mat centers(k, K);
  centers.row(0) = X.col(static_cast<Eigen::Index>(unif(rng) * static_cast<double>(n)) % n).transpose();
  Vec d2(n);
  for (Eigen::Index c = 1; c < k; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < c; ++j) best = std::min(best, (X.col(i) - centers.row(j).transpose()).squaredNorm());
      d2[i] = best;
    }
    const double total = d2.sum();
    Eigen::Index pick = n - 1;
    if (total > 0.0) {
      double u = unif(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = X.col(pick).transpose();
  }
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best_j = 0;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k; ++j) {
        const double d = (X.col(i) - centers.row(j).transpose()).squaredNorm();
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      if (assign[static_cast<std::size_t>(i)] != best_j) {
        assign[static_cast<std::size_t>(i)] = best_j;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(k, K);
    Vec counts = Vec::Zero(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += X.col(i).transpose();
      counts[assign[static_cast<std::size_t>(i)]] += 1.0;
    }
    for (Eigen::Index j = 0; j < k; ++j)
      if (counts[j] > 0.0) centers.row(j) = sums.row(j) / counts[j];
    if (!changed) break;
  }
  return centers;
}

FitInit initialize_fit(const std::vector<TrialData>& trials, const ObservationModel& initial_map,
                       const FitConfig& config) {
  config.validate();
  if (trials.empty()) throw InvalidArgument("fit: no trials");
  initial_map.validate();
  const Eigen::Index K = config.latent_dim;
  if (initial_map.C.cols() != K) throw InvalidArgument("fit: output map column count must equal latent_dim");
  for (const auto& tr : trials) {
    tr.validate();
    if (tr.kind != initial_map.kind) throw InvalidArgument("fit: trial observation kind does not match output map");
    if (tr.num_channels() != initial_map.C.rows()) throw InvalidArgument("fit: trial channel count mismatch");
  }

  FitInit init;
  init.output_map = initial_map;
  const Mat X = pseudo_latents(trials, initial_map);
  if (X.cols() < 2) throw InvalidArgument("fit: need at least two observations");

  const Vec mean = X.rowwise().mean();
  const Mat centered = X.colwise() - mean;
  Mat cov = centered * centered.transpose() / static_cast<double>(X.cols() - 1);
  cov.diagonal().array() += 1e-6;
  init.prior = InitialState::from_prior(mean, cov);

  init.linear = {Mat::Zero(K, K), Vec::Zero(K)};
  if (config.variant == DynamicsVariant::Linear) return init;

  std::vector<std::vector<double>> axes;
  for (Eigen::Index d = 0; d < K; ++d) {
    const double lo = config.inducing_lo.empty() ? X.row(d).minCoeff() : config.inducing_lo[d];
    const double hi = config.inducing_hi.empty() ? X.row(d).maxCoeff() : config.inducing_hi[d];
    axes.push_back(linspace(lo, hi, static_cast<std::size_t>(config.inducing_per_dim[d])));
  }
  Eigen::Index M = 1;
  for (const auto& a : axes) M *= static_cast<Eigen::Index>(a.size());
  Mat Z(M, K);
  for (Eigen::Index row = 0; row < M; ++row) {
    Eigen::Index rem = row;
    for (Eigen::Index d = K - 1; d >= 0; --d) {
      const auto nd = static_cast<Eigen::Index>(axes[d].size());
      Z(row, d) = axes[d][static_cast<std::size_t>(rem % nd)];
      rem /= nd;
    }
  }

  FixedPointSet fps;
  const Eigen::Index L = config.variant == DynamicsVariant::Conditioned ? config.num_fixed_points : 0;
  if (L > 0 && !config.fixed_point_init.empty()) {
    fps.locations.resize(L, K);
    for (Eigen::Index i = 0; i < L; ++i)
      for (Eigen::Index d = 0; d < K; ++d) fps.locations(i, d) = config.fixed_point_init[i * K + d];
  } else {
    fps.locations = kmeans(X, L, config.seed);
  }
  fps.alphas = Vec::Constant(L, config.initial_alpha);

  KernelSpec spec;
  spec.signal_var = config.signal_var;
  spec.lengthscales = Vec::Constant(K, config.lengthscale);
  init.dynamics = DynamicsModel(spec, Z, fps);
  return init;
}

namespace {

double total_free_energy(const std::vector<TrialData>& trials, const std::vector<TrialPosterior>& posts,
                         const DriftModel& drift, const ObservationModel& map, std::size_t workers) {
  std::vector<double> values(trials.size());
  parallel_for(
      trials.size(),
      [&](std::size_t j) { values[j] = evaluate_trial(trials[j], posts[j].path, posts[j].init, drift, map).value(); },
      workers);
  double total = -drift.kl();
  for (double v : values) total += v;
  return total;
}

}  // namespace

FitResult fit(const std::vector<TrialData>& trials, const ObservationModel& initial_map, const FitConfig& config,
              const FitProgress& progress) {
  FitInit init = initialize_fit(trials, initial_map, config);
  const std::size_t workers = config.threads;
  FitResult res;
  res.variant = config.variant;
  res.dynamics = std::move(init.dynamics);
  res.linear = init.linear;
  res.output_map = init.output_map;

  std::vector<TimeGrid> grids;
  for (const auto& tr : trials) grids.emplace_back(tr.t0, tr.t_end, config.dt);
  res.report.grid_size = grids.front().size();

  const std::size_t n = trials.size();
  res.posteriors.resize(n);
  std::vector<const PathPosterior*> paths(n);
  for (std::size_t j = 0; j < n; ++j) paths[j] = &res.posteriors[j].path;

  double previous = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.outer_iters; ++it) {
    const auto t_start = std::chrono::steady_clock::now();
    PhaseValues phase;
    const auto drift = res.drift();

    std::vector<TrialPosterior> next(n);
    parallel_for(
        n,
        [&](std::size_t j) {
          try {
            if (it == 0)
              next[j] = smooth_trial(trials[j], *drift, res.output_map, init.prior, grids[j], config.smooth);
            else
              next[j] = smooth_trial(trials[j], *drift, res.output_map, res.posteriors[j].init, grids[j], config.smooth,
                                     &res.posteriors[j].path);
          } catch (const DivergenceError& e) {
            throw DivergenceError("trial " + std::to_string(j) + ": " + e.what(), e.step());
          }
        },
        workers);
    res.posteriors = std::move(next);
    for (std::size_t j = 0; j < n; ++j) paths[j] = &res.posteriors[j].path;
    res.report.unconverged_trials = 0;
    for (const auto& p : res.posteriors)
      if (!p.converged) ++res.report.unconverged_trials;
    phase.inference = total_free_energy(trials, res.posteriors, *drift, res.output_map, workers);

    if (config.variant == DynamicsVariant::Linear) {
      const SufficientStats stats = accumulate_stats(paths, nullptr, config.quadrature, workers);
      res.linear = update_linear_dynamics(stats);
    } else {
      const SufficientStats stats = accumulate_stats(paths, &res.dynamics.engine(), config.quadrature, workers);
      update_dynamics(res.dynamics, stats, config.variant);
    }
    phase.dynamics = total_free_energy(trials, res.posteriors, *res.drift(), res.output_map, workers);

    phase.output_map = phase.dynamics;
    if (res.output_map.kind == ObservationKind::Gaussian && !config.freeze_output_map) {
      std::vector<ObservedMoments> moments(n);
      for (std::size_t j = 0; j < n; ++j)
        moments[j] = observed_moments(trials[j], grids[j], res.posteriors[j].path.m, res.posteriors[j].path.S);
      const OutputMapUpdate cd = gaussian_update_Cd(trials, moments);
      res.output_map.C = cd.C;
      res.output_map.d = cd.d;
      if (!config.freeze_noise)
        res.output_map.Gamma = gaussian_update_noise(trials, moments, cd.C, cd.d, config.noise_floor);
      phase.output_map = total_free_energy(trials, res.posteriors, *res.drift(), res.output_map, workers);
    }

    phase.hyperparameters = phase.output_map;
    int accepted = 0;
    if (config.variant != DynamicsVariant::Linear && config.hyperopt.steps > 0) {
      const HyperoptResult h =
          optimize_hyperparameters(res.dynamics, paths, config.variant, config.hyperopt, config.quadrature, workers);
      accepted = h.accepted;
      phase.hyperparameters = total_free_energy(trials, res.posteriors, res.dynamics, res.output_map, workers);
    }

    const double value = phase.hyperparameters;
    res.report.trace.push_back(value);
    res.report.phases.push_back(phase);
    res.report.hyperopt_accepted.push_back(accepted);
    res.report.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count());
    res.report.iterations = it + 1;
    if (progress) progress(it + 1, value);
    if (std::isfinite(previous) && std::abs(value - previous) <= config.tol * std::abs(previous)) {
      res.report.converged = true;
      break;
    }
    previous = value;
  }
  if (config.variant != DynamicsVariant::Linear) res.report.fixed_points = summarize_fixed_points(res.dynamics);
  return res;
}

}  // namespace lsde
