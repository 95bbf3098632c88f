#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsde/inference.hpp"

namespace lsde {

enum class DynamicsVariant { Conditioned, SparsePlain, Linear };
enum class StatsQuadrature { Grid, GaussLegendre };

std::string to_string(DynamicsVariant v);
DynamicsVariant parse_variant(const std::string& name);
std::string to_string(StatsQuadrature q);
StatsQuadrature parse_quadrature(const std::string& name);

/// Time integrals of path moments, summed over trials. Feature blocks are in
/// psi-space (P = M + L + LK); f_q = -A x + b is the posterior drift.
///   outer   = int <psi psi^T>
///   feat_fq = int <psi> <f_q>^T
///   jac_S   = int <d psi/dx> S A^T
///   phi_outer = int <phi phi^T>, fq_phi = int <f_q phi^T> with phi = [x; 1]
///   constant  = int 0.5 <|A x - b|^2>
struct SufficientStats {
  Mat outer;
  Mat feat_fq;
  Mat jac_S;
  Mat phi_outer;
  Mat fq_phi;
  double weight = 0.0;
  double constant = 0.0;

  static SufficientStats zeros(Eigen::Index P, Eigen::Index K);
  bool has_features() const { return outer.size() > 0; }
  SufficientStats& operator+=(const SufficientStats& other);
};

/// Time weights for one path. Grid uses the left-Riemann energy weights, so
/// stats_energy reproduces the smoother's path-KL term exactly.
struct TimeNodes {
  std::vector<double> times;
  std::vector<double> weights;
};
TimeNodes stats_nodes(const TimeGrid& grid, StatsQuadrature rule);

/// One trial; `engine` may be null, in which case only the linear blocks are filled.
SufficientStats trial_stats(const PathPosterior& path, const FeatureExpectationEngine* engine,
                            StatsQuadrature rule = StatsQuadrature::Grid);

/// Per-trial stats in parallel, reduced in trial order.
SufficientStats accumulate_stats(const std::vector<const PathPosterior*>& paths, const FeatureExpectationEngine* engine,
                                 StatsQuadrature rule = StatsQuadrature::Grid, std::size_t workers = 0);

/// Summed path-KL energy of a GP drift expressed through the stats.
double stats_energy(const SufficientStats& stats, const DynamicsModel& model);

/// Summed path-KL energy of the linear drift -A x + b.
double linear_energy(const SufficientStats& stats, const Mat& A, const Vec& b);

/// S_u = (Omega_u^-1 + [Kinv outer Kinv]_uu)^-1, identical for every k.
std::vector<Mat> update_inducing_cov(const SufficientStats& stats, const DynamicsModel& model);

struct MeanJacobianUpdate {
  std::vector<Vec> m_u;
  std::vector<Mat> J;
};
/// Joint solve (Omega~ + I2_[uj,uj]) [m_u; j] = (B2 - B3)_[uj] for all K columns.
MeanJacobianUpdate update_inducing_means_jacobians(const SufficientStats& stats, const DynamicsModel& model);

struct SparseUpdate {
  std::vector<Mat> S_u;
  std::vector<Vec> m_u;
};
/// Plain sparse GP (no fixed points): S_u = Kzz (Kzz + T)^-1 Kzz,
/// m_u = S_u Kzz^-1 (T_fq - T_jac).
SparseUpdate update_sparse_plain(const SufficientStats& stats, const DynamicsModel& model);

struct LinearDynamics {
  Mat A;
  Vec b;
};
/// Minimiser of the linear-drift energy: [-A, b] = fq_phi phi_outer^-1.
LinearDynamics update_linear_dynamics(const SufficientStats& stats);

/// Applies the closed-form updates for `variant` to `model`.
void update_dynamics(DynamicsModel& model, const SufficientStats& stats, DynamicsVariant variant);

/// -stats_energy - kl_inducing after re-optimising q(u) and J in closed form.
/// `model` is left at the optimum.
double collapsed_drift_bound(DynamicsModel& model, const SufficientStats& stats, DynamicsVariant variant);

struct HyperoptConfig {
  int steps = 1;  // ascent steps per block per call
  double fd_step = 1e-4;
  double initial_step = 0.5;
  int max_backtracks = 10;
  bool kernel = true;
  bool locations = true;
  bool alphas = true;
};

struct HyperoptResult {
  int accepted = 0;
  int proposals = 0;
  double before = 0.0;
  double after = 0.0;
};

/// Coordinate ascent on the collapsed drift bound over log signal variance,
/// log lengthscales, fixed-point locations and log alphas (in that block order)
/// with central-difference gradients and a backtracking line search along the
/// normalised gradient. Proposals are accepted only if the bound increases.
/// Paths are held fixed; q(u) and J end at their closed-form optimum.
HyperoptResult optimize_hyperparameters(DynamicsModel& model, const std::vector<const PathPosterior*>& paths,
                                        DynamicsVariant variant, const HyperoptConfig& config,
                                        StatsQuadrature rule = StatsQuadrature::Grid, std::size_t workers = 0);

struct FitConfig {
  DynamicsVariant variant = DynamicsVariant::Conditioned;
  Eigen::Index latent_dim = 1;
  Eigen::Index num_fixed_points = 4;
  std::vector<int> inducing_per_dim{8};
  /// Inducing grid bounds per dimension; empty means the pseudo-latent range.
  std::vector<double> inducing_lo;
  std::vector<double> inducing_hi;
  /// Optional initial fixed points (L x K, row-major); empty means k-means.
  std::vector<double> fixed_point_init;
  double signal_var = 1.0;
  double lengthscale = 1.0;
  double initial_alpha = 0.1;
  double dt = 1e-3;
  int outer_iters = 30;
  double tol = 1e-6;
  SmoothConfig smooth;
  HyperoptConfig hyperopt;
  StatsQuadrature quadrature = StatsQuadrature::Grid;
  std::uint64_t seed = 0;
  bool freeze_output_map = false;
  bool freeze_noise = false;
  double noise_floor = 1e-6;
  std::size_t threads = 0;
  bool verbose = false;

  void validate() const;
};

/// Free energy recorded after each phase of one outer iteration.
struct PhaseValues {
  double inference = 0.0;
  double dynamics = 0.0;
  double output_map = 0.0;
  double hyperparameters = 0.0;
};

struct FixedPointSummary {
  Vec location;
  double alpha = 0.0;
  Mat jacobian;
  Vec eig_re;
  Vec eig_im;
  bool stable = false;
};

struct FitReport {
  std::vector<double> trace;
  std::vector<PhaseValues> phases;
  std::vector<double> seconds;
  std::vector<int> hyperopt_accepted;
  std::vector<FixedPointSummary> fixed_points;
  std::size_t grid_size = 0;
  int iterations = 0;
  bool converged = false;
  int unconverged_trials = 0;
};

std::vector<FixedPointSummary> summarize_fixed_points(const DynamicsModel& model);

struct FitResult {
  DynamicsVariant variant = DynamicsVariant::Conditioned;
  DynamicsModel dynamics;  // unused for the linear variant
  LinearDynamics linear;   // used only for the linear variant
  ObservationModel output_map;
  std::vector<TrialPosterior> posteriors;
  FitReport report;

  /// The drift used for smoothing: `dynamics`, or -A x + b from `linear`.
  std::shared_ptr<const DriftModel> drift() const;
};

/// Least-squares latent estimates (K x count) at the observation times of every
/// trial, or at bin centres of the log event rates for point processes.
Mat pseudo_latents(const std::vector<TrialData>& trials, const ObservationModel& map, double bin_width = 0.05);

/// Gaussian output map from the principal components of the pooled
/// observations: C spans the top-K directions (scaled by their standard
/// deviations), d is the mean, Gamma the per-channel residual variance.
ObservationModel pca_output_map(const std::vector<TrialData>& trials, Eigen::Index K, double noise_floor = 1e-6);

/// Deterministic k-means (k-means++ seeding from `seed`) on the columns of X.
Mat kmeans(const Mat& X, Eigen::Index k, std::uint64_t seed, int iters = 100);

/// Builds the initial model, output map and trial priors.
struct FitInit {
  DynamicsModel dynamics;
  LinearDynamics linear;
  ObservationModel output_map;
  InitialState prior;
};
FitInit initialize_fit(const std::vector<TrialData>& trials, const ObservationModel& initial_map, const FitConfig& config);

/// Called after each outer iteration with (1-based iteration, F*).
using FitProgress = std::function<void(int, double)>;

/// Variational EM over the trials starting from `initial_map`.
FitResult fit(const std::vector<TrialData>& trials, const ObservationModel& initial_map, const FitConfig& config,
              const FitProgress& progress = nullptr);

}  // namespace lsde
