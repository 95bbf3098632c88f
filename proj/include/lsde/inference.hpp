#pragma once

#include <vector>

#include "lsde/dynamics.hpp"
#include "lsde/likelihood.hpp"

namespace lsde {

/// Prior N(mu0, Sig0) over x(t0) and the current variational moments (m0, S0).
struct InitialState {
  Vec mu0;
  Mat Sig0;
  Vec m0;
  Mat S0;

  static InitialState from_prior(const Vec& mu0, const Mat& Sig0);
  void validate() const;
};

/// Gaussian-process posterior over one latent path on a uniform grid.
///
/// `lam` and `Psi` are the adjoints: lam[r] = -dJ/dm_{r+1} and Psi[r] =
/// -dJ/dS_{r+1} for r < R, lam[R] = 0, Psi[R] = 0, where J is the trial
/// objective without the initial-state KL. `lam_start`, `Psi_start` are the
/// same derivatives with respect to (m0, S0). Matrix gradients use the
/// symmetric convention dJ = tr(G dS).
struct PathPosterior {
  TimeGrid grid;
  std::vector<Vec> m;
  std::vector<Mat> S;
  std::vector<Mat> A;
  std::vector<Vec> b;
  std::vector<Vec> lam;
  std::vector<Mat> Psi;
  Vec lam_start;
  Mat Psi_start;

  /// A_r = I / (span/10), b_r = 0, adjoints zero, moments unset.
  static PathPosterior initial(const TimeGrid& grid, Eigen::Index K);
  Eigen::Index dim() const { return m.empty() ? 0 : m.front().size(); }
  Vec mean_at(double t) const { return interp_linear(grid, m, t); }
  Mat cov_at(double t) const { return interp_linear(grid, S, t); }
};

/// 1 on the diagonal, 1/2 off it.
Mat symmetry_mask(Eigen::Index K);

/// Euler recursion of the moment ODEs from (m0, S0) with unit diffusion.
void forward_pass(PathPosterior& path, const InitialState& init);

/// Quadrature weights of the path-KL integral: dt for r < R, 0 at r = R.
std::vector<double> energy_weights(const TimeGrid& grid);

/// Per-grid path-KL density, its (m, S) gradients and the drift moments.
struct EnergyPath {
  std::vector<double> value;
  std::vector<Vec> d_mean;
  std::vector<Mat> d_cov;
  std::vector<Vec> mean_f;
  std::vector<Mat> mean_jac;
  double total = 0.0;  // weighted by energy_weights
};
EnergyPath kl_path_gradients(const PathPosterior& path, const DriftModel& drift);

/// Adjoint recursion driven by the likelihood and path-KL gradients.
void backward_pass(PathPosterior& path, const LikelihoodGradients& ll, const EnergyPath& energy);

/// A_r = -<df/dx> + 2 Psi_r, b_r = <f> + A_r m_r - lam_r.
void update_controls(PathPosterior& path, const EnergyPath& energy);
void update_controls(PathPosterior& path, const DriftModel& drift);

/// Combined backward pass and control update used by smooth_trial. Sweeping
/// from r = R down to 0, A_r and b_r are set from the current adjoints before
/// they drive the step to r-1, and the mean co-state is carried as an affine
/// function of the mean with slope 2 Psi_r, re-evaluated at the one-step
/// prediction under the new controls. On exit b_r = <f> + A_r m_r - lam_r
/// holds exactly. The fixed points coincide with those of backward_pass
/// followed by update_controls.
void smoothing_sweep(PathPosterior& path, const LikelihoodGradients& ll, const EnergyPath& moments,
                     const DriftModel& drift);

/// Stationary point of the initial-state terms with the co-state taken as
/// affine in m0: S0 = (Sig0^-1 + 2 Psi)^-1, m0 = S0 (Sig0^-1 mu0 + 2 Psi m0 - lam).
/// With Psi = 0 this is m0 = mu0 - Sig0 lam. Returns false (keeping S0 and
/// using m0 = mu0 - Sig0 lam) if the precision is not positive definite.
bool update_initial_state(InitialState& init, const Vec& lam, const Mat& Psi);

/// KL(N(m0, S0) || N(mu0, Sig0)).
double kl_initial(const InitialState& init);

struct SmoothConfig {
  double tol = 1e-6;
  int max_iters = 50;
  /// Halvings of the step towards a proposed control set that lowers F*.
  int max_backtracks = 10;
};

/// Objective components of one trial.
struct TrialObjective {
  double expected_ll = 0.0;
  double energy = 0.0;
  double kl0 = 0.0;
  double value() const { return expected_ll - energy - kl0; }
};

struct TrialPosterior {
  PathPosterior path;
  InitialState init;
  TrialObjective objective;
  int iterations = 0;
  bool converged = false;
};

/// Objective of a trial whose moments are already propagated.
TrialObjective evaluate_trial(const TrialData& trial, const PathPosterior& path, const InitialState& init,
                              const DriftModel& drift, const ObservationModel& obs);

/// Iterates forward pass, backward pass, control and initial-state updates
/// until the trial objective settles. Starts from `warm` when given (its grid
/// must match), else from the controls of PathPosterior::initial. A proposal
/// that lowers the objective is blended with the current iterate, halving the
/// step until it does not, so the returned objective is never below the start.
TrialPosterior smooth_trial(const TrialData& trial, const DriftModel& drift, const ObservationModel& obs,
                            const InitialState& init, const TimeGrid& grid, const SmoothConfig& config = {},
                            const PathPosterior* warm = nullptr);

/// Sum of trial objectives minus the drift's own KL, recomputed from scratch.
double free_energy(const std::vector<TrialData>& trials, const std::vector<TrialPosterior>& posts,
                   const DriftModel& drift, const ObservationModel& obs);

}  // namespace lsde
