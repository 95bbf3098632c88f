#include "lsde/inference.hpp"

#include <cmath>
#include <limits>

namespace lsde {

namespace {

constexpr double kDivergence = 1e8;
constexpr double kObjectiveRoundoff = 1e-12;

bool finite_below(const Vec& v) { return v.allFinite() && v.norm() <= kDivergence; }
bool finite_below(const Mat& m) { return m.allFinite() && m.norm() <= kDivergence; }

}  // namespace

InitialState InitialState::from_prior(const Vec& mu0, const Mat& Sig0) {
  InitialState s{mu0, Sig0, mu0, Sig0};
  s.validate();
  return s;
}

void InitialState::validate() const {
  const Eigen::Index K = mu0.size();
  if (K == 0) throw InvalidArgument("initial state: empty mean");
  if (Sig0.rows() != K || Sig0.cols() != K || m0.size() != K || S0.rows() != K || S0.cols() != K)
    throw InvalidArgument("initial state: dimension mismatch");
  Eigen::LLT<Mat> llt(symmetrize(Sig0));
  if (llt.info() != Eigen::Success) throw InvalidArgument("initial state: Sig0 must be positive definite");
}

PathPosterior PathPosterior::initial(const TimeGrid& grid, Eigen::Index K) {
  if (K <= 0) throw InvalidArgument("PathPosterior: latent dimension must be positive");
  if (grid.steps() == 0) throw InvalidArgument("PathPosterior: grid needs at least one step");
  const double tau = grid.span() / 10.0;
  PathPosterior p;
  p.grid = grid;
  const std::size_t n = grid.size();
  p.m.assign(n, Vec::Zero(K));
  p.S.assign(n, Mat::Identity(K, K));
  p.A.assign(n, Mat::Identity(K, K) / tau);
  p.b.assign(n, Vec::Zero(K));
  p.lam.assign(n, Vec::Zero(K));
  p.Psi.assign(n, Mat::Zero(K, K));
  p.lam_start = Vec::Zero(K);
  p.Psi_start = Mat::Zero(K, K);
  return p;
}

Mat symmetry_mask(Eigen::Index K) {
  Mat P = Mat::Constant(K, K, 0.5);
  P.diagonal().setOnes();
  return P;
}

void forward_pass(PathPosterior& path, const InitialState& init) {
  const std::size_t n = path.grid.size();
  const Eigen::Index K = init.m0.size();
  if (path.A.size() != n || path.b.size() != n) throw InvalidArgument("forward_pass: controls must cover the grid");
  if (path.A.front().rows() != K) throw InvalidArgument("forward_pass: control dimension mismatch");
  const double dt = path.grid.dt();
  const Mat I = Mat::Identity(K, K);
  path.m.resize(n);
  path.S.resize(n);
  path.m[0] = init.m0;
  path.S[0] = symmetrize(init.S0);
  clip_psd(path.S[0]);
  for (std::size_t r = 0; r + 1 < n; ++r) {
    const Mat& A = path.A[r];
    path.m[r + 1] = path.m[r] - dt * (A * path.m[r] - path.b[r]);
    Mat AS = A * path.S[r];
    path.S[r + 1] = symmetrize(path.S[r] - dt * (AS + AS.transpose()) + dt * I);
    clip_psd(path.S[r + 1]);
    if (!finite_below(path.m[r + 1]) || !finite_below(path.S[r + 1]))
      throw DivergenceError("forward_pass: moments diverged at grid index " + std::to_string(r + 1), r + 1);
  }
}

std::vector<double> energy_weights(const TimeGrid& grid) {
  std::vector<double> w(grid.size(), grid.dt());
  w.back() = 0.0;
  return w;
}

EnergyPath kl_path_gradients(const PathPosterior& path, const DriftModel& drift) {
  const std::size_t n = path.grid.size();
  if (path.m.size() != n || path.S.size() != n) throw InvalidArgument("kl_path_gradients: moments must cover the grid");
  if (drift.dim() != path.dim()) throw InvalidArgument("kl_path_gradients: drift dimension mismatch");
  const auto w = energy_weights(path.grid);
  EnergyPath out;
  out.value.resize(n);
  out.d_mean.resize(n);
  out.d_cov.resize(n);
  out.mean_f.resize(n);
  out.mean_jac.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    EnergyTerms e = drift.energy({path.m[r], path.S[r]}, path.A[r], path.b[r]);
    out.value[r] = e.value;
    out.d_mean[r] = std::move(e.d_mean);
    out.d_cov[r] = std::move(e.d_cov);
    out.mean_f[r] = std::move(e.mean_f);
    out.mean_jac[r] = std::move(e.mean_jac);
    out.total += w[r] * e.value;
  }
  return out;
}

void backward_pass(PathPosterior& path, const LikelihoodGradients& ll, const EnergyPath& energy) {
  const std::size_t n = path.grid.size();
  const Eigen::Index K = path.dim();
  if (energy.d_mean.size() != n) throw InvalidArgument("backward_pass: energy gradients must cover the grid");
  const double dt = path.grid.dt();
  const auto w = energy_weights(path.grid);
  std::vector<Vec> gm(n, Vec::Zero(K));
  std::vector<Mat> gS(n, Mat::Zero(K, K));
  accumulate_gradients(path.grid, ll, gm, gS);
  for (std::size_t r = 0; r < n; ++r) {
    gm[r] -= w[r] * energy.d_mean[r];
    gS[r] -= w[r] * energy.d_cov[r];
  }
  const Mat I = Mat::Identity(K, K);
  path.lam.assign(n, Vec::Zero(K));
  path.Psi.assign(n, Mat::Zero(K, K));
  Vec lam = Vec::Zero(K);
  Mat Psi = Mat::Zero(K, K);
  for (std::size_t r = n; r-- > 0;) {
    const Mat& A = path.A[r];
    Vec lam_prev = (I - dt * A).transpose() * lam - gm[r];
    Mat AtPsi = A.transpose() * Psi;
    Mat Psi_prev = symmetrize(Psi - dt * (AtPsi + AtPsi.transpose()) - gS[r]);
    if (!finite_below(lam_prev) || !finite_below(Psi_prev))
      throw DivergenceError("backward_pass: adjoints diverged at grid index " + std::to_string(r), r);
    lam = std::move(lam_prev);
    Psi = std::move(Psi_prev);
    if (r > 0) {
      path.lam[r - 1] = lam;
      path.Psi[r - 1] = Psi;
    }
  }
  path.lam_start = lam;
  path.Psi_start = Psi;
}

void update_controls(PathPosterior& path, const EnergyPath& energy) {
  const std::size_t n = path.grid.size();
  if (energy.mean_f.size() != n || path.lam.size() != n)
    throw InvalidArgument("update_controls: inputs must cover the grid");
  for (std::size_t r = 0; r < n; ++r) {
    path.A[r] = -energy.mean_jac[r] + 2.0 * path.Psi[r];
    path.b[r] = energy.mean_f[r] + path.A[r] * path.m[r] - path.lam[r];
  }
}

void update_controls(PathPosterior& path, const DriftModel& drift) {
  const std::size_t n = path.grid.size();
  if (path.m.size() != n || path.lam.size() != n) throw InvalidArgument("update_controls: inputs must cover the grid");
  for (std::size_t r = 0; r < n; ++r) {
    DriftMoments dm = drift.drift_moments({path.m[r], path.S[r]});
    path.A[r] = -dm.mean_jac + 2.0 * path.Psi[r];
    path.b[r] = dm.mean_f + path.A[r] * path.m[r] - path.lam[r];
  }
}

void smoothing_sweep(PathPosterior& path, const LikelihoodGradients& ll, const EnergyPath& moments,
                     const DriftModel& drift) {
  const std::size_t n = path.grid.size();
  const Eigen::Index K = path.dim();
  if (moments.mean_f.size() != n) throw InvalidArgument("smoothing_sweep: drift moments must cover the grid");
  const double dt = path.grid.dt();
  const auto w = energy_weights(path.grid);
  std::vector<Vec> gm(n, Vec::Zero(K));
  std::vector<Mat> gS(n, Mat::Zero(K, K));
  accumulate_gradients(path.grid, ll, gm, gS);
  const Mat I = Mat::Identity(K, K);
  Vec lam = Vec::Zero(K);
  Mat Psi = Mat::Zero(K, K);
  for (std::size_t r = n; r-- > 0;) {
    const Vec& m = path.m[r];
    Mat A = -moments.mean_jac[r] + 2.0 * Psi;
    Vec b;
    if (r + 1 < n) {
      // co-state linear in the next mean with slope 2 Psi; b_r solves the implied one-step equation
      const Vec rhs = moments.mean_f[r] + A * m - lam - 2.0 * Psi * (m - dt * A * m - path.m[r + 1]);
      b = (I + 2.0 * dt * Psi).partialPivLu().solve(rhs);
      lam += 2.0 * Psi * (m - dt * (A * m - b) - path.m[r + 1]);
    } else {
      b = moments.mean_f[r] + A * m;
    }
    path.A[r] = A;
    path.b[r] = b;
    path.lam[r] = lam;
    path.Psi[r] = Psi;
    const EnergyTerms e = drift.energy({m, path.S[r]}, A, b);
    const Vec g = gm[r] - w[r] * e.d_mean;
    const Mat G = gS[r] - w[r] * e.d_cov;
    Vec lam_prev = (I - dt * A).transpose() * lam - g;
    const Mat AtPsi = A.transpose() * Psi;
    Mat Psi_prev = symmetrize(Psi - dt * (AtPsi + AtPsi.transpose()) - G);
    if (!finite_below(lam_prev) || !finite_below(Psi_prev))
      throw DivergenceError("smoothing_sweep: adjoints diverged at grid index " + std::to_string(r), r);
    lam = std::move(lam_prev);
    Psi = std::move(Psi_prev);
  }
  path.lam_start = lam;
  path.Psi_start = Psi;
}

bool update_initial_state(InitialState& init, const Vec& lam, const Mat& Psi) {
  const Mat prec0 = spd_inverse(symmetrize(init.Sig0), "update_initial_state: Sig0");
  Eigen::LLT<Mat> llt(symmetrize(prec0 + 2.0 * Psi));
  if (llt.info() != Eigen::Success) {
    init.m0 = init.mu0 - init.Sig0 * lam;
    return false;
  }
  init.m0 = llt.solve(Vec(prec0 * init.mu0 + 2.0 * Psi * init.m0 - lam));
  Mat S0 = symmetrize(llt.solve(Mat(Mat::Identity(lam.size(), lam.size()))));
  clip_psd(S0);
  init.S0 = std::move(S0);
  return true;
}

double kl_initial(const InitialState& init) {
  const Eigen::Index K = init.mu0.size();
  Eigen::LLT<Mat> lp(symmetrize(init.Sig0));
  Eigen::LLT<Mat> lq(symmetrize(init.S0));
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success)
    throw NumericalError("kl_initial: covariance not positive definite");
  const Vec d = init.mu0 - init.m0;
  const double logdet_p = 2.0 * lp.matrixLLT().diagonal().array().log().sum();
  const double logdet_q = 2.0 * lq.matrixLLT().diagonal().array().log().sum();
  return 0.5 * (lp.solve(init.S0).trace() + d.dot(lp.solve(d)) - static_cast<double>(K) + logdet_p - logdet_q);
}

TrialObjective evaluate_trial(const TrialData& trial, const PathPosterior& path, const InitialState& init,
                              const DriftModel& drift, const ObservationModel& obs) {
  TrialObjective o;
  o.expected_ll = expected_ll(obs, trial, path.grid, path.m, path.S).value;
  const auto w = energy_weights(path.grid);
  for (std::size_t r = 0; r < path.grid.size(); ++r)
    if (w[r] != 0.0) o.energy += w[r] * drift.energy({path.m[r], path.S[r]}, path.A[r], path.b[r]).value;
  o.kl0 = kl_initial(init);
  return o;
}

namespace {

// Convex combination of two control sets and initial states.
void blend_into(TrialPosterior& out, const TrialPosterior& from, const TrialPosterior& to, double gamma) {
  out.path = from.path;
  for (std::size_t r = 0; r < out.path.A.size(); ++r) {
    out.path.A[r] = from.path.A[r] + gamma * (to.path.A[r] - from.path.A[r]);
    out.path.b[r] = from.path.b[r] + gamma * (to.path.b[r] - from.path.b[r]);
  }
  out.path.lam = to.path.lam;
  out.path.Psi = to.path.Psi;
  out.path.lam_start = to.path.lam_start;
  out.path.Psi_start = to.path.Psi_start;
  out.init = from.init;
  out.init.m0 = from.init.m0 + gamma * (to.init.m0 - from.init.m0);
  out.init.S0 = symmetrize(from.init.S0 + gamma * (to.init.S0 - from.init.S0));
}

struct Evaluated {
  LikelihoodResult ll;
  EnergyPath energy;
};

// Forward pass plus objective; false if the moments diverge or F* is not finite.
bool propagate(TrialPosterior& post, const TrialData& trial, const DriftModel& drift, const ObservationModel& obs,
               Evaluated& ev) {
  try {
    forward_pass(post.path, post.init);
  } catch (const DivergenceError&) {
    return false;
  }
  ev.ll = expected_ll(obs, trial, post.path.grid, post.path.m, post.path.S);
  ev.energy = kl_path_gradients(post.path, drift);
  post.objective = {ev.ll.value, ev.energy.total, kl_initial(post.init)};
  return std::isfinite(post.objective.value());
}

}  // namespace

TrialPosterior smooth_trial(const TrialData& trial, const DriftModel& drift, const ObservationModel& obs,
                            const InitialState& init, const TimeGrid& grid, const SmoothConfig& config,
                            const PathPosterior* warm) {
  init.validate();
  if (drift.dim() != init.m0.size()) throw InvalidArgument("smooth_trial: drift and initial state dimensions differ");
  if (config.max_iters < 1) throw InvalidArgument("smooth_trial: max_iters must be positive");
  if (config.max_backtracks < 0) throw InvalidArgument("smooth_trial: max_backtracks must be nonnegative");
  TrialPosterior cur;
  if (warm) {
    if (warm->grid.size() != grid.size() || warm->grid.dt() != grid.dt() || warm->dim() != init.m0.size())
      throw InvalidArgument("smooth_trial: warm start does not match the grid");
    cur.path = *warm;
  } else {
    cur.path = PathPosterior::initial(grid, init.m0.size());
  }
  cur.init = init;
  Evaluated ev;
  try {
    forward_pass(cur.path, cur.init);
  } catch (const DivergenceError& e) {
    throw DivergenceError(std::string(e.what()) + " (inner iteration 1)", 1);
  }
  ev.ll = expected_ll(obs, trial, grid, cur.path.m, cur.path.S);
  ev.energy = kl_path_gradients(cur.path, drift);
  cur.objective = {ev.ll.value, ev.energy.total, kl_initial(cur.init)};
  if (!std::isfinite(cur.objective.value()))
    throw DivergenceError("smooth_trial: objective not finite at inner iteration 1", 1);

  bool converged = false;
  int it = 1;
  for (; it < config.max_iters; ++it) {
    const double value = cur.objective.value();
    TrialPosterior proposal = cur;
    try {
      smoothing_sweep(proposal.path, ev.ll.grads, ev.energy, drift);
    } catch (const DivergenceError& e) {
      log_warning(std::string(e.what()) + " (inner iteration " + std::to_string(it) + "); keeping the current iterate");
      break;
    }
    if (!update_initial_state(proposal.init, proposal.path.lam_start, proposal.path.Psi_start))
      log_warning("smooth_trial: initial precision not positive definite; keeping previous S0");

    // Full fixed-point step first; halve towards the current iterate while F* decreases.
    TrialPosterior next;
    Evaluated next_ev;
    bool accepted = false;
    double gamma = 1.0;
    const double slack = kObjectiveRoundoff * std::max(1.0, std::abs(value));
    for (int bt = 0; bt <= config.max_backtracks; ++bt, gamma *= 0.5) {
      if (bt == 0) {
        next = proposal;
      } else {
        blend_into(next, cur, proposal, gamma);
      }
      if (propagate(next, trial, drift, obs, next_ev) && next.objective.value() >= value - slack) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double next_value = next.objective.value();
    cur = std::move(next);
    ev = std::move(next_ev);
    if (std::abs(next_value - value) <= config.tol * std::abs(next_value) + kObjectiveRoundoff) {
      converged = true;
      ++it;
      break;
    }
  }
  if (!converged)
    log_warning("smooth_trial: no convergence after " + std::to_string(it) + " inner iterations; returning best iterate");
  cur.converged = converged;
  cur.iterations = it;
  return cur;
}

double free_energy(const std::vector<TrialData>& trials, const std::vector<TrialPosterior>& posts,
                   const DriftModel& drift, const ObservationModel& obs) {
  if (trials.size() != posts.size()) throw InvalidArgument("free_energy: one posterior per trial required");
  double total = 0.0;
  for (std::size_t j = 0; j < trials.size(); ++j)
    total += evaluate_trial(trials[j], posts[j].path, posts[j].init, drift, obs).value();
  return total - drift.kl();
}

}  // namespace lsde
