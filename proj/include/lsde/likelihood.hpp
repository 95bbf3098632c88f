#pragma once

#include <vector>

#include "lsde/numerics.hpp"

namespace lsde {

enum class ObservationKind { Gaussian, PointProcess };

/// One trial of observations. Gaussian trials carry `times` and Y (N x T);
/// point-process trials carry one sorted event list per channel.
struct TrialData {
  double t0 = 0.0;
  double t_end = 1.0;
  ObservationKind kind = ObservationKind::Gaussian;
  std::vector<double> times;
  Mat Y;
  std::vector<std::vector<double>> events;
  /// Optional simulated latent path for evaluation (never used in fitting).
  std::vector<double> true_times;
  std::vector<Vec> true_path;

  Eigen::Index num_channels() const;
  void validate() const;
};

/// Output map y = C x + d (+ noise) or intensity exp(C x + d).
struct ObservationModel {
  ObservationKind kind = ObservationKind::Gaussian;
  Mat C;      // N x K
  Vec d;      // N
  Vec Gamma;  // N observation variances (Gaussian only)

  void validate() const;
};

/// Expected log-likelihood gradient concentrated at one grid index.
struct JumpGradient {
  std::size_t index;
  Vec grad_m;
  Mat grad_S;
};

/// Continuous parts are densities per unit time on the grid (empty when zero);
/// the trial value integrates them with the trapezoid rule.
struct LikelihoodGradients {
  std::vector<Vec> grad_m_cont;
  std::vector<Mat> grad_S_cont;
  std::vector<JumpGradient> jumps;
};

struct LikelihoodResult {
  double value = 0.0;
  LikelihoodGradients grads;
};

/// Trapezoid weights for the continuous likelihood integral on a grid.
std::vector<double> trapezoid_weights(const TimeGrid& grid);

/// Total derivatives of the trial value with respect to every m_r and S_r.
void accumulate_gradients(const TimeGrid& grid, const LikelihoodGradients& g, std::vector<Vec>& dm,
                          std::vector<Mat>& dS);

LikelihoodResult gaussian_expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                                      const std::vector<Vec>& m, const std::vector<Mat>& S);

LikelihoodResult poisson_expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                                     const std::vector<Vec>& m, const std::vector<Mat>& S);

/// Dispatches on map.kind.
LikelihoodResult expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                             const std::vector<Vec>& m, const std::vector<Mat>& S);

/// Latent marginals of one trial evaluated at its observation times.
struct ObservedMoments {
  std::vector<Vec> m;
  std::vector<Mat> S;
};
ObservedMoments observed_moments(const TrialData& trial, const TimeGrid& grid, const std::vector<Vec>& m,
                                 const std::vector<Mat>& S);

struct OutputMapUpdate {
  Mat C;
  Vec d;
};

/// Joint maximiser of the Gaussian expected log-likelihood in (C, d), pooled
/// over all observations of all trials.
OutputMapUpdate gaussian_update_Cd(const std::vector<TrialData>& trials, const std::vector<ObservedMoments>& moments);

/// Gamma_n = mean_i E[(y_ni - c_n^T x_i - d_n)^2], floored at `floor`.
Vec gaussian_update_noise(const std::vector<TrialData>& trials, const std::vector<ObservedMoments>& moments,
                          const Mat& C, const Vec& d, double floor = 1e-8);

}  // namespace lsde
