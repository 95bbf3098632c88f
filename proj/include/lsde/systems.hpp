#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lsde/dynamics.hpp"
#include "lsde/likelihood.hpp"

namespace lsde {

/// Named benchmark drift with its parameters.
///   double_well        f = 4 x (1 - x^2)
///   van_der_pol        f1 = rho tau (x1 - x1^3/3 - x2), f2 = (tau/rho) x1
///   neural_population  f_k = (-x_k + sigma_k(w_k1 x1 - w_k2 x2 - z_k)) / time_constant,
///                      sigma_k(u) = 1 / (1 + exp(-b_k u))
///   chemical_reaction  two-compartment iodide kinetics in standardised
///                      coordinates y = (c - mu) / scale and time t / time_scale
///   linear             f = -A x + b with entries a_ij, b_i and "dim"
struct DriftSpec {
  std::string name;
  std::map<std::string, double> params;

  Eigen::Index dim() const;
  void validate() const;
  double param(const std::string& key) const;
};

DriftSpec double_well_spec();
DriftSpec van_der_pol_spec(double rho = 2.0, double tau = 15.0);
/// regime 'A' (two stable, one unstable) or 'B' (single stable spiral).
DriftSpec neural_population_spec(char regime, double time_constant = 1.0);
/// Kinetic constants; the standardisation fields are identity (mu 0, scale 1, time_scale 1).
DriftSpec chemical_reaction_spec();
DriftSpec linear_spec(const Mat& A, const Vec& b);

Vec drift_eval(const DriftSpec& spec, const Vec& x);
Mat drift_jacobian(const DriftSpec& spec, const Vec& x);
/// Known drift for smoothing (Gauss-Hermite expectations).
/// The spec as a known drift for smoothing (Gauss-Hermite expectations).
QuadratureDrift make_quadrature_drift(const DriftSpec& spec, std::size_t order = 20);

/// Zeros of the drift found by Newton's method from a grid of starts in the box
/// [lo, hi], deduplicated; sorted lexicographically.
std::vector<Vec> find_fixed_points(const DriftSpec& spec, const Vec& lo, const Vec& hi, int starts_per_dim = 25);

/// Latent path on a uniform grid x_r = x(t0 + r h).
struct SimPath {
  double t0 = 0.0;
  double h = 1.0;
  std::vector<Vec> x;

  double t_end() const { return t0 + h * static_cast<double>(x.size() - 1); }
  Vec at(double t) const;
};

/// Euler-Maruyama x_{r+1} = x_r + f(x_r) h + noise_scale sqrt(h) xi_r.
SimPath simulate_sde(const DriftSpec& spec, const Vec& x0, double t0, double t_end, double h, std::uint64_t seed,
                     double noise_scale = 1.0);

/// n_obs distinct interior grid times, uniform over the span; y = C x + d + N(0, diag Gamma).
TrialData sample_gaussian_obs(const SimPath& path, const Mat& C, const Vec& d, const Vec& Gamma, std::size_t n_obs,
                              std::uint64_t seed);

/// Poisson events with intensity exp(C x + d) per channel, by thinning.
TrialData sample_point_process(const SimPath& path, const Mat& C, const Vec& d, std::uint64_t seed);

/// Independent stream seed derived from a master seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream);

/// Generative description stored alongside simulated data.
struct Truth {
  DriftSpec drift;
  ObservationModel map;
  double sim_step = 0.0;
};

struct Dataset {
  std::string protocol;
  std::uint64_t seed = 0;
  double t0 = 0.0;
  double t_end = 1.0;
  ObservationKind kind = ObservationKind::Gaussian;
  std::vector<TrialData> trials;
  std::optional<Truth> truth;

  void validate() const;
};

/// Recipe for one simulated benchmark.
struct ProtocolSpec {
  std::string name;
  DriftSpec drift;
  ObservationKind kind = ObservationKind::Gaussian;
  int trials = 20;
  Eigen::Index channels = 15;
  std::size_t obs_per_trial = 20;
  double noise_var = 0.25;
  double t_end = 1.0;
  double sim_step = 1e-4;
  Vec x0_lo;
  Vec x0_hi;
  double d_mean = 0.0;
  double d_sd = 1.0;
  double c_sd = 1.0;
  /// Fixed output matrix (chemical fixture); empty means Gaussian draws.
  Mat fixed_C;
  /// Stored true paths are subsampled to this step.
  double record_step = 1e-3;
};

std::vector<std::string> protocol_names();
ProtocolSpec protocol_spec(const std::string& name);
Dataset simulate_protocol(const ProtocolSpec& spec, std::uint64_t seed);
Dataset make_dataset(const std::string& protocol, std::uint64_t seed);

/// 13 x 2 nonnegative absorption-like mixing matrix from the fixture file.
Mat chemical_mixing_matrix(const std::string& path = "");

}  // namespace lsde
