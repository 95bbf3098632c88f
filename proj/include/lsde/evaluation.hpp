#pragma once

#include <vector>

#include "json.hpp"
#include "lsde/learning.hpp"
#include "lsde/systems.hpp"

namespace lsde {

/// x_to = T x_from + o.
struct AffineMap {
  Mat T;
  Vec o;

  Vec apply(const Vec& x) const { return T * x + o; }
  Vec inverse(const Vec& y) const;
};

/// Least-squares affine map taking `from` onto `to`.
AffineMap fit_affine(const std::vector<Vec>& from, const std::vector<Vec>& to);

/// Minimum-cost assignment for a rectangular cost matrix (Kuhn-Munkres).
/// Entry i is the column assigned to row i, or -1 when rows outnumber columns.
std::vector<int> hungarian(const Mat& cost);

/// Highest-density region of a point cloud from a histogram on its bounding
/// box: the fewest cells holding at least `mass` of the points.
class DensityRegion {
 public:
  DensityRegion(const std::vector<Vec>& points, int bins_per_dim = 20, double mass = 0.95);
  bool contains(const Vec& x) const;
  /// Distance from x to the nearest included cell centre (0 inside).
  double distance(const Vec& x) const;
  Eigen::Index dim() const { return lo_.size(); }
  /// Cell centres (rows) and their normalised point fractions.
  const Mat& centres() const { return centres_; }
  const Vec& weights() const { return weights_; }

 private:
  long cell_of(const Vec& x) const;
  Vec lo_, width_;
  int bins_;
  Mat centres_;
  Vec weights_;
  std::vector<bool> included_;
};

/// Fixed points of a fit: the conditioned set, or the equilibrium of -A x + b.
std::vector<FixedPointSummary> fit_fixed_points(const FitResult& fit);

/// Retained points have alpha at most factor x the smallest alpha.
std::vector<bool> retained_mask(const std::vector<FixedPointSummary>& fps, double factor = 5.0);

/// Posterior drift mean and variance of a fit at x.
DriftPrediction fit_drift(const FitResult& fit, const Vec& x);

struct Portrait {
  Mat points;  // rows are grid points, last dimension fastest
  Mat mean;
  Mat var;
};
struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  int n = 2;
};
Portrait portrait(const FitResult& fit, const std::vector<GridAxis>& axes);

struct FixedPointMatch {
  int learned = -1;
  int truth = -1;
  double distance = 0.0;
  bool learned_stable = false;
  bool true_stable = false;
  double alpha = 0.0;
};

struct EvalMetrics {
  AffineMap alignment;  // learned latent -> true latent
  double latent_rmse = 0.0;
  std::vector<FixedPointSummary> learned_fixed_points;
  std::vector<bool> retained;
  std::vector<Vec> aligned_locations;
  std::vector<Vec> true_fixed_points;
  std::vector<bool> true_stable;
  std::vector<FixedPointMatch> matches;
  double drift_rmse = 0.0;
  double drift_cosine = 0.0;
  double calibration = 0.0;
};

/// Compares a fit with the generative truth of its dataset.
EvalMetrics evaluate_fit(const FitResult& fit, const Dataset& data);

nlohmann::json to_json(const EvalMetrics& m);

}  // namespace lsde
