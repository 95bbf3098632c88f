#include "lsde/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lsde/io.hpp"

namespace lsde {

Vec AffineMap::inverse(const Vec& y) const { return T.fullPivLu().solve(Vec(y - o)); }

AffineMap fit_affine(const std::vector<Vec>& from, const std::vector<Vec>& to) {
  if (from.size() != to.size() || from.empty()) throw InvalidArgument("fit_affine: need matching nonempty point sets");
  const Eigen::Index Kf = from.front().size(), Kt = to.front().size();
  Mat X(static_cast<Eigen::Index>(from.size()), Kf + 1), Y(static_cast<Eigen::Index>(to.size()), Kt);
  for (std::size_t i = 0; i < from.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    X.row(r).head(Kf) = from[i].transpose();
    X(r, Kf) = 1.0;
    Y.row(r) = to[i].transpose();
  }
  const Mat W = X.colPivHouseholderQr().solve(Y);  // (Kf+1) x Kt
  AffineMap map;
  map.T = W.topRows(Kf).transpose();
  map.o = W.row(Kf).transpose();
  return map;
}

std::vector<int> hungarian(const Mat& cost) {
  const auto n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  if (n == 0) return {};
  if (n > m) {
    const auto cols = hungarian(cost.transpose());
    std::vector<int> rows(static_cast<std::size_t>(n), -1);
    for (int j = 0; j < m; ++j)
      if (cols[static_cast<std::size_t>(j)] >= 0) rows[static_cast<std::size_t>(cols[static_cast<std::size_t>(j)])] = j;
    return rows;
  }
  // Potentials formulation with 1-based sentinels; rows <= columns.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) out[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return out;
}

DensityRegion::DensityRegion(const std::vector<Vec>& points, int bins_per_dim, double mass) : bins_(bins_per_dim) {
  if (points.empty()) throw InvalidArgument("DensityRegion: no points");
  if (bins_per_dim < 1 || !(mass > 0.0 && mass <= 1.0)) throw InvalidArgument("DensityRegion: invalid settings");
  const Eigen::Index K = points.front().size();
  lo_ = points.front();
  Vec hi = points.front();
  for (const auto& x : points) {
    lo_ = lo_.cwiseMin(x);
    hi = hi.cwiseMax(x);
  }
  width_ = ((hi - lo_) / bins_).cwiseMax(1e-12);
  long cells = 1;
  for (Eigen::Index k = 0; k < K; ++k) cells *= bins_;
  std::vector<double> counts(static_cast<std::size_t>(cells), 0.0);
  for (const auto& x : points) counts[static_cast<std::size_t>(cell_of(x))] += 1.0;
  centres_.resize(cells, K);
  weights_.resize(cells);
  for (long c = 0; c < cells; ++c) {
    long rem = c;
    for (Eigen::Index k = K - 1; k >= 0; --k) {
      centres_(c, k) = lo_[k] + (static_cast<double>(rem % bins_) + 0.5) * width_[k];
      rem /= bins_;
    }
    weights_[c] = counts[static_cast<std::size_t>(c)] / static_cast<double>(points.size());
  }
  std::vector<long> order(static_cast<std::size_t>(cells));
  std::iota(order.begin(), order.end(), 0L);
  std::stable_sort(order.begin(), order.end(), [&](long a, long b) { return weights_[a] > weights_[b]; });
  included_.assign(static_cast<std::size_t>(cells), false);
  double acc = 0.0;
  for (long c : order) {
    if (acc >= mass) break;
    included_[static_cast<std::size_t>(c)] = true;
    acc += weights_[c];
  }
}

long DensityRegion::cell_of(const Vec& x) const {
  long c = 0;
  for (Eigen::Index k = 0; k < lo_.size(); ++k) {
    const long b = std::clamp(static_cast<long>(std::floor((x[k] - lo_[k]) / width_[k])), 0L, static_cast<long>(bins_ - 1));
    c = c * bins_ + b;
  }
  return c;
}

bool DensityRegion::contains(const Vec& x) const {
  if (x.size() != dim()) throw InvalidArgument("DensityRegion: wrong point dimension");
  for (Eigen::Index k = 0; k < dim(); ++k)
    if (x[k] < lo_[k] || x[k] > lo_[k] + bins_ * width_[k]) return false;
  return included_[static_cast<std::size_t>(cell_of(x))];
}

double DensityRegion::distance(const Vec& x) const {
  if (contains(x)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centres_.rows(); ++c)
    if (included_[static_cast<std::size_t>(c)]) best = std::min(best, (centres_.row(c).transpose() - x).norm());
  return best;
}

std::vector<FixedPointSummary> fit_fixed_points(const FitResult& fit) {
  if (fit.variant != DynamicsVariant::Linear) return summarize_fixed_points(fit.dynamics);
  Eigen::FullPivLU<Mat> lu(fit.linear.A);
  if (!lu.isInvertible()) return {};
  FixedPointSummary s;
  s.location = lu.solve(fit.linear.b);
  s.jacobian = -fit.linear.A;
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
  s.stable = is_stable(s.jacobian);
  return {s};
}

std::vector<bool> retained_mask(const std::vector<FixedPointSummary>& fps, double factor) {
  if (fps.empty()) return {};
  double amin = std::numeric_limits<double>::infinity();
  for (const auto& f : fps) amin = std::min(amin, f.alpha);
  std::vector<bool> out;
  for (const auto& f : fps) out.push_back(f.alpha <= factor * amin);
  return out;
}

DriftPrediction fit_drift(const FitResult& fit, const Vec& x) {
  if (fit.variant != DynamicsVariant::Linear) return fit.dynamics.predict_f(x);
  return {Vec(-fit.linear.A * x + fit.linear.b), Vec::Zero(x.size())};
}

Portrait portrait(const FitResult& fit, const std::vector<GridAxis>& axes) {
  const auto K = static_cast<Eigen::Index>(axes.size());
  const Eigen::Index dim = fit.variant == DynamicsVariant::Linear ? fit.linear.A.rows() : fit.dynamics.dim();
  if (K != dim) throw InvalidArgument("portrait: one grid axis per latent dimension required");
  Eigen::Index n = 1;
  for (const auto& a : axes) {
    if (a.n < 1 || !(a.hi >= a.lo) || !std::isfinite(a.lo) || !std::isfinite(a.hi))
      throw InvalidArgument("portrait: invalid grid axis");
    n *= a.n;
  }
  Portrait p;
  p.points.resize(n, K);
  p.mean.resize(n, K);
  p.var.resize(n, K);
  for (Eigen::Index row = 0; row < n; ++row) {
    Eigen::Index rem = row;
    for (Eigen::Index d = K - 1; d >= 0; --d) {
      const auto& a = axes[static_cast<std::size_t>(d)];
      const Eigen::Index i = rem % a.n;
      rem /= a.n;
      p.points(row, d) = a.n == 1 ? a.lo : a.lo + (a.hi - a.lo) * static_cast<double>(i) / (a.n - 1);
    }
    const DriftPrediction pr = fit_drift(fit, p.points.row(row).transpose());
    p.mean.row(row) = pr.mean.transpose();
    p.var.row(row) = pr.var.transpose();
  }
  return p;
}

EvalMetrics evaluate_fit(const FitResult& fit, const Dataset& data) {
  if (!data.truth) throw InvalidArgument("evaluate: dataset has no truth block");
  if (fit.posteriors.size() != data.trials.size()) throw InvalidArgument("evaluate: one posterior per trial required");
  const Truth& truth = *data.truth;
  const Eigen::Index Kt = truth.drift.dim();
  EvalMetrics out;

  // Alignment points: observation times (Gaussian) or the stored true grid (point process).
  std::vector<Vec> learned, actual, cloud;
  for (std::size_t j = 0; j < data.trials.size(); ++j) {
    const auto& tr = data.trials[j];
    const auto& path = fit.posteriors[j].path;
    if (tr.true_path.empty()) throw InvalidArgument("evaluate: trial " + std::to_string(j) + " has no true path");
    const TimeGrid tg(tr.true_times.front(), tr.true_times.back(),
                      tr.true_times.size() > 1 ? tr.true_times[1] - tr.true_times[0] : 1.0);
    for (const auto& x : tr.true_path) cloud.push_back(x);
    if (tr.kind == ObservationKind::Gaussian) {
      for (double t : tr.times) {
        learned.push_back(path.mean_at(t));
        actual.push_back(interp_linear(tg, tr.true_path, t));
      }
    } else {
      for (std::size_t r = 0; r < tr.true_times.size(); ++r) {
        learned.push_back(path.mean_at(tr.true_times[r]));
        actual.push_back(tr.true_path[r]);
      }
    }
  }
  out.alignment = fit_affine(learned, actual);
  double se = 0.0;
  for (std::size_t i = 0; i < learned.size(); ++i) se += (out.alignment.apply(learned[i]) - actual[i]).squaredNorm();
  out.latent_rmse = std::sqrt(se / static_cast<double>(learned.size()));

  // Fixed points.
  out.learned_fixed_points = fit_fixed_points(fit);
  out.retained = retained_mask(out.learned_fixed_points);
  for (const auto& f : out.learned_fixed_points) out.aligned_locations.push_back(out.alignment.apply(f.location));
  Vec lo = cloud.front(), hi = cloud.front();
  for (const auto& x : cloud) {
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
  }
  const Vec margin = 0.25 * (hi - lo);
  out.true_fixed_points = find_fixed_points(truth.drift, lo - margin, hi + margin, Kt == 1 ? 200 : 40);
  for (const auto& x : out.true_fixed_points) out.true_stable.push_back(is_stable(drift_jacobian(truth.drift, x)));
  std::vector<int> kept;
  for (std::size_t i = 0; i < out.retained.size(); ++i)
    if (out.retained[i]) kept.push_back(static_cast<int>(i));
  if (!kept.empty() && !out.true_fixed_points.empty()) {
    Mat cost(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(out.true_fixed_points.size()));
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = 0; b < out.true_fixed_points.size(); ++b)
        cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            (out.aligned_locations[static_cast<std::size_t>(kept[a])] - out.true_fixed_points[b]).norm();
    const auto assign = hungarian(cost);
    for (std::size_t a = 0; a < kept.size(); ++a) {
      if (assign[a] < 0) continue;
      const auto& lf = out.learned_fixed_points[static_cast<std::size_t>(kept[a])];
      out.matches.push_back({kept[a], assign[a], cost(static_cast<Eigen::Index>(a), assign[a]), lf.stable,
                             out.true_stable[static_cast<std::size_t>(assign[a])], lf.alpha});
    }
  }

  // Drift field on the occupied histogram cells, weighted by occupancy.
  const DensityRegion density(cloud, Kt == 1 ? 100 : 30);
  const Mat Tinv = out.alignment.T.fullPivLu().inverse();
  double wsum = 0.0, err = 0.0, cos = 0.0;
  for (Eigen::Index c = 0; c < density.centres().rows(); ++c) {
    const double w = density.weights()[c];
    if (w <= 0.0) continue;
    const Vec x = density.centres().row(c).transpose();
    const Vec f_true = drift_eval(truth.drift, x);
    const Vec f_fit = out.alignment.T * fit_drift(fit, Tinv * (x - out.alignment.o)).mean;
    err += w * (f_fit - f_true).squaredNorm();
    const double denom = f_fit.norm() * f_true.norm();
    cos += w * (denom > 0.0 ? f_fit.dot(f_true) / denom : 0.0);
    wsum += w;
  }
  out.drift_rmse = std::sqrt(err / wsum);
  out.drift_cosine = cos / wsum;

  // Marginal coverage of the aligned posterior on the stored true grid.
  double inside = 0.0, count = 0.0;
  for (std::size_t j = 0; j < data.trials.size(); ++j) {
    const auto& tr = data.trials[j];
    const auto& path = fit.posteriors[j].path;
    for (std::size_t r = 0; r < tr.true_times.size(); ++r) {
      const double t = tr.true_times[r];
      if (t < path.grid.t0() || t > path.grid.t_end()) continue;
      const Vec mu = out.alignment.apply(path.mean_at(t));
      const Mat S = out.alignment.T * path.cov_at(t) * out.alignment.T.transpose();
      for (Eigen::Index k = 0; k < Kt; ++k) {
        if (std::abs(tr.true_path[r][k] - mu[k]) <= 2.0 * std::sqrt(std::max(S(k, k), 0.0))) inside += 1.0;
        count += 1.0;
      }
    }
  }
  out.calibration = count > 0.0 ? inside / count : 0.0;
  return out;
}

nlohmann::json to_json(const EvalMetrics& m) {
  json j;
  j["alignment"] = {{"T", to_json(m.alignment.T)}, {"o", to_json(m.alignment.o)}};
  j["latent_rmse"] = m.latent_rmse;
  j["fixed_points"] = json::array();
  for (std::size_t i = 0; i < m.learned_fixed_points.size(); ++i) {
    const auto& f = m.learned_fixed_points[i];
    j["fixed_points"].push_back({{"location", to_json(f.location)},
                                 {"aligned_location", to_json(m.aligned_locations[i])},
                                 {"alpha", f.alpha},
                                 {"retained", static_cast<bool>(m.retained[i])},
                                 {"stable", f.stable},
                                 {"eig_re", to_json(f.eig_re)},
                                 {"eig_im", to_json(f.eig_im)}});
  }
  j["true_fixed_points"] = json::array();
  for (std::size_t i = 0; i < m.true_fixed_points.size(); ++i)
    j["true_fixed_points"].push_back(
        {{"location", to_json(m.true_fixed_points[i])}, {"stable", static_cast<bool>(m.true_stable[i])}});
  j["matches"] = json::array();
  for (const auto& mt : m.matches)
    j["matches"].push_back({{"learned", mt.learned},
                            {"truth", mt.truth},
                            {"distance", mt.distance},
                            {"learned_stable", mt.learned_stable},
                            {"true_stable", mt.true_stable},
                            {"alpha", mt.alpha}});
  j["drift_rmse"] = m.drift_rmse;
  j["drift_cosine"] = m.drift_cosine;
  j["calibration"] = m.calibration;
  return j;
}

}  // namespace lsde
