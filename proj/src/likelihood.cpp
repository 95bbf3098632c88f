#include "lsde/likelihood.hpp"

#include <algorithm>
#include <numbers>

namespace lsde {

Eigen::Index TrialData::num_channels() const {
  return kind == ObservationKind::Gaussian ? Y.rows() : static_cast<Eigen::Index>(events.size());
}

void TrialData::validate() const {
  if (!(t_end > t0)) throw InvalidArgument("trial: t_end must exceed t0");
  if (kind == ObservationKind::Gaussian) {
    if (static_cast<Eigen::Index>(times.size()) != Y.cols())
      throw InvalidArgument("trial: Y column count must equal number of observation times");
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] < t0 || times[i] > t_end) throw OutOfRange("trial: observation time outside span");
      if (i > 0 && times[i] < times[i - 1]) throw InvalidArgument("trial: observation times must be sorted");
    }
  } else {
    for (const auto& ch : events)
      for (std::size_t i = 0; i < ch.size(); ++i) {
        if (ch[i] < t0 || ch[i] > t_end) throw OutOfRange("trial: event time outside span");
        if (i > 0 && ch[i] < ch[i - 1]) throw InvalidArgument("trial: event times must be sorted");
      }
  }
}

void ObservationModel::validate() const {
  if (C.rows() != d.size()) throw InvalidArgument("output map: C rows must match d");
  if (!C.allFinite() || !d.allFinite()) throw InvalidArgument("output map: non-finite entries");
  if (kind == ObservationKind::Gaussian) {
    if (Gamma.size() != d.size()) throw InvalidArgument("output map: Gamma must have one entry per channel");
    if ((Gamma.array() <= 0.0).any()) throw InvalidArgument("output map: Gamma entries must be positive");
  }
}

std::vector<double> trapezoid_weights(const TimeGrid& grid) {
  std::vector<double> w(grid.size(), grid.dt());
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}

void accumulate_gradients(const TimeGrid& grid, const LikelihoodGradients& g, std::vector<Vec>& dm,
                          std::vector<Mat>& dS) {
  if (dm.size() != grid.size() || dS.size() != grid.size())
    throw InvalidArgument("accumulate_gradients: output arrays must match grid");
  if (!g.grad_m_cont.empty()) {
    const auto w = trapezoid_weights(grid);
    for (std::size_t r = 0; r < grid.size(); ++r) {
      dm[r] += w[r] * g.grad_m_cont[r];
      dS[r] += w[r] * g.grad_S_cont[r];
    }
  }
  for (const auto& j : g.jumps) {
    dm[j.index] += j.grad_m;
    dS[j.index] += j.grad_S;
  }
}

namespace {

void check_path(const TimeGrid& grid, const std::vector<Vec>& m, const std::vector<Mat>& S, Eigen::Index K) {
  if (m.size() != grid.size() || S.size() != grid.size())
    throw InvalidArgument("likelihood: path arrays must match the grid");
  if (m.front().size() != K) throw InvalidArgument("likelihood: latent dimension does not match C");
}

}  // namespace

LikelihoodResult gaussian_expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                                      const std::vector<Vec>& m, const std::vector<Mat>& S) {
  map.validate();
  const Eigen::Index N = map.C.rows();
  const Eigen::Index K = map.C.cols();
  check_path(grid, m, S, K);
  if (trial.Y.rows() != N) throw InvalidArgument("gaussian_expected_ll: channel count mismatch");
  const Vec ginv = map.Gamma.cwiseInverse();
  const Mat CtGi = map.C.transpose() * ginv.asDiagonal();
  const Mat CtGiC = CtGi * map.C;
  const double log_norm = -0.5 * (static_cast<double>(N) * std::log(2.0 * std::numbers::pi) +
                                  map.Gamma.array().log().sum());
  LikelihoodResult out;
  for (std::size_t i = 0; i < trial.times.size(); ++i) {
    const std::size_t r = grid.nearest_index(trial.times[i]);
    const Vec resid = trial.Y.col(static_cast<Eigen::Index>(i)) - map.d - map.C * m[r];
    out.value += log_norm - 0.5 * resid.dot(ginv.cwiseProduct(resid)) - 0.5 * (CtGiC * S[r]).trace();
    out.grads.jumps.push_back({r, CtGi * resid, -0.5 * CtGiC});
  }
  return out;
}

LikelihoodResult poisson_expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                                     const std::vector<Vec>& m, const std::vector<Mat>& S) {
  if (map.C.rows() != map.d.size()) throw InvalidArgument("poisson_expected_ll: C rows must match d");
  const Eigen::Index N = map.C.rows();
  const Eigen::Index K = map.C.cols();
  check_path(grid, m, S, K);
  if (static_cast<Eigen::Index>(trial.events.size()) != N)
    throw InvalidArgument("poisson_expected_ll: one event list per channel required");
  LikelihoodResult out;
  const auto w = trapezoid_weights(grid);
  out.grads.grad_m_cont.assign(grid.size(), Vec::Zero(K));
  out.grads.grad_S_cont.assign(grid.size(), Mat::Zero(K, K));
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (Eigen::Index n = 0; n < N; ++n) {
      const Vec c = map.C.row(n).transpose();
      const double rate = std::exp(map.d[n] + c.dot(m[r]) + 0.5 * c.dot(S[r] * c));
      out.value -= w[r] * rate;
      out.grads.grad_m_cont[r] -= rate * c;
      out.grads.grad_S_cont[r] -= 0.5 * rate * c * c.transpose();
    }
  }
  for (Eigen::Index n = 0; n < N; ++n) {
    const Vec c = map.C.row(n).transpose();
    for (double t : trial.events[static_cast<std::size_t>(n)]) {
      const std::size_t r = grid.nearest_index(t);
      out.value += c.dot(m[r]) + map.d[n];
      out.grads.jumps.push_back({r, c, Mat::Zero(K, K)});
    }
  }
  return out;
}

LikelihoodResult expected_ll(const ObservationModel& map, const TrialData& trial, const TimeGrid& grid,
                             const std::vector<Vec>& m, const std::vector<Mat>& S) {
  if (map.kind != trial.kind) throw InvalidArgument("expected_ll: observation kind mismatch");
  return map.kind == ObservationKind::Gaussian ? gaussian_expected_ll(map, trial, grid, m, S)
                                               : poisson_expected_ll(map, trial, grid, m, S);
}

ObservedMoments observed_moments(const TrialData& trial, const TimeGrid& grid, const std::vector<Vec>& m,
                                 const std::vector<Mat>& S) {
  ObservedMoments out;
  for (double t : trial.times) {
    const std::size_t r = grid.nearest_index(t);
    out.m.push_back(m[r]);
    out.S.push_back(S[r]);
  }
  return out;
}

OutputMapUpdate gaussian_update_Cd(const std::vector<TrialData>& trials, const std::vector<ObservedMoments>& moments) {
  if (trials.size() != moments.size() || trials.empty())
    throw InvalidArgument("gaussian_update_Cd: one moment set per trial required");
  const Eigen::Index N = trials.front().Y.rows();
  const Eigen::Index K = moments.front().m.empty() ? 0 : moments.front().m.front().size();
  double count = 0.0;
  Vec ysum = Vec::Zero(N);
  Vec msum = Vec::Zero(K);
  for (std::size_t j = 0; j < trials.size(); ++j) {
    if (trials[j].Y.cols() != static_cast<Eigen::Index>(moments[j].m.size()))
      throw InvalidArgument("gaussian_update_Cd: moments do not match observations");
    for (std::size_t i = 0; i < moments[j].m.size(); ++i) {
      ysum += trials[j].Y.col(static_cast<Eigen::Index>(i));
      msum += moments[j].m[i];
      count += 1.0;
    }
  }
  if (count < 1.0 || K == 0) throw InvalidArgument("gaussian_update_Cd: no observations");
  const Vec ybar = ysum / count;
  const Vec mbar = msum / count;
  Mat cross = Mat::Zero(N, K);
  Mat second = Mat::Zero(K, K);
  for (std::size_t j = 0; j < trials.size(); ++j)
    for (std::size_t i = 0; i < moments[j].m.size(); ++i) {
      const Vec dm = moments[j].m[i] - mbar;
      cross += (trials[j].Y.col(static_cast<Eigen::Index>(i)) - ybar) * dm.transpose();
      second += moments[j].S[i] + dm * dm.transpose();
    }
  Eigen::LLT<Mat> llt(symmetrize(second));
  if (llt.info() != Eigen::Success) throw NumericalError("gaussian_update_Cd: latent second-moment matrix is singular");
  OutputMapUpdate out;
  out.C = llt.solve(Mat(cross.transpose())).transpose();
  out.d = ybar - out.C * mbar;
  return out;
}

Vec gaussian_update_noise(const std::vector<TrialData>& trials, const std::vector<ObservedMoments>& moments,
                          const Mat& C, const Vec& d, double floor) {
  if (trials.size() != moments.size()) throw InvalidArgument("gaussian_update_noise: one moment set per trial required");
  const Eigen::Index N = C.rows();
  Vec acc = Vec::Zero(N);
  double count = 0.0;
  for (std::size_t j = 0; j < trials.size(); ++j)
    for (std::size_t i = 0; i < moments[j].m.size(); ++i) {
      const Vec resid = trials[j].Y.col(static_cast<Eigen::Index>(i)) - C * moments[j].m[i] - d;
      acc += resid.cwiseProduct(resid) + (C * moments[j].S[i] * C.transpose()).diagonal();
      count += 1.0;
    }
  if (count < 2.0) throw InvalidArgument("gaussian_update_noise: at least two observations required");
  return (acc / count).cwiseMax(floor);
}

}  // namespace lsde
