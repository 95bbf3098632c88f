#include "lsde/systems.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lsde/parallel.hpp"

namespace lsde {

namespace {

const std::map<std::string, std::vector<std::string>>& required_params() {
  static const std::map<std::string, std::vector<std::string>> table{
      {"double_well", {}},
      {"van_der_pol", {"rho", "tau"}},
      {"neural_population", {"b1", "b2", "z1", "z2", "w11", "w12", "w21", "w22", "time_constant"}},
      {"chemical_reaction",
       {"I0", "k0", "V_A", "V_D", "F4", "k_a", "k_b", "mu_A", "mu_D", "scale_A", "scale_D", "time_scale"}},
      {"linear", {"dim"}},
  };
  return table;
}

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

struct ChemConstants {
  double I0, VA, VD, F1, F3, F4, ka, kb, S0;
};

ChemConstants chem_constants(const DriftSpec& s) {
  ChemConstants c{};
  c.I0 = s.param("I0");
  c.VA = s.param("V_A");
  c.VD = s.param("V_D");
  c.F3 = s.param("k0") * c.VA;
  c.F1 = 0.5 * c.F3;
  c.F4 = s.param("F4");
  c.ka = s.param("k_a");
  c.kb = s.param("k_b");
  c.S0 = 0.5 * (c.I0 + 1.42e-3);
  return c;
}

// Kinetics in concentration units and their Jacobian.
Vec chem_rates(const ChemConstants& c, double A, double D) {
  Vec f(2);
  f[0] = (c.ka * A + c.kb * A * A) * (c.S0 - A) + c.F1 * c.I0 / c.VA - (c.F3 + c.F4) * A / c.VA + c.F4 * D / c.VA;
  f[1] = (c.ka * D + c.kb * D * D) * (c.S0 - D) + c.F4 * (A - D) / c.VD;
  return f;
}

Mat chem_rates_jac(const ChemConstants& c, double A, double D) {
  auto self = [&](double u) { return (c.ka + 2.0 * c.kb * u) * (c.S0 - u) - (c.ka * u + c.kb * u * u); };
  Mat J(2, 2);
  J << self(A) - (c.F3 + c.F4) / c.VA, c.F4 / c.VA, c.F4 / c.VD, self(D) - c.F4 / c.VD;
  return J;
}

void check_dim(const DriftSpec& spec, const Vec& x) {
  if (x.size() != spec.dim())
    throw InvalidArgument(spec.name + ": expected a point of dimension " + std::to_string(spec.dim()));
}

Mat linear_A(const DriftSpec& s) {
  const Eigen::Index K = s.dim();
  Mat A(K, K);
  for (Eigen::Index i = 0; i < K; ++i)
    for (Eigen::Index j = 0; j < K; ++j) A(i, j) = s.param("a" + std::to_string(i) + std::to_string(j));
  return A;
}

Vec linear_b(const DriftSpec& s) {
  Vec b(s.dim());
  for (Eigen::Index i = 0; i < s.dim(); ++i) b[i] = s.param("b" + std::to_string(i));
  return b;
}

}  // namespace

double DriftSpec::param(const std::string& key) const {
  const auto it = params.find(key);
  if (it == params.end()) throw InvalidArgument("drift '" + name + "': missing parameter '" + key + "'");
  return it->second;
}

Eigen::Index DriftSpec::dim() const {
  if (name == "double_well") return 1;
  if (name == "van_der_pol" || name == "neural_population" || name == "chemical_reaction") return 2;
  if (name == "linear") return static_cast<Eigen::Index>(param("dim"));
  throw InvalidArgument("unknown drift '" + name + "'");
}

void DriftSpec::validate() const {
  const auto it = required_params().find(name);
  if (it == required_params().end()) throw InvalidArgument("unknown drift '" + name + "'");
  for (const auto& key : it->second) (void)param(key);
  for (const auto& [key, value] : params)
    if (!std::isfinite(value)) throw InvalidArgument("drift '" + name + "': parameter '" + key + "' is not finite");
  if (name == "linear") {
    const double d = param("dim");
    if (d < 1 || d != std::floor(d)) throw InvalidArgument("linear drift: dim must be a positive integer");
    (void)linear_A(*this);
    (void)linear_b(*this);
  }
  if (name == "neural_population" && !(param("time_constant") > 0.0))
    throw InvalidArgument("neural_population: time_constant must be positive");
  if (name == "chemical_reaction" &&
      !(param("scale_A") > 0.0 && param("scale_D") > 0.0 && param("time_scale") > 0.0))
    throw InvalidArgument("chemical_reaction: scales must be positive");
}

DriftSpec double_well_spec() { return {"double_well", {}}; }

DriftSpec van_der_pol_spec(double rho, double tau) { return {"van_der_pol", {{"rho", rho}, {"tau", tau}}}; }

DriftSpec neural_population_spec(char regime, double time_constant) {
  DriftSpec s{"neural_population", {}};
  if (regime == 'A')
    s.params = {{"b1", 1.9}, {"b2", 0.5}, {"z1", 3.0}, {"z2", 3.9}, {"w11", 10.0}, {"w12", 5.0}, {"w21", 9.0}, {"w22", 3.0}};
  else if (regime == 'B')
    s.params = {{"b1", 0.4}, {"b2", 0.6}, {"z1", 1.7}, {"z2", 7.0}, {"w11", 20.0}, {"w12", 16.0}, {"w21", 21.0}, {"w22", 6.0}};
  else
    throw InvalidArgument("neural_population: regime must be 'A' or 'B'");
  s.params["time_constant"] = time_constant;
  return s;
}

DriftSpec chemical_reaction_spec() {
  return {"chemical_reaction",
          {{"I0", 4.4e-5},
           {"k0", 2.7e-3},
           {"V_A", 4e1},
           {"V_D", 1.0},
           {"F4", 3.25e-3},
           {"k_a", 2.1425e-1},
           {"k_b", 2.1425e4},
           {"mu_A", 0.0},
           {"mu_D", 0.0},
           {"scale_A", 1.0},
           {"scale_D", 1.0},
           {"time_scale", 1.0}}};
}

DriftSpec linear_spec(const Mat& A, const Vec& b) {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw InvalidArgument("linear_spec: A must be square and match b");
  DriftSpec s{"linear", {{"dim", static_cast<double>(A.rows())}}};
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    s.params["b" + std::to_string(i)] = b[i];
    for (Eigen::Index j = 0; j < A.cols(); ++j) s.params["a" + std::to_string(i) + std::to_string(j)] = A(i, j);
  }
  return s;
}

Vec drift_eval(const DriftSpec& spec, const Vec& x) {
  check_dim(spec, x);
  if (spec.name == "double_well") return Vec::Constant(1, 4.0 * x[0] * (1.0 - x[0] * x[0]));
  if (spec.name == "van_der_pol") {
    const double rho = spec.param("rho"), tau = spec.param("tau");
    Vec f(2);
    f << rho * tau * (x[0] - x[0] * x[0] * x[0] / 3.0 - x[1]), tau / rho * x[0];
    return f;
  }
  if (spec.name == "neural_population") {
    const double tc = spec.param("time_constant");
    Vec f(2);
    f[0] = -x[0] + logistic(spec.param("b1") * (spec.param("w11") * x[0] - spec.param("w12") * x[1] - spec.param("z1")));
    f[1] = -x[1] + logistic(spec.param("b2") * (spec.param("w21") * x[0] - spec.param("w22") * x[1] - spec.param("z2")));
    return f / tc;
  }
  if (spec.name == "chemical_reaction") {
    const ChemConstants c = chem_constants(spec);
    const double sA = spec.param("scale_A"), sD = spec.param("scale_D");
    const Vec r = chem_rates(c, spec.param("mu_A") + sA * x[0], spec.param("mu_D") + sD * x[1]);
    const double T = spec.param("time_scale");
    return Vec((Vec(2) << T * r[0] / sA, T * r[1] / sD).finished());
  }
  if (spec.name == "linear") return -linear_A(spec) * x + linear_b(spec);
  throw InvalidArgument("drift_eval: unknown drift '" + spec.name + "'");
}

Mat drift_jacobian(const DriftSpec& spec, const Vec& x) {
  check_dim(spec, x);
  if (spec.name == "double_well") return Mat::Constant(1, 1, 4.0 - 12.0 * x[0] * x[0]);
  if (spec.name == "van_der_pol") {
    const double rho = spec.param("rho"), tau = spec.param("tau");
    Mat J(2, 2);
    J << rho * tau * (1.0 - x[0] * x[0]), -rho * tau, tau / rho, 0.0;
    return J;
  }
  if (spec.name == "neural_population") {
    const double tc = spec.param("time_constant");
    Mat J = -Mat::Identity(2, 2);
    const double b[2] = {spec.param("b1"), spec.param("b2")};
    const double w[2][2] = {{spec.param("w11"), spec.param("w12")}, {spec.param("w21"), spec.param("w22")}};
    const double z[2] = {spec.param("z1"), spec.param("z2")};
    for (int k = 0; k < 2; ++k) {
      const double s = logistic(b[k] * (w[k][0] * x[0] - w[k][1] * x[1] - z[k]));
      const double ds = b[k] * s * (1.0 - s);
      J(k, 0) += ds * w[k][0];
      J(k, 1) -= ds * w[k][1];
    }
    return J / tc;
  }
  if (spec.name == "chemical_reaction") {
    const ChemConstants c = chem_constants(spec);
    const double sA = spec.param("scale_A"), sD = spec.param("scale_D");
    const Mat Jc = chem_rates_jac(c, spec.param("mu_A") + sA * x[0], spec.param("mu_D") + sD * x[1]);
    const Vec s = (Vec(2) << sA, sD).finished();
    return spec.param("time_scale") * s.cwiseInverse().asDiagonal() * Jc * s.asDiagonal();
  }
  if (spec.name == "linear") return -linear_A(spec);
  throw InvalidArgument("drift_jacobian: unknown drift '" + spec.name + "'");
}

QuadratureDrift make_quadrature_drift(const DriftSpec& spec, std::size_t order) {
  spec.validate();
  return QuadratureDrift(
      spec.dim(), [spec](const Vec& x) { return drift_eval(spec, x); },
      [spec](const Vec& x) { return drift_jacobian(spec, x); }, nullptr, order);
}

std::vector<Vec> find_fixed_points(const DriftSpec& spec, const Vec& lo, const Vec& hi, int starts_per_dim) {
  const Eigen::Index K = spec.dim();
  if (lo.size() != K || hi.size() != K) throw InvalidArgument("find_fixed_points: box dimension mismatch");
  if (starts_per_dim < 1) throw InvalidArgument("find_fixed_points: need at least one start per dimension");
  const double diam = (hi - lo).norm();
  std::vector<Vec> found;
  Eigen::Index total = 1;
  for (Eigen::Index d = 0; d < K; ++d) total *= starts_per_dim;
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    Vec x(K);
    Eigen::Index rem = idx;
    for (Eigen::Index d = 0; d < K; ++d) {
      const double u = starts_per_dim == 1 ? 0.5 : static_cast<double>(rem % starts_per_dim) / (starts_per_dim - 1);
      x[d] = lo[d] + u * (hi[d] - lo[d]);
      rem /= starts_per_dim;
    }
    bool ok = false;
    for (int it = 0; it < 100; ++it) {
      const Vec f = drift_eval(spec, x);
      const Mat J = drift_jacobian(spec, x);
      Eigen::FullPivLU<Mat> lu(J);
      if (!lu.isInvertible()) break;
      Vec step = lu.solve(f);
      if (step.norm() > 0.25 * diam) step *= 0.25 * diam / step.norm();
      x -= step;
      if (!x.allFinite()) break;
      if (step.norm() < 1e-13 * std::max(1.0, x.norm())) {
        ok = true;
        break;
      }
    }
    if (!ok || drift_eval(spec, x).norm() > 1e-8) continue;
    const Vec margin = 1e-6 * (hi - lo);
    if (((x - lo + margin).array() < 0.0).any() || ((hi + margin - x).array() < 0.0).any()) continue;
    bool dup = false;
    for (const auto& y : found)
      if ((x - y).norm() < 1e-6 * std::max(1.0, diam)) dup = true;
    if (!dup) found.push_back(x);
  }
  std::sort(found.begin(), found.end(), [](const Vec& a, const Vec& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  return found;
}

Vec SimPath::at(double t) const {
  if (x.empty()) throw InvalidArgument("SimPath: empty path");
  const double u = (t - t0) / h;
  if (u < -1e-9 || u > static_cast<double>(x.size() - 1) + 1e-9) throw OutOfRange("SimPath: time outside span");
  if (u <= 0.0) return x.front();
  const auto r = static_cast<std::size_t>(std::floor(u));
  if (r + 1 >= x.size()) return x.back();
  const double w = u - static_cast<double>(r);
  return (1.0 - w) * x[r] + w * x[r + 1];
}

SimPath simulate_sde(const DriftSpec& spec, const Vec& x0, double t0, double t_end, double h, std::uint64_t seed,
                     double noise_scale) {
  spec.validate();
  if (!(h > 0.0)) throw InvalidArgument("simulate_sde: step must be positive");
  if (!(t_end > t0)) throw InvalidArgument("simulate_sde: t_end must exceed t0");
  if (!(noise_scale >= 0.0)) throw InvalidArgument("simulate_sde: noise scale must be nonnegative");
  check_dim(spec, x0);
  const auto steps = static_cast<std::size_t>(std::llround((t_end - t0) / h));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  SimPath p;
  p.t0 = t0;
  p.h = h;
  p.x.reserve(steps + 1);
  p.x.push_back(x0);
  const double sq = noise_scale * std::sqrt(h);
  Vec xi(x0.size());
  for (std::size_t r = 0; r < steps; ++r) {
    for (Eigen::Index k = 0; k < xi.size(); ++k) xi[k] = N(rng);
    Vec next = p.x.back() + h * drift_eval(spec, p.x.back()) + sq * xi;
    if (!next.allFinite()) throw DivergenceError("simulate_sde: state became non-finite at step " + std::to_string(r + 1), r + 1);
    p.x.push_back(std::move(next));
  }
  return p;
}

TrialData sample_gaussian_obs(const SimPath& path, const Mat& C, const Vec& d, const Vec& Gamma, std::size_t n_obs,
                              std::uint64_t seed) {
  if (n_obs == 0) throw InvalidArgument("sample_gaussian_obs: n_obs must be at least 1");
  if (path.x.size() < 3 || n_obs > path.x.size() - 2)
    throw InvalidArgument("sample_gaussian_obs: more observations than interior grid points");
  if (C.rows() != d.size() || Gamma.size() != d.size()) throw InvalidArgument("sample_gaussian_obs: shape mismatch");
  if ((Gamma.array() < 0.0).any()) throw InvalidArgument("sample_gaussian_obs: Gamma must be nonnegative");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(path.t0, path.t_end());
  std::normal_distribution<double> N(0.0, 1.0);
  std::set<std::size_t> idx;
  while (idx.size() < n_obs) {
    const auto r = static_cast<std::size_t>(std::llround((U(rng) - path.t0) / path.h));
    if (r >= 1 && r + 1 < path.x.size()) idx.insert(r);
  }
  TrialData tr;
  tr.t0 = path.t0;
  tr.t_end = path.t_end();
  tr.kind = ObservationKind::Gaussian;
  tr.Y.resize(C.rows(), static_cast<Eigen::Index>(n_obs));
  const Vec sd = Gamma.cwiseSqrt();
  Eigen::Index i = 0;
  for (std::size_t r : idx) {
    tr.times.push_back(path.t0 + path.h * static_cast<double>(r));
    Vec noise(C.rows());
    for (Eigen::Index n = 0; n < noise.size(); ++n) noise[n] = N(rng);
    tr.Y.col(i++) = C * path.x[r] + d + sd.cwiseProduct(noise);
  }
  return tr;
}

TrialData sample_point_process(const SimPath& path, const Mat& C, const Vec& d, std::uint64_t seed) {
  if (C.rows() != d.size()) throw InvalidArgument("sample_point_process: C rows must match d");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  TrialData tr;
  tr.t0 = path.t0;
  tr.t_end = path.t_end();
  tr.kind = ObservationKind::PointProcess;
  tr.events.resize(static_cast<std::size_t>(C.rows()));
  for (Eigen::Index n = 0; n < C.rows(); ++n) {
    const Vec c = C.row(n).transpose();
    double bound = 0.0;
    for (const auto& x : path.x) bound = std::max(bound, std::exp(c.dot(x) + d[n]));
    bound *= 1.01;
    if (!std::isfinite(bound)) throw InvalidArgument("sample_point_process: intensity is not finite on the path");
    if (bound <= 0.0) continue;
    std::exponential_distribution<double> E(bound);
    double t = path.t0;
    auto& out = tr.events[static_cast<std::size_t>(n)];
    while (true) {
      t += E(rng);
      if (t > tr.t_end) break;
      const double rate = std::exp(c.dot(path.at(t)) + d[n]);
      if (U(rng) * bound < rate) out.push_back(t);
    }
  }
  return tr;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(stream)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void Dataset::validate() const {
  if (trials.empty()) throw InvalidArgument("dataset: trials must be nonempty");
  if (!(t_end > t0)) throw InvalidArgument("dataset: span must be increasing");
  const Eigen::Index N = trials.front().num_channels();
  for (std::size_t j = 0; j < trials.size(); ++j) {
    const auto& tr = trials[j];
    if (tr.kind != kind) throw InvalidArgument("dataset: trial " + std::to_string(j) + " has the wrong observation kind");
    if (tr.num_channels() != N) throw InvalidArgument("dataset: trial " + std::to_string(j) + " has a different channel count");
    tr.validate();
  }
  if (truth) {
    truth->drift.validate();
    if (truth->map.C.rows() != N) throw InvalidArgument("dataset: truth C rows do not match the channel count");
    if (truth->map.C.cols() != truth->drift.dim()) throw InvalidArgument("dataset: truth C columns do not match the drift");
  }
}

std::vector<std::string> protocol_names() {
  return {"double_well", "van_der_pol", "neural_pop_A", "neural_pop_B", "chemical"};
}

Mat chemical_mixing_matrix(const std::string& path) {
  const std::string file = path.empty() ? std::string(LSDE_FIXTURE_DIR) + "/chemical_mixing.csv" : path;
  std::ifstream in(file);
  if (!in) throw InvalidArgument("cannot open mixing-matrix fixture '" + file + "'");
  std::vector<std::array<double, 2>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::array<double, 2> r{};
    if (!(ls >> r[0] >> r[1])) throw InvalidArgument("mixing-matrix fixture: malformed line '" + line + "'");
    rows.push_back(r);
  }
  if (rows.size() != 13) throw InvalidArgument("mixing-matrix fixture: expected 13 rows");
  Mat C(13, 2);
  for (std::size_t i = 0; i < rows.size(); ++i) C.row(static_cast<Eigen::Index>(i)) << rows[i][0], rows[i][1];
  return C;
}

namespace {

constexpr double kChemTimeScale = 6000.0;
constexpr double kChemBoxA = 6e-4;
constexpr double kChemBoxD = 7.5e-4;

// Standardisation from noiseless trajectories started on a 10 x 10 grid of
// concentrations; independent of the dataset seed.
DriftSpec standardised_chemical() {
  DriftSpec s = chemical_reaction_spec();
  const ChemConstants c = chem_constants(s);
  const double h = kChemTimeScale * 1e-3;
  Vec sum = Vec::Zero(2), sq = Vec::Zero(2);
  double count = 0.0;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      Vec x(2);
      x << kChemBoxA * i / 9.0, kChemBoxD * j / 9.0;
      for (int r = 0; r < 1000; ++r) {
        x += h * chem_rates(c, x[0], x[1]);
        sum += x;
        sq += x.cwiseProduct(x);
        count += 1.0;
      }
    }
  const Vec mean = sum / count;
  const Vec sd = (sq / count - mean.cwiseProduct(mean)).cwiseSqrt();
  s.params["mu_A"] = mean[0];
  s.params["mu_D"] = mean[1];
  s.params["scale_A"] = sd[0];
  s.params["scale_D"] = sd[1];
  s.params["time_scale"] = kChemTimeScale;
  return s;
}

}  // namespace

ProtocolSpec protocol_spec(const std::string& name) {
  ProtocolSpec p;
  p.name = name;
  if (name == "double_well") {
    p.drift = double_well_spec();
    p.channels = 15;
    p.noise_var = 0.25;
    p.x0_lo = Vec::Constant(1, -1.5);
    p.x0_hi = Vec::Constant(1, 1.5);
  } else if (name == "van_der_pol") {
    p.drift = van_der_pol_spec(2.0, 15.0);
    p.channels = 20;
    p.noise_var = 2.25;
    p.x0_lo = Vec::Constant(2, -2.0);
    p.x0_hi = Vec::Constant(2, 2.0);
  } else if (name == "neural_pop_A" || name == "neural_pop_B") {
    p.drift = neural_population_spec(name.back(), 0.05);
    p.kind = ObservationKind::PointProcess;
    p.trials = 25;
    p.channels = 50;
    p.obs_per_trial = 0;
    p.noise_var = 0.0;
    p.x0_lo = Vec::Constant(2, -0.25);
    p.x0_hi = Vec::Constant(2, 1.25);
    p.d_mean = 2.5;
    p.d_sd = 0.5;
  } else if (name == "chemical") {
    p.drift = standardised_chemical();
    p.channels = 13;
    p.obs_per_trial = 50;
    p.noise_var = 0.1;
    p.x0_lo.resize(2);
    p.x0_hi.resize(2);
    p.x0_lo << -p.drift.param("mu_A") / p.drift.param("scale_A"), -p.drift.param("mu_D") / p.drift.param("scale_D");
    p.x0_hi << (kChemBoxA - p.drift.param("mu_A")) / p.drift.param("scale_A"),
        (kChemBoxD - p.drift.param("mu_D")) / p.drift.param("scale_D");
    p.d_sd = 0.1;
    p.fixed_C = chemical_mixing_matrix();
  } else {
    throw InvalidArgument("unknown protocol '" + name + "'");
  }
  return p;
}

Dataset simulate_protocol(const ProtocolSpec& spec, std::uint64_t seed) {
  spec.drift.validate();
  const Eigen::Index K = spec.drift.dim();
  if (spec.trials <= 0 || spec.channels <= 0) throw InvalidArgument("protocol: counts must be positive");
  if (spec.x0_lo.size() != K || spec.x0_hi.size() != K) throw InvalidArgument("protocol: initial box dimension mismatch");
  if (!(spec.sim_step > 0.0) || !(spec.record_step >= spec.sim_step))
    throw InvalidArgument("protocol: sim step must be positive and no larger than the record step");

  std::mt19937_64 prng(derive_seed(seed, 0, 1));
  std::normal_distribution<double> N(0.0, 1.0);
  Truth truth;
  truth.drift = spec.drift;
  truth.sim_step = spec.sim_step;
  truth.map.kind = spec.kind;
  if (spec.fixed_C.size() > 0) {
    if (spec.fixed_C.rows() != spec.channels || spec.fixed_C.cols() != K)
      throw InvalidArgument("protocol: fixed C has the wrong shape");
    truth.map.C = spec.fixed_C;
  } else {
    truth.map.C = Mat::NullaryExpr(spec.channels, K, [&]() { return spec.c_sd * N(prng); });
  }
  truth.map.d = Vec::NullaryExpr(spec.channels, [&]() { return spec.d_mean + spec.d_sd * N(prng); });
  if (spec.kind == ObservationKind::Gaussian) truth.map.Gamma = Vec::Constant(spec.channels, spec.noise_var);

  Dataset ds;
  ds.protocol = spec.name;
  ds.seed = seed;
  ds.t0 = 0.0;
  ds.t_end = spec.t_end;
  ds.kind = spec.kind;
  ds.trials.resize(static_cast<std::size_t>(spec.trials));
  const auto stride = static_cast<std::size_t>(std::llround(spec.record_step / spec.sim_step));
  parallel_for(static_cast<std::size_t>(spec.trials), [&](std::size_t j) {
    std::mt19937_64 rng(derive_seed(seed, j, 2));
    std::uniform_real_distribution<double> U(0.0, 1.0);
    Vec x0(K);
    for (Eigen::Index k = 0; k < K; ++k) x0[k] = spec.x0_lo[k] + U(rng) * (spec.x0_hi[k] - spec.x0_lo[k]);
    const SimPath path = simulate_sde(spec.drift, x0, 0.0, spec.t_end, spec.sim_step, derive_seed(seed, j, 3));
    TrialData tr = spec.kind == ObservationKind::Gaussian
                       ? sample_gaussian_obs(path, truth.map.C, truth.map.d, truth.map.Gamma, spec.obs_per_trial,
                                             derive_seed(seed, j, 4))
                       : sample_point_process(path, truth.map.C, truth.map.d, derive_seed(seed, j, 4));
    for (std::size_t r = 0; r < path.x.size(); r += stride) {
      tr.true_times.push_back(path.t0 + path.h * static_cast<double>(r));
      tr.true_path.push_back(path.x[r]);
    }
    ds.trials[j] = std::move(tr);
  });
  ds.truth = truth;
  return ds;
}

Dataset make_dataset(const std::string& protocol, std::uint64_t seed) {
  return simulate_protocol(protocol_spec(protocol), seed);
}

}  // namespace lsde
