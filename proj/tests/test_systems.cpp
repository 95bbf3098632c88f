#include "doctest.h"

#include <random>

#include "lsde/inference.hpp"
#include "lsde/systems.hpp"
#include "oracles.hpp"

using namespace lsde;

namespace {

std::vector<DriftSpec> all_specs() {
  DriftSpec chem = protocol_spec("chemical").drift;
  Mat A(2, 2);
  A << 1.0, 0.3, -0.2, 0.5;
  return {double_well_spec(), van_der_pol_spec(), neural_population_spec('A'), neural_population_spec('B', 0.05),
          chem, linear_spec(A, Vec::Constant(2, 0.1))};
}

Mat fd_jacobian(const DriftSpec& s, const Vec& x, double h) {
  Mat J(x.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    J.col(j) = (drift_eval(s, xp) - drift_eval(s, xm)) / (2.0 * h);
  }
  return J;
}

SimPath constant_path(double value, double t_end, double h) {
  SimPath p;
  p.h = h;
  p.x.assign(static_cast<std::size_t>(std::llround(t_end / h)) + 1, Vec::Constant(1, value));
  return p;
}

}  // namespace

TEST_CASE("drift formulas at known points") {
  CHECK(drift_eval(double_well_spec(), Vec::Constant(1, 0.5))[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(drift_jacobian(double_well_spec(), Vec::Constant(1, 1.0))(0, 0) == doctest::Approx(-8.0));
  CHECK(drift_jacobian(double_well_spec(), Vec::Constant(1, 0.0))(0, 0) == doctest::Approx(4.0));

  const auto vdp = van_der_pol_spec(2.0, 15.0);
  CHECK(drift_eval(vdp, Vec::Zero(2)).norm() == 0.0);
  Mat expected(2, 2);
  expected << 30.0, -30.0, 7.5, 0.0;
  CHECK((drift_jacobian(vdp, Vec::Zero(2)) - expected).norm() < 1e-12);
  Eigen::EigenSolver<Mat> es(drift_jacobian(vdp, Vec::Zero(2)));
  for (Eigen::Index i = 0; i < 2; ++i) CHECK(es.eigenvalues()[i].real() == doctest::Approx(15.0).epsilon(1e-6));

  // Neural drift with the logistic written out by hand.
  const auto nA = neural_population_spec('A', 0.5);
  const Vec x = (Vec(2) << 0.3, 0.7).finished();
  const double s1 = 1.0 / (1.0 + std::exp(-1.9 * (10 * 0.3 - 5 * 0.7 - 3)));
  const double s2 = 1.0 / (1.0 + std::exp(-0.5 * (9 * 0.3 - 3 * 0.7 - 3.9)));
  CHECK(drift_eval(nA, x)[0] == doctest::Approx((-0.3 + s1) / 0.5).epsilon(1e-14));
  CHECK(drift_eval(nA, x)[1] == doctest::Approx((-0.7 + s2) / 0.5).epsilon(1e-14));
}

TEST_CASE("drift dimension and parameter validation") {
  CHECK_THROWS_AS(drift_eval(double_well_spec(), Vec::Zero(2)), InvalidArgument);
  CHECK_THROWS_AS(drift_jacobian(van_der_pol_spec(), Vec::Zero(1)), InvalidArgument);
  CHECK_THROWS_AS((DriftSpec{"van_der_pol", {{"rho", 2.0}}}.validate()), InvalidArgument);
  CHECK_THROWS_AS((DriftSpec{"lorenz", {}}.validate()), InvalidArgument);
  CHECK_THROWS_AS(neural_population_spec('C'), InvalidArgument);
  for (const auto& s : all_specs()) CHECK_NOTHROW(s.validate());
}

TEST_CASE("analytic Jacobians match central differences") {
  std::mt19937_64 rng(11);
  for (const auto& s : all_specs()) {
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (int i = 0; i < 20; ++i) {
      Vec x = Vec::NullaryExpr(s.dim(), [&]() { return U(rng); });
      const Mat J = drift_jacobian(s, x);
      const Mat Jfd = fd_jacobian(s, x, 1e-6);
      const double scale = std::max(1.0, J.cwiseAbs().maxCoeff());
      INFO(s.name);
      CHECK((J - Jfd).cwiseAbs().maxCoeff() <= 1e-6 * scale);
    }
  }
}

TEST_CASE("known fixed points") {
  for (double x : {-1.0, 0.0, 1.0}) CHECK(std::abs(drift_eval(double_well_spec(), Vec::Constant(1, x))[0]) <= 1e-10);
  const auto dw = find_fixed_points(double_well_spec(), Vec::Constant(1, -2), Vec::Constant(1, 2));
  REQUIRE(dw.size() == 3);
  CHECK(dw[0][0] == doctest::Approx(-1.0));
  CHECK(std::abs(dw[1][0]) < 1e-12);
  CHECK(dw[2][0] == doctest::Approx(1.0));

  const auto vdp = find_fixed_points(van_der_pol_spec(), Vec::Constant(2, -3), Vec::Constant(2, 3));
  REQUIRE(vdp.size() == 1);
  CHECK(vdp[0].norm() < 1e-10);

  const auto nA = find_fixed_points(neural_population_spec('A'), Vec::Constant(2, -0.25), Vec::Constant(2, 1.25));
  CHECK(nA.size() == 3);
  const auto nB = find_fixed_points(neural_population_spec('B'), Vec::Constant(2, -0.25), Vec::Constant(2, 1.25));
  REQUIRE(nB.size() == 1);
  Eigen::EigenSolver<Mat> es(drift_jacobian(neural_population_spec('B'), nB[0]));
  CHECK(es.eigenvalues()[0].real() < 0.0);
  CHECK(std::abs(es.eigenvalues()[0].imag()) > 0.0);
  for (const auto& fp : nA) CHECK(drift_eval(neural_population_spec('A'), fp).norm() <= 1e-10);
}

TEST_CASE("chemical drift is finite over the simulation region and has five equilibria") {
  const DriftSpec raw = chemical_reaction_spec();
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      const Vec c = (Vec(2) << 6e-4 * i / 40.0, 7.5e-4 * j / 40.0).finished();
      CHECK(drift_eval(raw, c).allFinite());
    }
  const auto fps = find_fixed_points(raw, Vec::Zero(2), (Vec(2) << 6e-4, 7.5e-4).finished(), 40);
  CHECK(fps.size() == 5);
  int stable = 0;
  for (const auto& fp : fps) {
    Eigen::EigenSolver<Mat> es(drift_jacobian(raw, fp));
    if (es.eigenvalues().real().maxCoeff() < 0.0) ++stable;
  }
  CHECK(stable == 3);

  // Standardisation is an affine change of variables: y-space equilibria map
  // back onto the concentration equilibria.
  const DriftSpec s = protocol_spec("chemical").drift;
  const Vec mu = (Vec(2) << s.param("mu_A"), s.param("mu_D")).finished();
  const Vec sc = (Vec(2) << s.param("scale_A"), s.param("scale_D")).finished();
  for (const auto& fp : fps) {
    const Vec y = (fp - mu).cwiseQuotient(sc);
    CHECK(drift_eval(s, y).norm() < 1e-9);
  }
}

TEST_CASE("Euler-Maruyama increments and deterministic decay") {
  DriftSpec zero = linear_spec(Mat::Zero(1, 1), Vec::Zero(1));
  const double h = 1e-3;
  const SimPath p = simulate_sde(zero, Vec::Zero(1), 0.0, 100.0, h, 5);
  REQUIRE(p.x.size() == 100001);
  double sum = 0.0, sq = 0.0;
  for (std::size_t r = 1; r < p.x.size(); ++r) {
    const double inc = p.x[r][0] - p.x[r - 1][0];
    sum += inc;
    sq += inc * inc;
  }
  const double n = static_cast<double>(p.x.size() - 1);
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(var - h) <= 0.02 * h);

  DriftSpec decay = linear_spec(Mat::Identity(1, 1), Vec::Zero(1));
  for (double step : {1e-3, 5e-4}) {
    const SimPath q = simulate_sde(decay, Vec::Ones(1), 0.0, 1.0, step, 1, 0.0);
    double err = 0.0;
    for (std::size_t r = 0; r < q.x.size(); ++r)
      err = std::max(err, std::abs(q.x[r][0] - std::exp(-step * static_cast<double>(r))));
    CHECK(err <= step);
  }

  const SimPath a = simulate_sde(van_der_pol_spec(), Vec::Ones(2), 0.0, 1.0, 1e-4, 77);
  const SimPath b = simulate_sde(van_der_pol_spec(), Vec::Ones(2), 0.0, 1.0, 1e-4, 77);
  for (std::size_t r = 0; r < a.x.size(); ++r) REQUIRE(a.x[r] == b.x[r]);

  CHECK_THROWS_AS(simulate_sde(zero, Vec::Zero(1), 0.0, 1.0, 0.0, 1), InvalidArgument);
  DriftSpec blowup = linear_spec(Mat::Constant(1, 1, -1e4), Vec::Zero(1));
  CHECK_THROWS_AS(simulate_sde(blowup, Vec::Ones(1), 0.0, 100.0, 0.1, 1, 0.0), DivergenceError);
}

TEST_CASE("Gaussian observation sampling") {
  const SimPath p = simulate_sde(van_der_pol_spec(), Vec::Ones(2), 0.0, 1.0, 1e-3, 3);
  const TrialData tr = sample_gaussian_obs(p, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2), 30, 4);
  REQUIRE(tr.times.size() == 30);
  CHECK_NOTHROW(tr.validate());
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    CHECK(tr.times[i] > p.t0);
    CHECK(tr.times[i] < p.t_end());
    if (i > 0) CHECK(tr.times[i] > tr.times[i - 1]);
    const auto r = static_cast<std::size_t>(std::llround(tr.times[i] / p.h));
    CHECK(tr.Y.col(static_cast<Eigen::Index>(i)) == p.x[r]);
  }
  const TrialData again = sample_gaussian_obs(p, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2), 30, 4);
  CHECK(again.times == tr.times);
  CHECK(again.Y == tr.Y);

  const SimPath flat = constant_path(0.0, 20.0, 1e-3);
  const Vec Gamma = (Vec(2) << 0.25, 2.25).finished();
  const Vec d = (Vec(2) << 1.0, -1.0).finished();
  const TrialData big = sample_gaussian_obs(flat, Mat::Ones(2, 1), d, Gamma, 10000, 9);
  for (Eigen::Index n = 0; n < 2; ++n) {
    const Eigen::ArrayXd res = big.Y.row(n).array() - d[n];
    const double var = (res - res.mean()).square().mean();
    CHECK(std::abs(var - Gamma[n]) <= 0.05 * Gamma[n]);
  }
  CHECK_THROWS_AS(sample_gaussian_obs(p, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2), 0, 1), InvalidArgument);
  CHECK_THROWS_AS(sample_gaussian_obs(p, Mat::Identity(2, 2), Vec::Zero(2), Vec::Zero(2), 1001, 1), InvalidArgument);
}

TEST_CASE("point-process thinning") {
  const SimPath flat = constant_path(0.0, 10.0, 1e-3);
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const TrialData tr = sample_point_process(flat, Mat::Zero(1, 1), Vec::Constant(1, std::log(5.0)), seed);
    total += static_cast<double>(tr.events[0].size());
    if (seed == 0) CHECK_NOTHROW(tr.validate());
  }
  CHECK(std::abs(total / 200.0 - 50.0) <= 3.0 * std::sqrt(50.0 / 200.0));

  const TrialData none = sample_point_process(flat, Mat::Zero(1, 1),
                                              Vec::Constant(1, -std::numeric_limits<double>::infinity()), 1);
  CHECK(none.events[0].empty());

  // Time rescaling: integrated intensity between events is Exp(1). The
  // integral of exp of the piecewise-linear path is exact per segment.
  SimPath wave;
  wave.h = 1e-3;
  for (int r = 0; r <= 10000; ++r) wave.x.push_back(Vec::Constant(1, std::sin(2.0 * M_PI * r * wave.h)));
  const double d0 = std::log(3.0);
  auto cumulative = [&](double t) {
    const double u = t / wave.h;
    const auto r = std::min<std::size_t>(static_cast<std::size_t>(u), wave.x.size() - 2);
    double acc = 0.0;
    auto seg = [&](double a, double b, double len) {
      return std::abs(b - a) < 1e-14 ? len * std::exp(a) : len * (std::exp(b) - std::exp(a)) / (b - a);
    };
    for (std::size_t k = 0; k < r; ++k) acc += seg(wave.x[k][0] + d0, wave.x[k + 1][0] + d0, wave.h);
    const double w = u - static_cast<double>(r);
    const double a = wave.x[r][0] + d0;
    const double b = a + w * (wave.x[r + 1][0] + d0 - a);
    return acc + seg(a, b, w * wave.h);
  };
  std::vector<double> grid_cum(wave.x.size(), 0.0);
  std::vector<double> z;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const TrialData tr = sample_point_process(wave, Mat::Ones(1, 1), Vec::Constant(1, d0), 1000 + seed);
    double prev = 0.0;
    for (double t : tr.events[0]) {
      const double c = cumulative(t);
      z.push_back(1.0 - std::exp(-(c - prev)));
      prev = c;
    }
  }
  REQUIRE(z.size() > 1000);
  CHECK(oracle::ks_uniform_pvalue(z) > 0.01);
}

TEST_CASE("protocol datasets") {
  const Dataset dw = make_dataset("double_well", 1);
  CHECK_NOTHROW(dw.validate());
  REQUIRE(dw.trials.size() == 20);
  for (const auto& tr : dw.trials) {
    CHECK(tr.Y.rows() == 15);
    CHECK(tr.Y.cols() == 20);
    CHECK(tr.true_path.size() == 1001);
  }
  REQUIRE(dw.truth);
  CHECK(dw.truth->map.Gamma == Vec::Constant(15, 0.25));

  const Dataset vdp = make_dataset("van_der_pol", 2);
  CHECK(vdp.trials.size() == 20);
  CHECK(vdp.trials[0].Y.rows() == 20);
  CHECK(vdp.truth->drift.param("rho") == 2.0);
  CHECK(vdp.truth->drift.param("tau") == 15.0);
  CHECK(vdp.truth->map.Gamma[0] == 2.25);

  const Dataset nA = make_dataset("neural_pop_A", 3);
  CHECK(nA.kind == ObservationKind::PointProcess);
  CHECK(nA.trials.size() == 25);
  CHECK(nA.trials[0].events.size() == 50);
  const auto& p = nA.truth->drift;
  CHECK(p.param("b1") == 1.9);
  CHECK(p.param("b2") == 0.5);
  CHECK(p.param("z1") == 3.0);
  CHECK(p.param("z2") == 3.9);
  CHECK(p.param("w11") == 10.0);
  CHECK(p.param("w12") == 5.0);
  CHECK(p.param("w21") == 9.0);
  CHECK(p.param("w22") == 3.0);
  std::size_t events = 0;
  for (const auto& ch : nA.trials[0].events) events += ch.size();
  CHECK(events > 0);

  const Dataset chem = make_dataset("chemical", 4);
  CHECK(chem.trials.size() == 20);
  CHECK(chem.trials[0].Y.rows() == 13);
  CHECK(chem.trials[0].Y.cols() == 50);
  CHECK(chem.truth->drift.param("k_b") == 2.1425e4);
  CHECK(chem.truth->drift.param("V_A") == 4e1);
  CHECK(chem.truth->drift.param("F4") == 3.25e-3);
  CHECK(chem.truth->map.C == chemical_mixing_matrix());
  CHECK((chemical_mixing_matrix().array() >= 0.0).all());

  const Dataset again = make_dataset("double_well", 1);
  for (std::size_t j = 0; j < dw.trials.size(); ++j) {
    CHECK(again.trials[j].times == dw.trials[j].times);
    CHECK(again.trials[j].Y == dw.trials[j].Y);
  }
  CHECK(make_dataset("double_well", 2).trials[0].Y != dw.trials[0].Y);
  CHECK_THROWS_AS(make_dataset("bogus", 1), InvalidArgument);
  CHECK_THROWS_AS(chemical_mixing_matrix("/nonexistent.csv"), InvalidArgument);
}

TEST_CASE("smoothing with the true double-well drift is calibrated") {
  const Dataset ds = make_dataset("double_well", 21);
  const QuadratureDrift drift = make_quadrature_drift(ds.truth->drift);
  const TimeGrid grid(0.0, 1.0, 1e-3);
  const InitialState init = InitialState::from_prior(Vec::Zero(1), Mat::Identity(1, 1));
  double inside = 0.0, count = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    const auto& tr = ds.trials[j];
    const TrialPosterior post = smooth_trial(tr, drift, ds.truth->map, init, grid);
    for (std::size_t r = 0; r < tr.true_times.size(); r += 10) {
      const double m = post.path.mean_at(tr.true_times[r])[0];
      const double sd = std::sqrt(post.path.cov_at(tr.true_times[r])(0, 0));
      if (std::abs(tr.true_path[r][0] - m) <= 2.0 * sd) inside += 1.0;
      count += 1.0;
    }
  }
  MESSAGE("coverage " << inside / count);
  CHECK(inside / count >= 0.85);
}
