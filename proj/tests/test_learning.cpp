#include "doctest.h"

#include <random>

#include "lsde/learning.hpp"
#include "lsde/parallel.hpp"
#include "oracles.hpp"

using namespace lsde;

namespace {

struct Problem {
  std::vector<TrialData> trials;
  std::vector<TrialPosterior> posts;
  ObservationModel obs;
  DynamicsModel model;

  std::vector<const PathPosterior*> paths() const {
    std::vector<const PathPosterior*> out;
    for (const auto& p : posts) out.push_back(&p.path);
    return out;
  }
  double F(const DriftModel& drift) const { return free_energy(trials, posts, drift, obs); }
  double F() const { return F(model); }
};

// Paths from random smooth controls; no smoothing so that each block of F* is
// tested in isolation from the inference code.
Problem random_problem(Eigen::Index K, Eigen::Index L, std::uint64_t seed, int n_trials = 2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  Problem p;
  const Eigen::Index n_out = 3;
  p.obs.C = Mat::NullaryExpr(n_out, K, [&]() { return N(rng); });
  p.obs.d = Vec::NullaryExpr(n_out, [&]() { return 0.3 * N(rng); });
  p.obs.Gamma = Vec::Constant(n_out, 0.5);

  Mat Z(K == 1 ? 5 : 9, K);
  if (K == 1) {
    Z.col(0) = Vec::LinSpaced(5, -2.0, 2.0);
  } else {
    for (int i = 0; i < 9; ++i) Z.row(i) << -1.5 + 1.5 * (i / 3), -1.5 + 1.5 * (i % 3);
  }
  Mat S = Mat::NullaryExpr(L, K, [&]() { return 0.8 * N(rng); });
  p.model = DynamicsModel({1.3, Vec::Constant(K, 1.1)}, Z, {S, Vec::Constant(L, 0.3)});
  std::vector<Vec> mu(static_cast<std::size_t>(K));
  for (auto& v : mu) v = Vec::NullaryExpr(Z.rows(), [&]() { return N(rng); });
  p.model.set_inducing_means(mu);
  std::vector<Mat> J(static_cast<std::size_t>(L));
  for (auto& j : J) j = Mat::NullaryExpr(K, K, [&]() { return N(rng); });
  p.model.set_jacobians(J);

  TimeGrid grid(0.0, 1.5, 0.01);
  for (int t = 0; t < n_trials; ++t) {
    TrialPosterior post;
    post.path = PathPosterior::initial(grid, K);
    const Vec b0 = Vec::NullaryExpr(K, [&]() { return 1.5 * N(rng); });
    const Vec b1 = Vec::NullaryExpr(K, [&]() { return 1.5 * N(rng); });
    const Mat A0 = Mat::Identity(K, K) + 0.4 * Mat::NullaryExpr(K, K, [&]() { return N(rng); });
    for (std::size_t r = 0; r < grid.size(); ++r) {
      const double s = grid.time(r) / grid.t_end();
      post.path.A[r] = A0 * (1.0 + 0.5 * std::sin(3.0 * s));
      post.path.b[r] = (1.0 - s) * b0 + s * b1;
    }
    post.init = InitialState::from_prior(Vec::Zero(K), Mat::Identity(K, K));
    post.init.m0 = Vec::NullaryExpr(K, [&]() { return 0.5 * N(rng); });
    post.init.S0 = 0.2 * Mat::Identity(K, K);
    forward_pass(post.path, post.init);

    TrialData tr;
    tr.t_end = grid.t_end();
    std::uniform_real_distribution<double> U(0.0, tr.t_end);
    for (int i = 0; i < 10; ++i) tr.times.push_back(U(rng));
    std::sort(tr.times.begin(), tr.times.end());
    tr.Y.resize(n_out, 10);
    for (int i = 0; i < 10; ++i)
      tr.Y.col(i) = p.obs.C * post.path.mean_at(tr.times[static_cast<std::size_t>(i)]) + p.obs.d +
                    Vec::NullaryExpr(n_out, [&]() { return 0.7 * N(rng); });
    p.trials.push_back(tr);
    p.posts.push_back(post);
  }
  return p;
}

// Central difference of f at zero.
double fd(const std::function<double(double)>& f, double h) { return (f(h) - f(-h)) / (2.0 * h); }

double max_abs_gradient_S_u(const Problem& p) {
  double worst = 0.0;
  const Eigen::Index M = p.model.num_inducing();
  for (Eigen::Index k = 0; k < p.model.dim(); ++k)
    for (Eigen::Index a = 0; a < M; ++a)
      for (Eigen::Index b = a; b < M; ++b) {
        const double g = fd(
            [&](double h) {
              DynamicsModel m = p.model;
              auto S = m.inducing_covs();
              S[k](a, b) += h;
              if (a != b) S[k](b, a) += h;
              m.set_inducing_covs(S);
              return p.F(m);
            },
            1e-5);
        worst = std::max(worst, std::abs(g));
      }
  return worst;
}

double max_abs_gradient_means(const Problem& p) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < p.model.dim(); ++k)
    for (Eigen::Index a = 0; a < p.model.num_inducing(); ++a) {
      const double g = fd(
          [&](double h) {
            DynamicsModel m = p.model;
            auto mu = m.inducing_means();
            mu[k][a] += h;
            m.set_inducing_means(mu);
            return p.F(m);
          },
          1e-5);
      worst = std::max(worst, std::abs(g));
    }
  return worst;
}

double max_abs_gradient_jacobians(const Problem& p) {
  double worst = 0.0;
  const Eigen::Index K = p.model.dim();
  for (Eigen::Index i = 0; i < p.model.num_fixed_points(); ++i)
    for (Eigen::Index r = 0; r < K; ++r)
      for (Eigen::Index c = 0; c < K; ++c) {
        const double g = fd(
            [&](double h) {
              DynamicsModel m = p.model;
              auto J = m.jacobians();
              J[i](r, c) += h;
              m.set_jacobians(J);
              return p.F(m);
            },
            1e-5);
        worst = std::max(worst, std::abs(g));
      }
  return worst;
}

}  // namespace

TEST_CASE("parallel_for is deterministic and reports the first failure") {
  std::vector<double> a(37), b(37);
  parallel_for(37, [&](std::size_t i) { a[i] = std::sqrt(static_cast<double>(i)); }, 1);
  parallel_for(37, [&](std::size_t i) { b[i] = std::sqrt(static_cast<double>(i)); }, 4);
  CHECK(a == b);
  try {
    parallel_for(
        10,
        [](std::size_t i) {
          if (i == 3 || i == 7) throw InvalidArgument("fail " + std::to_string(i));
        },
        3);
    FAIL("expected exception");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()) == "fail 3");
  }
}

TEST_CASE("stats of a constant path") {
  const auto p = random_problem(2, 1, 11, 1);
  const TimeGrid grid(0.0, 2.0, 0.01);
  PathPosterior path = PathPosterior::initial(grid, 2);
  const Vec m = Vec::Constant(2, 0.3);
  Mat S(2, 2);
  S << 0.2, 0.05, 0.05, 0.1;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    path.m[r] = m;
    path.S[r] = S;
    path.A[r].setZero();
  }
  const auto ex = p.model.engine().expectations({m, S}, true);
  for (auto rule : {StatsQuadrature::Grid, StatsQuadrature::GaussLegendre}) {
    const SufficientStats s = trial_stats(path, &p.model.engine(), rule);
    CHECK((s.outer - 2.0 * ex.psi_outer).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(s.weight == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(s.feat_fq.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.jac_S.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.constant == 0.0);
  }
}

TEST_CASE("stats are additive over trials and symmetric") {
  const auto p = random_problem(2, 1, 12, 1);
  const std::vector<const PathPosterior*> twice{&p.posts[0].path, &p.posts[0].path};
  const SufficientStats one = accumulate_stats({&p.posts[0].path}, &p.model.engine());
  const SufficientStats two = accumulate_stats(twice, &p.model.engine());
  CHECK((two.outer - 2.0 * one.outer).cwiseAbs().maxCoeff() == 0.0);
  CHECK((two.feat_fq - 2.0 * one.feat_fq).cwiseAbs().maxCoeff() == 0.0);
  CHECK(two.constant == 2.0 * one.constant);
  CHECK((one.outer - one.outer.transpose()).norm() == 0.0);
  Eigen::SelfAdjointEigenSolver<Mat> es(one.outer);
  CHECK(es.eigenvalues().minCoeff() > -1e-8 * es.eigenvalues().maxCoeff());
}

TEST_CASE("stats_energy reproduces the smoother's path-KL term") {
  for (Eigen::Index K : {1, 2}) {
    const auto p = random_problem(K, 2, 20 + static_cast<std::uint64_t>(K));
    const SufficientStats s = accumulate_stats(p.paths(), &p.model.engine());
    double direct = 0.0;
    for (const auto& post : p.posts) direct += kl_path_gradients(post.path, p.model).total;
    CHECK(stats_energy(s, p.model) == doctest::Approx(direct).epsilon(1e-10));

    const LinearDrift lin(Mat::Identity(K, K) * 0.7, Vec::Constant(K, 0.2));
    double direct_lin = 0.0;
    for (const auto& post : p.posts) direct_lin += kl_path_gradients(post.path, lin).total;
    CHECK(linear_energy(s, lin.A(), lin.b()) == doctest::Approx(direct_lin).epsilon(1e-10));
  }
}

TEST_CASE("update_inducing_cov examples") {
  auto p = random_problem(2, 1, 30);
  const Eigen::Index P = p.model.layout().total();
  const Eigen::Index M = p.model.num_inducing();
  SUBCASE("no data reverts to the prior") {
    const auto S = update_inducing_cov(SufficientStats::zeros(P, 2), p.model);
    for (const auto& s : S) CHECK((s - p.model.omega_u()).norm() < 1e-8 * p.model.omega_u().norm());
  }
  SUBCASE("scalar statistics in a-space") {
    SufficientStats st = SufficientStats::zeros(P, 2);
    const double c = 2.5;
    Mat a_space = Mat::Zero(P, P);
    a_space.topLeftCorner(M, M) = c * Mat::Identity(M, M);
    st.outer = p.model.k_theta() * a_space * p.model.k_theta();
    const auto S = update_inducing_cov(st, p.model);
    const Mat expect = (p.model.omega_u().inverse() + c * Mat::Identity(M, M)).inverse();
    CHECK((S[0] - expect).norm() < 1e-7 * expect.norm());
    CHECK((S[1] - S[0]).norm() == 0.0);
  }
  SUBCASE("stationarity and ascent") {
    const double before = p.F();
    const SufficientStats st = accumulate_stats(p.paths(), &p.model.engine());
    p.model.set_inducing_covs(update_inducing_cov(st, p.model));
    CHECK(p.F() >= before - 1e-8 * std::abs(before));
    CHECK(max_abs_gradient_S_u(p) <= 1e-5);
  }
}

TEST_CASE("update_inducing_means_jacobians examples") {
  SUBCASE("prior-only system has the prior-mean null space") {
    auto p = random_problem(2, 2, 40);
    const MeanJacobianUpdate up =
        update_inducing_means_jacobians(SufficientStats::zeros(p.model.layout().total(), 2), p.model);
    DynamicsModel m = p.model;
    m.set_inducing_means(up.m_u);
    m.set_jacobians(up.J);
    for (Eigen::Index k = 0; k < 2; ++k) CHECK((up.m_u[k] - m.prior_mean(k)).norm() < 1e-12);
    // any [G j; j] is annihilated by Omega~
    const Mat& Oi = p.model.omega_u_inv();
    const Mat& G = p.model.G();
    const Vec j = Vec::LinSpaced(G.cols(), -1.0, 2.0);
    const Vec mu = G * j;
    CHECK((Oi * mu - Oi * G * j).norm() < 1e-9 * (Oi * mu).norm());
    CHECK((-G.transpose() * Oi * mu + G.transpose() * Oi * G * j).norm() < 1e-9 * (G.transpose() * Oi * mu).norm());
  }
  SUBCASE("stationarity and ascent") {
    for (Eigen::Index K : {1, 2}) {
      auto p = random_problem(K, 2, 41 + static_cast<std::uint64_t>(K));
      const double before = p.F();
      const SufficientStats st = accumulate_stats(p.paths(), &p.model.engine());
      const MeanJacobianUpdate up = update_inducing_means_jacobians(st, p.model);
      p.model.set_inducing_means(up.m_u);
      p.model.set_jacobians(up.J);
      CHECK(p.F() >= before - 1e-8 * std::abs(before));
      CHECK(max_abs_gradient_means(p) <= 1e-5);
      CHECK(max_abs_gradient_jacobians(p) <= 1e-5);
    }
  }
}

TEST_CASE("update_inducing_means_jacobians recovers a generating drift") {
  std::mt19937_64 rng(50);
  std::normal_distribution<double> N(0.0, 1.0);
  Mat Z(9, 2);
  for (int i = 0; i < 9; ++i) Z.row(i) << -1.5 + 1.5 * (i / 3), -1.5 + 1.5 * (i % 3);
  Mat S(1, 2);
  S << 0.2, -0.3;
  DynamicsModel truth({1.0, Vec::Constant(2, 1.2)}, Z, {S, Vec::Constant(1, 0.05)});
  std::vector<Vec> mu{Vec::NullaryExpr(9, [&]() { return N(rng); }), Vec::NullaryExpr(9, [&]() { return N(rng); })};
  truth.set_inducing_means(mu);
  Mat J(2, 2);
  J << -1.0, 0.5, -0.8, -2.0;
  truth.set_jacobians({J});

  // Point-mass path sweeping the region with zero controls on A: f_q = b = truth mean drift.
  const int n = 900;
  TimeGrid grid(0.0, n * 1e4, 1e4);
  PathPosterior path = PathPosterior::initial(grid, 2);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    const double u = static_cast<double>(r % 30) / 29.0, v = static_cast<double>(r / 30) / 30.0;
    path.m[r] = Vec(2);
    path.m[r] << -2.0 + 4.0 * u, -2.0 + 4.0 * v;
    path.S[r] = 1e-12 * Mat::Identity(2, 2);
    path.A[r].setZero();
    path.b[r] = truth.predict_f(path.m[r]).mean;
  }
  DynamicsModel model = truth;
  model.set_inducing_means({Vec::Zero(9), Vec::Zero(9)});
  model.set_jacobians({Mat::Zero(2, 2)});
  const SufficientStats st = trial_stats(path, &model.engine());
  const MeanJacobianUpdate up = update_inducing_means_jacobians(st, model);
  for (int k = 0; k < 2; ++k) CHECK((up.m_u[k] - mu[k]).norm() <= 1e-3 * mu[k].norm());
  CHECK((up.J[0] - J).norm() <= 1e-3 * J.norm());
}

TEST_CASE("update_sparse_plain examples") {
  auto p = random_problem(2, 0, 60);
  const Eigen::Index M = p.model.num_inducing();
  SUBCASE("no data reverts to the prior") {
    const SparseUpdate up = update_sparse_plain(SufficientStats::zeros(M, 2), p.model);
    CHECK((up.S_u[0] - p.model.k_theta()).norm() < 1e-8 * p.model.k_theta().norm());
    CHECK(up.m_u[0].norm() == 0.0);
  }
  SUBCASE("agrees with the conditioned update at L = 0") {
    const SufficientStats st = accumulate_stats(p.paths(), &p.model.engine());
    const SparseUpdate sp = update_sparse_plain(st, p.model);
    const auto S = update_inducing_cov(st, p.model);
    const MeanJacobianUpdate mj = update_inducing_means_jacobians(st, p.model);
    for (int k = 0; k < 2; ++k) {
      CHECK((sp.S_u[k] - S[k]).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, S[k].cwiseAbs().maxCoeff()));
      CHECK((sp.m_u[k] - mj.m_u[k]).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, mj.m_u[k].cwiseAbs().maxCoeff()));
    }
  }
  SUBCASE("stationarity") {
    const SufficientStats st = accumulate_stats(p.paths(), &p.model.engine());
    const double before = p.F();
    update_dynamics(p.model, st, DynamicsVariant::SparsePlain);
    CHECK(p.F() >= before - 1e-8 * std::abs(before));
    CHECK(max_abs_gradient_means(p) <= 1e-5);
    CHECK(max_abs_gradient_S_u(p) <= 1e-5);
  }
}

TEST_CASE("update_linear_dynamics examples") {
  SUBCASE("recovers constant controls") {
    TimeGrid grid(0.0, 3.0, 0.01);
    Mat A0(2, 2);
    A0 << 1.2, -0.4, 0.7, 0.9;
    const Vec b0 = Vec::LinSpaced(2, 0.3, -0.5);
    std::vector<PathPosterior> paths;
    for (int t = 0; t < 3; ++t) {
      PathPosterior path = PathPosterior::initial(grid, 2);
      for (std::size_t r = 0; r < grid.size(); ++r) {
        path.A[r] = A0;
        path.b[r] = b0;
      }
      InitialState init = InitialState::from_prior(Vec::Constant(2, -1.0 + t), 0.1 * Mat::Identity(2, 2));
      forward_pass(path, init);
      paths.push_back(path);
    }
    const SufficientStats st = accumulate_stats({&paths[0], &paths[1], &paths[2]}, nullptr);
    const LinearDynamics lin = update_linear_dynamics(st);
    CHECK((lin.A - A0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((lin.b - b0).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(linear_energy(st, lin.A, lin.b)) < 1e-8);
  }
  SUBCASE("centered paths give a zero offset") {
    TimeGrid grid(0.0, 1.0, 0.01);
    PathPosterior path = PathPosterior::initial(grid, 2);
    for (std::size_t r = 0; r < grid.size(); ++r) {
      path.m[r] = Vec::Zero(2);
      path.S[r] = (1.0 + grid.time(r)) * Mat::Identity(2, 2);
      path.A[r] = Mat::Identity(2, 2) * (0.5 + grid.time(r));
      path.b[r] = Vec::Zero(2);
    }
    const LinearDynamics lin = update_linear_dynamics(trial_stats(path, nullptr));
    CHECK(lin.b.norm() < 1e-14);
  }
  SUBCASE("stationarity of the path-KL term") {
    auto p = random_problem(2, 0, 70);
    const LinearDynamics lin = update_linear_dynamics(accumulate_stats(p.paths(), nullptr));
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 2; ++i)
      for (Eigen::Index j = 0; j < 3; ++j) {
        const double g = fd(
            [&](double h) {
              Mat A = lin.A;
              Vec b = lin.b;
              if (j < 2)
                A(i, j) += h;
              else
                b[i] += h;
              return p.F(LinearDrift(A, b));
            },
            1e-5);
        worst = std::max(worst, std::abs(g));
      }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("closed-form updates do not decrease the free energy") {
  for (std::uint64_t seed = 80; seed < 85; ++seed) {
    auto p = random_problem(1 + static_cast<Eigen::Index>(seed % 2), 1 + static_cast<Eigen::Index>(seed % 3), seed);
    const double f0 = p.F();
    const SufficientStats st = accumulate_stats(p.paths(), &p.model.engine());
    p.model.set_inducing_covs(update_inducing_cov(st, p.model));
    const double f1 = p.F();
    const MeanJacobianUpdate mj = update_inducing_means_jacobians(st, p.model);
    p.model.set_inducing_means(mj.m_u);
    p.model.set_jacobians(mj.J);
    const double f2 = p.F();
    CHECK(f1 >= f0 - 1e-8 * std::abs(f0));
    CHECK(f2 >= f1 - 1e-8 * std::abs(f1));
    // the collapsed bound is the drift part of F*
    DynamicsModel m = p.model;
    const double collapsed = collapsed_drift_bound(m, st, DynamicsVariant::Conditioned);
    double rest = 0.0;
    for (std::size_t j = 0; j < p.trials.size(); ++j) {
      const auto o = evaluate_trial(p.trials[j], p.posts[j].path, p.posts[j].init, p.model, p.obs);
      rest += o.expected_ll - o.kl0;
    }
    CHECK(rest + collapsed == doctest::Approx(f2).epsilon(1e-9));
  }
}

TEST_CASE("optimize_hyperparameters never decreases the bound") {
  auto p = random_problem(1, 2, 90, 3);
  update_dynamics(p.model, accumulate_stats(p.paths(), &p.model.engine()), DynamicsVariant::Conditioned);
  const double before = p.F();
  HyperoptConfig cfg;
  cfg.steps = 3;
  const HyperoptResult h = optimize_hyperparameters(p.model, p.paths(), DynamicsVariant::Conditioned, cfg);
  CHECK(h.after >= h.before);
  CHECK(h.accepted > 0);
  CHECK(p.F() >= before);
  CHECK(p.F() - before == doctest::Approx(h.after - h.before).epsilon(1e-6));
}

TEST_CASE("kmeans separates well-spaced clusters deterministically") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> N(0.0, 0.05);
  Mat X(2, 300);
  const Mat centers = (Mat(3, 2) << -2, 0, 0, 1, 2, -1).finished();
  for (int i = 0; i < 300; ++i) X.col(i) = centers.row(i % 3).transpose() + Vec::NullaryExpr(2, [&]() { return N(rng); });
  const Mat c1 = kmeans(X, 3, 7);
  const Mat c2 = kmeans(X, 3, 7);
  CHECK((c1 - c2).norm() == 0.0);
  for (int j = 0; j < 3; ++j) {
    double best = 1e9;
    for (int i = 0; i < 3; ++i) best = std::min(best, (c1.row(i) - centers.row(j)).norm());
    CHECK(best < 0.05);
  }
  CHECK_THROWS_AS(kmeans(X.leftCols(2), 3, 1), InvalidArgument);
}

TEST_CASE("pseudo_latents invert a noiseless output map") {
  ObservationModel map;
  map.C = (Mat(3, 2) << 1, 0, 0.5, 2, -1, 1).finished();
  map.d = Vec::LinSpaced(3, -1, 1);
  map.Gamma = Vec::Constant(3, 0.1);
  TrialData tr;
  tr.times = {0.1, 0.5};
  const Mat X = (Mat(2, 2) << 0.3, -1.0, 2.0, 0.5).finished();
  tr.Y = (map.C * X).colwise() + map.d;
  const Mat got = pseudo_latents({tr}, map);
  CHECK((got - X).norm() < 1e-8);
}

namespace {

std::vector<TrialData> ou_trials(double decay, int n_trials, int n_obs, std::uint64_t seed, ObservationModel& map) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  map.kind = ObservationKind::Gaussian;
  map.C = (Mat(3, 1) << 1.0, -0.7, 0.4).finished();
  map.d = Vec::Zero(3);
  map.Gamma = Vec::Constant(3, 0.1);
  const double span = 5.0, h = 1e-3;
  const int steps = static_cast<int>(span / h);
  std::vector<TrialData> trials;
  for (int t = 0; t < n_trials; ++t) {
    std::vector<double> x(static_cast<std::size_t>(steps) + 1);
    x[0] = N(rng) / std::sqrt(2.0 * decay);
    for (int r = 0; r < steps; ++r) x[r + 1] = x[r] - decay * x[r] * h + std::sqrt(h) * N(rng);
    TrialData tr;
    tr.t_end = span;
    for (int i = 0; i < n_obs; ++i) tr.times.push_back(std::round(U(rng) * steps) * h);
    std::sort(tr.times.begin(), tr.times.end());
    tr.Y.resize(3, n_obs);
    for (int i = 0; i < n_obs; ++i) {
      const double xi = x[static_cast<std::size_t>(std::lround(tr.times[static_cast<std::size_t>(i)] / h))];
      tr.Y.col(i) = map.C * xi + Vec::NullaryExpr(3, [&]() { return std::sqrt(0.1) * N(rng); });
    }
    trials.push_back(tr);
  }
  return trials;
}

}  // namespace

TEST_CASE("linear fit recovers an OU decay rate") {
  ObservationModel map;
  const auto trials = ou_trials(2.0, 20, 20, 3, map);
  FitConfig cfg;
  cfg.variant = DynamicsVariant::Linear;
  cfg.dt = 0.005;
  cfg.outer_iters = 60;
  cfg.freeze_output_map = true;
  const FitResult res = fit(trials, map, cfg);
  CHECK(res.linear.A(0, 0) == doctest::Approx(2.0).epsilon(0.1));
  for (std::size_t i = 1; i < res.report.trace.size(); ++i)
    CHECK(res.report.trace[i] >= res.report.trace[i - 1] - 1e-6 * std::abs(res.report.trace[i - 1]));
}

TEST_CASE("fit is monotone without hyperparameter steps and deterministic") {
  ObservationModel map;
  auto trials = ou_trials(1.0, 4, 15, 9, map);
  FitConfig cfg;
  cfg.variant = DynamicsVariant::Conditioned;
  cfg.num_fixed_points = 1;
  cfg.inducing_per_dim = {5};
  cfg.dt = 0.01;
  cfg.outer_iters = 6;
  cfg.hyperopt.steps = 0;
  cfg.freeze_output_map = true;
  const FitResult a = fit(trials, map, cfg);
  for (std::size_t i = 0; i < a.report.phases.size(); ++i) {
    const auto& ph = a.report.phases[i];
    CHECK(ph.dynamics >= ph.inference - 1e-8 * std::abs(ph.inference));
    if (i > 0) CHECK(ph.inference >= a.report.phases[i - 1].hyperparameters - 1e-8 * std::abs(ph.inference));
  }
  cfg.threads = 3;
  const FitResult b = fit(trials, map, cfg);
  REQUIRE(a.report.trace.size() == b.report.trace.size());
  for (std::size_t i = 0; i < a.report.trace.size(); ++i) CHECK(a.report.trace[i] == b.report.trace[i]);
}

TEST_CASE("fit config validation") {
  FitConfig cfg;
  cfg.dt = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = FitConfig{};
  cfg.latent_dim = 2;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.inducing_per_dim = {3, 3};
  CHECK_NOTHROW(cfg.validate());
  CHECK(parse_variant(to_string(DynamicsVariant::SparsePlain)) == DynamicsVariant::SparsePlain);
  CHECK_THROWS_AS(parse_variant("bogus"), InvalidArgument);
}
