#include "doctest.h"

#include <random>

#include "lsde/numerics.hpp"

using namespace lsde;

TEST_CASE("gauss_legendre basic rules") {
  auto q1 = gauss_legendre(1, -1.0, 1.0);
  CHECK(q1.nodes[0] == doctest::Approx(0.0));
  CHECK(q1.weights[0] == doctest::Approx(2.0));

  auto q2 = gauss_legendre(2, -1.0, 1.0);
  CHECK(q2.nodes[0] == doctest::Approx(-0.5773502692).epsilon(1e-10));
  CHECK(q2.nodes[1] == doctest::Approx(0.5773502692).epsilon(1e-10));
  CHECK(q2.weights[0] == doctest::Approx(1.0));
  CHECK(q2.weights[1] == doctest::Approx(1.0));
  double x2 = 0.0;
  for (int i = 0; i < 2; ++i) x2 += q2.weights[i] * q2.nodes[i] * q2.nodes[i];
  CHECK(x2 == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  auto q5 = gauss_legendre(5, 0.0, 1.0);
  double x4 = 0.0;
  for (int i = 0; i < 5; ++i) x4 += q5.weights[i] * std::pow(q5.nodes[i], 4);
  CHECK(std::abs(x4 - 0.2) < 1e-12);
}

TEST_CASE("gauss_legendre exact up to degree 2n-1") {
  for (std::size_t n : {1u, 2u, 3u, 7u, 20u, 64u}) {
    const double a = -0.3, b = 1.7;
    auto q = gauss_legendre(n, a, b);
    double wsum = 0.0;
    for (double w : q.weights) {
      CHECK(w > 0.0);
      wsum += w;
    }
    CHECK(wsum == doctest::Approx(b - a).epsilon(1e-13));
    for (std::size_t p = 0; p <= 2 * n - 1; ++p) {
      double num = 0.0;
      for (std::size_t i = 0; i < n; ++i) num += q.weights[i] * std::pow(q.nodes[i], static_cast<double>(p));
      const double exact = (std::pow(b, p + 1.0) - std::pow(a, p + 1.0)) / (p + 1.0);
      CHECK(std::abs(num - exact) <= 1e-10 * std::max(1.0, std::abs(exact)));
    }
  }
}

TEST_CASE("gauss_legendre rejects bad input") {
  CHECK_THROWS_AS(gauss_legendre(0, 0.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(gauss_legendre(3, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("TimeGrid rounds and snaps") {
  TimeGrid g(0.0, 1.0004, 0.001);
  CHECK(g.steps() == 1000);
  CHECK(g.t_end() == doctest::Approx(1.0));
  CHECK(g.nearest_index(0.00049) == 0);
  CHECK(g.nearest_index(0.0151) == 15);
  CHECK_THROWS_AS(g.nearest_index(1.5), OutOfRange);
  CHECK_THROWS_AS(TimeGrid(0.0, 1.0, 0.0), InvalidArgument);
  CHECK_THROWS_AS(TimeGrid(1.0, 0.0, 0.1), InvalidArgument);
}

TEST_CASE("interp_linear properties") {
  TimeGrid g(0.5, 2.5, 0.25);
  std::vector<Vec> vals;
  for (std::size_t r = 0; r < g.size(); ++r) {
    Vec v(2);
    v << 3.0 * g.time(r) - 1.0, -0.5 * g.time(r) + 2.0;
    vals.push_back(v);
  }
  for (std::size_t r = 0; r < g.size(); ++r) CHECK((interp_linear(g, vals, g.time(r)) - vals[r]).norm() == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.5, 2.5);
  for (int i = 0; i < 100; ++i) {
    const double t = U(rng);
    Vec v = interp_linear(g, vals, t);
    CHECK(std::abs(v[0] - (3.0 * t - 1.0)) <= 1e-12);
    CHECK(std::abs(v[1] - (-0.5 * t + 2.0)) <= 1e-12);
  }
  Vec mid = interp_linear(g, vals, 0.625);
  CHECK((mid - 0.5 * (vals[0] + vals[1])).norm() < 1e-14);
  std::vector<Mat> cst(g.size(), Mat::Constant(2, 2, 4.2));
  CHECK((interp_linear(g, cst, 1.13) - cst[0]).norm() < 1e-14);
  CHECK_THROWS_AS(interp_linear(g, vals, 2.6), OutOfRange);
  CHECK_THROWS_AS(interp_linear(g, vals, 0.4), OutOfRange);
}

TEST_CASE("psd_solve examples") {
  Vec b(2);
  b << 1.5, -2.0;
  CHECK((psd_solve(Mat::Identity(2, 2), b) - b).norm() == 0.0);
  Mat d2 = 2.0 * Mat::Identity(2, 2);
  Vec r(2);
  r << 2.0, 4.0;
  Mat x = psd_solve(d2, r);
  CHECK(x(0, 0) == doctest::Approx(1.0));
  CHECK(x(1, 0) == doctest::Approx(2.0));

  Mat sing(2, 2);
  sing << 1.0, 1.0, 1.0, 1.0;
  Mat xs = psd_solve(sing, r, 1e-6);
  // closed-form inverse of [[1+j, 1], [1, 1+j]]
  const double j = 1e-6;
  const double det = (1 + j) * (1 + j) - 1.0;
  Vec expect(2);
  expect << ((1 + j) * 2.0 - 4.0) / det, (-2.0 + (1 + j) * 4.0) / det;
  CHECK(xs.allFinite());
  CHECK((xs.col(0) - expect).norm() <= 1e-6 * expect.norm());

  Mat asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(psd_solve(asym, r), InvalidArgument);
}

TEST_CASE("psd_solve recovers X for well-conditioned matrices") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 6;
    Mat Q = Mat::NullaryExpr(n, n, [&]() { return N(rng); });
    Eigen::HouseholderQR<Mat> qr(Q);
    Mat U = qr.householderQ();
    Vec ev = Vec::LinSpaced(n, 0.0, 6.0).unaryExpr([](double e) { return std::pow(10.0, -e); });
    Mat M = U * ev.asDiagonal() * U.transpose();
    M = symmetrize(M);
    Mat X = Mat::NullaryExpr(n, 3, [&]() { return N(rng); });
    Mat Xh = psd_solve(M, M * X);
    CHECK((Xh - X).norm() / X.norm() <= 1e-8);
  }
}

TEST_CASE("PsdFactor escalates jitter and reports failure") {
  Mat neg = -Mat::Identity(2, 2);
  try {
    PsdFactor f(neg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.jitter() > 0.0);
  }
  Mat near(2, 2);
  near << 1.0, 1.0, 1.0, 1.0;
  PsdFactor f(near);
  CHECK(f.jitter() > 0.0);
}

TEST_CASE("clip_psd floors negative eigenvalues") {
  Mat a(2, 2);
  a << 1.0, 2.0, 2.0, 1.0;
  CHECK(clip_psd(a));
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  CHECK(es.eigenvalues().minCoeff() >= -1e-14);
  Mat b = Mat::Identity(2, 2);
  CHECK_FALSE(clip_psd(b));
}
