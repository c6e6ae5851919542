#include <doctest.h>

#include "oracles.hpp"

#include "stochlift/datagen.hpp"
#include "stochlift/error.hpp"
#include "stochlift/lifting.hpp"
#include "stochlift/metrics.hpp"
#include "stochlift/theory.hpp"

#include <cmath>
#include <vector>

using namespace stochlift;
using testing::bitwise_equal;
using testing::Gen;

namespace {

LiftedDataset records(const Matrix& X, const Matrix& L, const Matrix& Y) {
  LiftedDataset d;
  d.inputs = X;
  d.labels = L;
  d.targets = Y;
  d.trajectory.assign(static_cast<std::size_t>(X.rows()), 0);
  d.time.assign(static_cast<std::size_t>(X.rows()), 0);
  d.law = LabelLaw::sphere;
  return d;
}

// Frames (t, t+1) of trajectories [first, first + count).
TrajectorySet slice(const TrajectorySet& set, std::size_t first, std::size_t count, std::size_t t) {
  TrajectorySet out;
  out.normalization = set.normalization;
  for (std::size_t i = first; i < first + count; ++i) {
    out.trajectories.push_back({set.trajectories[i].states.middleRows(static_cast<long>(t), 2), 1.0, 0.0});
  }
  return out;
}

TrajectorySet duffing(double noise, int n_traj, std::uint64_t seed) {
  DuffingConfig dc;
  dc.n_traj = n_traj;
  dc.noise = noise;
  return subsample(normalize(simulate_duffing(dc, seed)), 4);
}

TransitionMap as_map(const AffineInterpolant& f) {
  return [&f](const Vector& x, const Vector& xi) { return eval_affine_interpolant(f, x, xi); };
}

}  // namespace

TEST_CASE("interpolant: single anchor and orthonormal labels") {
  Gen gen(1);
  const Matrix one = draw_labels(1, 5, LabelLaw::sphere, 3);
  const auto f1 = build_affine_interpolant(records(gen.matrix(1, 2), one, gen.matrix(1, 2)));
  CHECK(f1.gram_inverse.rows() == 1);
  CHECK(f1.gram_inverse(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

  const Matrix eye = Matrix::Identity(4, 4);
  const auto f = build_affine_interpolant(records(gen.matrix(4, 2), eye, gen.matrix(4, 2)));
  CHECK(bitwise_equal(f.gram_inverse, eye));
  CHECK(f.condition_number == 1.0);
}

TEST_CASE("interpolant: near-identity Gram for wide sphere labels") {
  Gen gen(2);
  int ok = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Matrix L = draw_labels(32, 4096, LabelLaw::sphere, s);
    if (build_affine_interpolant(records(gen.matrix(32, 2), L, gen.matrix(32, 2))).condition_number <= 2.0) ++ok;
  }
  CHECK(ok >= 19);
}

TEST_CASE("interpolant: reproduces every anchor and the baseline off the label span") {
  Gen gen(3);
  const Matrix X = gen.matrix(20, 3), Y = gen.matrix(20, 3);
  const Matrix L = draw_labels(20, 256, LabelLaw::sphere, 4);
  const auto f = build_affine_interpolant(records(X, L, Y));
  CHECK(max_anchor_residual(f) <= 1e-8);
  for (long j = 0; j < 20; ++j) {
    CHECK((eval_affine_interpolant(f, X.row(j).transpose(), L.row(j).transpose()) - Y.row(j).transpose()).norm() <=
          1e-8);
  }
  // Orthonormal anchors in a wider space: e_5 is orthogonal to all of them.
  const Matrix E = Matrix::Identity(4, 6);
  const Matrix X4 = gen.matrix(4, 2), Y4 = gen.matrix(4, 2);
  const auto g = build_affine_interpolant(records(X4, E, Y4));
  const Vector x = gen.vector(2);
  Vector xi = Vector::Zero(6);
  xi(5) = 1.0;
  CHECK(bitwise_equal(Matrix(eval_affine_interpolant(g, x, xi)), Matrix(g.baseline(x))));
}

TEST_CASE("interpolant: affine in the label") {
  Gen gen(4);
  const Matrix X = gen.matrix(10, 2), Y = gen.matrix(10, 2);
  const auto f = build_affine_interpolant(records(X, draw_labels(10, 64, LabelLaw::sphere, 1), Y));
  const Vector x = gen.vector(2);
  const Matrix L = draw_labels(2, 64, LabelLaw::sphere, 9);
  const Vector a = L.row(0).transpose(), b = L.row(1).transpose();
  for (double alpha : {0.0, 0.3, 1.7, -0.4}) {
    const Vector c = alpha * a + (1 - alpha) * b;
    const Vector lhs = eval_affine_interpolant(f, x, c, false);
    const Vector rhs = alpha * eval_affine_interpolant(f, x, a) + (1 - alpha) * eval_affine_interpolant(f, x, b);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS_AS(eval_affine_interpolant(f, x, 2.0 * a), Error);
}

TEST_CASE("interpolant: preconditions") {
  Gen gen(5);
  CHECK_THROWS_AS(build_affine_interpolant(records(gen.matrix(5, 1), draw_labels(5, 4, LabelLaw::sphere, 1),
                                                   gen.matrix(5, 1))),
                  Error);
  CHECK_THROWS_AS(build_affine_interpolant(records(gen.matrix(2, 1), gen.matrix(2, 8), gen.matrix(2, 1))), Error);
  Matrix dup(2, 3);
  dup << 1, 0, 0, 1, 0, 0;
  try {
    (void)build_affine_interpolant(records(gen.matrix(2, 1), dup, gen.matrix(2, 1)));
    FAIL("expected singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::singular);
  }
}

TEST_CASE("knn baseline averages the nearest anchors with index tie-break") {
  Matrix X(4, 1), Y(4, 1);
  X << 0.0, 1.0, 2.0, 3.0;
  Y << 10.0, 20.0, 30.0, 40.0;
  const auto b1 = knn_mean_baseline(X, Y, 1);
  CHECK(b1(Vector::Constant(1, 2.2))(0) == 30.0);
  CHECK(b1(Vector::Constant(1, 0.5))(0) == 10.0);
  const auto b2 = knn_mean_baseline(X, Y, 2);
  CHECK(b2(Vector::Constant(1, 2.9))(0) == 35.0);
  CHECK(knn_mean_baseline(X, Y, 100)(Vector::Constant(1, 0.0))(0) == 25.0);
}

TEST_CASE("bound: closed form against an independent evaluation") {
  // log2 form of the same expression.
  const double delta = 0.1, c = 1.0;
  const double cd = 2.0 * (std::sqrt(2.0 / c) + std::sqrt(std::log2(2.0 / delta) / c));
  const double expect = std::sqrt(2.0 / 2.0) * (1.0 + cd * std::sqrt(std::log(51.0 * 256.0) / 1e6));
  CHECK(c_delta(delta, c) == doctest::Approx(cd).epsilon(1e-14));
  CHECK(prop32_rhs(2, 50, 256, 1000000, delta, c) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("bound: asymptote and monotonicity") {
  const double d_inf = prop32_rhs(3, 10, 8, 1000000000000000ULL, 0.1, 1.0);
  CHECK(d_inf == doctest::Approx(std::sqrt(1.5)).epsilon(1e-6));
  CHECK(prop32_rhs(2, 50, 256, 100000, 0.01, 1.0) > prop32_rhs(2, 50, 256, 100000, 0.1, 1.0));
  double prev = 1e300;
  for (std::size_t d : {20000, 40000, 80000, 160000, 320000}) {
    const double v = prop32_rhs(2, 50, 256, d, 0.1, 1.0);
    CHECK(v < prev);
    prev = v;
  }
  for (std::size_t k : {2, 4, 8, 16}) {
    CHECK(prop32_rhs(k + 1, 50, 256, 100000, 0.1, 1.0) > prop32_rhs(k, 50, 256, 100000, 0.1, 1.0));
    CHECK(prop32_rhs(2, 50, 256 * k, 100000, 0.1, 1.0) > prop32_rhs(2, 50, 128 * k, 100000, 0.1, 1.0));
    CHECK(prop32_rhs(2, 50 * k, 256, 100000, 0.1, 1.0) > prop32_rhs(2, 25 * k, 256, 100000, 0.1, 1.0));
  }
}

TEST_CASE("bound: refuses small label dimensions") {
  try {
    (void)prop32_rhs(2, 50, 256, 64, 0.1, 1.0);
    FAIL("expected precondition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::precondition);
  }
  CHECK_THROWS_AS(prop32_rhs(2, 50, 1, 100000, 0.1, 1.0), Error);
  CHECK_THROWS_AS(c_delta(1.5, 1.0), Error);
  CHECK_THROWS_AS(c_delta(0.1, 0.0), Error);
}

TEST_CASE("fitted constant is the largest one keeping every observation covered") {
  std::vector<LipschitzObservation> obs{{2, 10, 8, 256, 1.3}, {2, 10, 16, 1024, 1.1}, {2, 10, 4, 512, 1.2}};
  const double c = fit_universal_c(obs, 0.1);
  REQUIRE(c > 0.0);
  for (const auto& o : obs) CHECK(o.value <= prop32_rhs(o.n, o.T, o.M, o.d, 0.1, c) * (1 + 1e-9));
  bool violated = false;
  for (const auto& o : obs) {
    const double cd = c_delta(0.1, c * 1.01);
    const double rhs = std::sqrt(o.n / 2.0) * (1 + cd * std::sqrt(std::log((o.T + 1.0) * o.M) / o.d));
    violated = violated || o.value > rhs;
  }
  CHECK(violated);
  // Under sqrt(n/2) every c covers the point, so the top of the range comes back.
  CHECK(fit_universal_c({{2, 10, 8, 256, 0.5}}, 0.1) == doctest::Approx(1e4));
  CHECK(fit_universal_c({{8, 10, 8, 64, 100.0}}, 0.1) == 0.0);
}

TEST_CASE("trend: held-out W2 of the interpolant does not grow with the test size") {
  const auto set = duffing(1.0, 512, 1);
  const auto test = slice(set, 64, 448, 10);
  int decreasing = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto train = lift(slice(set, 0, 64, 10), 4096, 1, LabelLaw::sphere, s);
    const auto f = build_affine_interpolant(train);
    Prop31Options opt;
    opt.seed = s;
    opt.law = LabelLaw::sphere;
    const auto rep = check_prop31_trend(as_map(f), train, test, opt);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].n_test == 64);
    CHECK(rep.train_loss <= 1e-16);
    if (rep.decreasing) ++decreasing;
  }
  CHECK(decreasing >= 7);
}

TEST_CASE("trend: shuffled pairs give a worse interpolant than the true pairs") {
  const auto set = duffing(1.0, 512, 2);
  const auto test = slice(set, 64, 448, 10);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto clean = lift(slice(set, 0, 64, 10), 4096, 1, LabelLaw::sphere, s);
    const auto mixed = shuffle_pairs(clean, 1.0, s + 100);
    const auto fc = build_affine_interpolant(clean);
    const auto fm = build_affine_interpolant(mixed);
    Prop31Options opt;
    opt.seed = s;
    opt.law = LabelLaw::sphere;
    opt.test_sizes = {256};
    const double wc = check_prop31_trend(as_map(fc), clean, test, opt).rows[0].w2;
    const double wm = check_prop31_trend(as_map(fm), mixed, test, opt).rows[0].w2;
    CHECK(wc < wm);
  }
}

TEST_CASE("trend: deterministic dynamics reduce to the pushforward") {
  // With noise 0 and test inputs equal to the anchors, a 1-nearest baseline
  // returns the true next state and only the label cross terms remain. Their
  // mean square is about sum_i ||y_i - y_j||^2 / d, which bounds W2 through
  // the identity coupling.
  const auto set = duffing(0.0, 64, 3);
  const auto data = slice(set, 0, 64, 10);
  const auto train = lift(data, 4096, 1, LabelLaw::sphere, 1);
  const auto f = build_affine_interpolant(train, knn_mean_baseline(train.inputs, train.targets, 1));
  Prop31Options opt;
  opt.law = LabelLaw::sphere;
  opt.test_sizes = {64};
  const double w = check_prop31_trend(as_map(f), train, data, opt).rows[0].w2;
  double floor_sq = 0.0;
  for (long j = 0; j < 64; ++j) {
    floor_sq += (train.targets.rowwise() - train.targets.row(j)).squaredNorm() / 4096.0;
  }
  floor_sq /= 64.0;
  CHECK(w > 0.0);
  CHECK(w <= 1.5 * std::sqrt(floor_sq));
}

TEST_CASE("trend: non-interpolating map is rejected") {
  const auto set = duffing(1.0, 64, 4);
  const auto train = lift(slice(set, 0, 32, 10), 64, 1, LabelLaw::sphere, 1);
  TransitionMap zero = [](const Vector& x, const Vector&) { return Vector(Vector::Zero(x.size())); };
  try {
    (void)check_prop31_trend(zero, train, slice(set, 32, 32, 10), {});
    FAIL("expected precondition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::precondition);
  }
}
