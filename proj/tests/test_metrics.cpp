#include <doctest.h>

#include "oracles.hpp"

#include "stochlift/datagen.hpp"
#include "stochlift/error.hpp"
#include "stochlift/lifting.hpp"
#include "stochlift/metrics.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace stochlift;
using testing::Gen;

namespace {

LiftedDataset records(const Matrix& X, const Matrix& L, const Matrix& Y) {
  LiftedDataset d;
  d.inputs = X;
  d.labels = L;
  d.targets = Y;
  d.trajectory.assign(static_cast<std::size_t>(X.rows()), 0);
  d.time.assign(static_cast<std::size_t>(X.rows()), 0);
  return d;
}

// One scalar field per trajectory over T frames on a g x g grid.
Trajectory field(long T, long g, double fill = 0.0) {
  return {Matrix::Constant(T, g * g, fill), 1.0, 0.0};
}

std::vector<double> col(const Matrix& m) { return {m.data(), m.data() + m.size()}; }

}  // namespace

// ---- W2 ------------------------------------------------------------------------

TEST_CASE("w2_1d hand examples") {
  const std::vector<double> a{0.3, -1.0, 2.0};
  CHECK(w2_1d(a, a) == 0.0);
  CHECK(w2_1d(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
  CHECK(w2_1d(std::vector<double>{0.0, 1.0}, std::vector<double>{5.0, 2.0}) ==
        doctest::Approx(std::sqrt(10.0)).epsilon(1e-15));
  CHECK_THROWS_AS(w2_1d(std::vector<double>{0.0}, std::vector<double>{1.0, 2.0}), Error);
  CHECK_THROWS_AS(w2_1d(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("w2_1d_quantile handles unequal sizes and agrees on equal ones") {
  CHECK(w2_1d_quantile(std::vector<double>{0.0}, std::vector<double>{1.0, 1.0}) == doctest::Approx(1.0));
  // Exact: pieces [0,1/4):0-0, [1/4,1/2):0-1, [1/2,3/4):1-2, [3/4,1):1-3 -> (0+1+1+4)/4.
  CHECK(w2_1d_quantile(std::vector<double>{1.0, 0.0}, std::vector<double>{3.0, 1.0, 2.0, 0.0}) ==
        doctest::Approx(std::sqrt(6.0 / 4.0)).epsilon(1e-14));
  Gen gen(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = col(gen.matrix(17, 1)), b = col(gen.matrix(17, 1));
    CHECK(w2_1d_quantile(a, b) == doctest::Approx(w2_1d(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("assignment solver matches brute force") {
  Gen gen(2);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = gen.integer(1, 6);
    const Matrix cost = gen.matrix(n, n).cwiseAbs();
    const auto sol = solve_assignment(cost);
    double got = 0.0;
    for (int i = 0; i < n; ++i) got += cost(i, static_cast<long>(sol[static_cast<std::size_t>(i)]));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += cost(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
    std::vector<std::size_t> sorted = sol;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == static_cast<std::size_t>(i));
  }
}

TEST_CASE("w2_exact equals brute force over permutations") {
  Gen gen(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen.integer(1, 6), d = gen.integer(1, 3);
    const Matrix a = gen.matrix(n, d), b = gen.matrix(n, d);
    CHECK(std::abs(w2_exact(a, b) - testing::w2_bruteforce(a, b)) <= 1e-12);
  }
  const Matrix a = gen.matrix(4, 2), b = gen.matrix(4, 2);
  CHECK(std::abs(w2_exact(a, b) - testing::w2_bruteforce(a, b)) <= 1e-12);
}

TEST_CASE("w2_exact: parallel cost matrix equals the serial path") {
  Gen gen(31);
  const Matrix a = gen.matrix(200, 3), b = gen.matrix(200, 3);
  const double s = w2_exact_serial(a, b);
  CHECK(w2_exact(a, b) == s);
  testing::ThreadScope scope(4);
  CHECK(w2_exact(a, b) == s);
}

TEST_CASE("w2_exact: identity, 1-D consistency, guard") {
  Gen gen(4);
  const Matrix a = gen.matrix(50, 3);
  CHECK(w2_exact(a, a) == 0.0);
  const Matrix x = gen.matrix(40, 1), y = gen.matrix(40, 1);
  CHECK(std::abs(w2_exact(x, y) - w2_1d(col(x), col(y))) <= 1e-10);
  const Matrix big = Matrix::Zero(static_cast<long>(kExactW2Limit) + 1, 1);
  try {
    (void)w2_exact(big, big);
    FAIL("expected guard");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("w2_sliced") != std::string::npos);
  }
  CHECK_THROWS_AS(w2_exact(gen.matrix(3, 2), gen.matrix(4, 2)), Error);
}

TEST_CASE("w2_exact: metric axioms on random clouds") {
  Gen gen(5);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = gen.integer(2, 30), d = gen.integer(1, 4);
    const Matrix a = gen.matrix(n, d), b = gen.matrix(n, d, 2.0), c = gen.matrix(n, d, 0.5);
    const double ab = w2_exact(a, b), ba = w2_exact(b, a);
    CHECK(std::abs(ab - ba) <= 1e-12);
    CHECK(w2_exact(a, c) <= ab + w2_exact(b, c) + 1e-9);
  }
}

TEST_CASE("w2_exact: linear pushforward contracts by the operator norm") {
  Gen gen(6);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = gen.integer(2, 25), d = gen.integer(1, 4), k = gen.integer(1, 4);
    const Matrix A = gen.matrix(k, d);
    const double L = Eigen::JacobiSVD<Eigen::MatrixXd>(A).singularValues()(0);
    const Matrix a = gen.matrix(n, d), b = gen.matrix(n, d);
    const Matrix fa = a * A.transpose(), fb = b * A.transpose();
    CHECK(w2_exact(fa, fb) <= L * w2_exact(a, b) + 1e-9);
  }
}

TEST_CASE("w2_sliced: lower bound, identity, determinism, serial agreement") {
  Gen gen(7);
  for (int trial = 0; trial < 15; ++trial) {
    const int n = gen.integer(2, 256), d = gen.integer(1, 5);
    const Matrix a = gen.matrix(n, d), b = gen.matrix(n, d, 1.5);
    const auto seed = static_cast<std::uint64_t>(trial);
    const double s = w2_sliced(a, b, 64, seed);
    CHECK(s <= w2_exact(a, b) + 1e-10);
    CHECK(w2_sliced(a, a, 16, seed) == 0.0);
    CHECK(s == w2_sliced(a, b, 64, seed));
    CHECK(s == w2_sliced_serial(a, b, 64, seed));
    testing::ThreadScope scope(3);
    CHECK(s == w2_sliced(a, b, 64, seed));
  }
  CHECK_THROWS_AS(w2_sliced(gen.matrix(3, 2), gen.matrix(3, 2), 0, 1), Error);
}

TEST_CASE("w2_sliced: shifted Gaussian clouds match the projected mean gap") {
  // Equal covariances: each projected W2^2 approaches (delta . u)^2, whose mean
  // over the sphere is |delta|^2 / d.
  Gen gen(8);
  const int n = 4000, d = 3;
  const double gap = 2.0;
  Matrix a = gen.matrix(n, d), b = gen.matrix(n, d);
  b.col(0).array() += gap;
  // Monte Carlo over our own directions, using the finite-sample shift exactly.
  double mc = 0.0;
  const int dirs = 20000;
  for (int k = 0; k < dirs; ++k) {
    Vector u = gen.vector(d);
    u.normalize();
    mc += u(0) * u(0) * gap * gap;
  }
  mc /= dirs;
  CHECK(mc == doctest::Approx(gap * gap / d).epsilon(0.03));
  const double s = w2_sliced(a, b, 2048, 3);
  CHECK(s * s == doctest::Approx(mc).epsilon(0.08));
}

TEST_CASE("w2_auto picks exact for small equal clouds") {
  Gen gen(9);
  bool exact = false;
  const Matrix a = gen.matrix(10, 2), b = gen.matrix(10, 2);
  CHECK(w2_auto(a, b, 32, 1, &exact) == w2_exact(a, b));
  CHECK(exact);
  (void)w2_auto(a, gen.matrix(11, 2), 32, 1, &exact);
  CHECK_FALSE(exact);
}

// ---- Lipschitz ---------------------------------------------------------------

TEST_CASE("lipschitz: hand examples") {
  Matrix X(2, 1), L(2, 1), Y(2, 1);
  X << 0.0, 0.0;
  L << 0.0, 1.0;
  Y << 1.0, 1.0;
  CHECK(lipschitz_constant(records(X, L, Y)).value == 0.0);
  Y << 0.0, 3.0;
  const auto r = lipschitz_constant(records(X, L, Y));
  CHECK(r.value == 3.0);
  CHECK(r.i == 0);
  CHECK(r.j == 1);
}

TEST_CASE("lipschitz: independent double loop and serial path agree") {
  Gen gen(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix X = gen.matrix(50, 2), L = gen.matrix(50, 4), Y = gen.matrix(50, 2);
    const auto data = records(X, L, Y);
    const auto par = lipschitz_constant(data);
    const auto ser = lipschitz_constant_serial(data);
    CHECK(std::abs(par.value - testing::lipschitz_bruteforce(X, L, Y)) <= 1e-12);
    CHECK(par.value == ser.value);
    CHECK(par.i == ser.i);
    CHECK(par.j == ser.j);
    const double at = (Y.row(static_cast<long>(par.i)) - Y.row(static_cast<long>(par.j))).norm();
    CHECK(at > 0.0);
  }
}

TEST_CASE("lipschitz: bounded by max target gap over min label gap") {
  Gen gen(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix X = gen.matrix(40, 2), Y = gen.matrix(40, 2);
    const Matrix L = draw_labels(40, 32, LabelLaw::sphere, static_cast<std::uint64_t>(trial));
    const auto data = records(X, L, Y);
    CHECK(lipschitz_constant(data).value <= max_target_gap(data) / min_label_gap(L));
  }
}

TEST_CASE("lipschitz: repeated input with different targets is singular") {
  Matrix X(3, 1), L(3, 1), Y(3, 1);
  X << 0.0, 0.0, 1.0;
  L << 0.5, 0.5, 0.0;
  Y << 0.0, 1.0, 0.0;
  try {
    (void)lipschitz_constant(records(X, L, Y));
    FAIL("expected singular");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::singular);
  }
  Y << 1.0, 1.0, 0.0;
  CHECK(lipschitz_constant(records(X, L, Y)).value > 0.0);
  CHECK_THROWS_AS(lipschitz_constant(records(X.topRows(1), L.topRows(1), Y.topRows(1))), Error);
}

TEST_CASE("lipschitz: larger label dimension separates Duffing records more") {
  DuffingConfig dc;
  dc.n_traj = 8;
  auto set = subsample(normalize(simulate_duffing(dc, 1)), 4);
  std::vector<double> small, large;
  for (std::uint64_t s = 0; s < 20; ++s) {
    small.push_back(lipschitz_constant(lift(set, 16, 1, LabelLaw::gaussian, s)).value);
    large.push_back(lipschitz_constant(lift(set, 1024, 1, LabelLaw::gaussian, s)).value);
  }
  auto median = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + 10, v.end());
    return v[10];
  };
  CHECK(median(large) < median(small));
}

TEST_CASE("min_label_gap examples") {
  Matrix e = Matrix::Identity(2, 2);
  CHECK(min_label_gap(e) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  Matrix dup(2, 3);
  dup << 1, 2, 3, 1, 2, 3;
  CHECK(min_label_gap(dup) == 0.0);
  int ok = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    if (min_label_gap(draw_labels(100, 512, LabelLaw::sphere, s)) >= std::sqrt(2.0) * 0.8) ++ok;
  }
  CHECK(ok >= 48);
}

// ---- physics metrics ---------------------------------------------------------

TEST_CASE("region resolution") {
  RegionSpec r;
  const auto cells = r.resolve(16);
  CHECK(cells == std::vector<std::size_t>{0, 1, 2, 3, 4, 7, 8, 11, 12, 13, 14, 15});
  CHECK_THROWS_AS(r.resolve(15), Error);
  r.kind = RegionSpec::Kind::index_set;
  r.indices = {5};
  CHECK(r.resolve(16) == std::vector<std::size_t>{5});
  r.indices = {16};
  CHECK_THROWS_AS(r.resolve(16), Error);
  r.indices = {};
  CHECK_THROWS_AS(r.resolve(16), Error);
  Vector u0(3);
  u0 << 0.5, -2.0, 1.0;
  CHECK(boundary_region(u0, 0.1).threshold == doctest::Approx(0.2));
}

TEST_CASE("crossing time examples") {
  RegionSpec r;
  r.threshold = 0.5;
  Trajectory tr = field(21, 3, 0.0);
  tr.states(0, 0) = 0.7;
  CHECK(crossing_time(tr, r) == 0.0);
  r.threshold = 10.0;
  CHECK_FALSE(crossing_time(tr, r).has_value());
  // Interior cell never counts.
  Trajectory inner = field(21, 3, 0.0);
  inner.states.col(4).setConstant(5.0);
  r.threshold = 1.0;
  CHECK_FALSE(crossing_time(inner, r).has_value());
  // Ramp at a boundary cell.
  Trajectory ramp = field(21, 3, 0.0);
  for (long t = 0; t < 21; ++t) ramp.states(t, 1) = static_cast<double>(t) / 20.0;
  r.threshold = 0.5;
  const double c = crossing_time(ramp, r).value();
  CHECK(std::abs(c - 0.5) <= 1.0 / 20.0 + 1e-12);
}

TEST_CASE("wct: identity, translation, never handling") {
  RegionSpec r;
  r.threshold = 0.5;
  TrajectorySet truth, gen;
  for (long k = 1; k <= 5; ++k) {
    Trajectory a = field(11, 2), b = field(11, 2);
    a.states.bottomRows(11 - k).setConstant(1.0);
    b.states.bottomRows(10 - k).setConstant(1.0);
    truth.trajectories.push_back(a);
    gen.trajectories.push_back(b);
  }
  CHECK(wct(truth, truth, r).value == 0.0);
  CHECK(wct(truth, gen, r).value == doctest::Approx(0.1).epsilon(1e-12));

  TrajectorySet with_never = gen;
  with_never.trajectories.push_back(field(11, 2));
  TrajectorySet truth6 = truth;
  truth6.trajectories.push_back(field(11, 2));
  truth6.trajectories.back().states.bottomRows(1).setConstant(1.0);
  const auto res = wct(truth6, with_never, r);
  CHECK(res.never_generated == 1);
  CHECK(res.never_true == 0);

  TrajectorySet silent;
  silent.trajectories.push_back(field(11, 2));
  try {
    (void)wct(truth, silent, r);
    FAIL("expected precondition");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::precondition);
  }
  CHECK_THROWS_AS(wct(silent, truth, r), Error);
}

TEST_CASE("integrated mass and wim") {
  CHECK(integrated_mass(std::vector<double>(7, 1.0)) == 1.0);
  CHECK(integrated_mass(std::vector<double>{-1.0, 3.0}) == 2.0);
  Gen gen(12);
  TrajectorySet a, b;
  for (int i = 0; i < 6; ++i) {
    Trajectory t{gen.matrix(5, 4).cwiseAbs(), 1.0, 0.0};
    a.trajectories.push_back(t);
    t.states *= 2.0;
    b.trajectories.push_back(t);
  }
  CHECK(wim(a, a) == 0.0);
  double direct = 0.0;
  for (long t = 0; t < 5; ++t) {
    std::vector<double> ma, mb;
    for (int i = 0; i < 6; ++i) {
      ma.push_back(a.trajectories[static_cast<std::size_t>(i)].states.row(t).cwiseAbs().sum() / 4.0);
      mb.push_back(2.0 * ma.back());
    }
    std::sort(ma.begin(), ma.end());
    std::sort(mb.begin(), mb.end());
    double s = 0.0;
    for (int i = 0; i < 6; ++i) s += (ma[static_cast<std::size_t>(i)] - mb[static_cast<std::size_t>(i)]) *
                                     (ma[static_cast<std::size_t>(i)] - mb[static_cast<std::size_t>(i)]);
    direct += std::sqrt(s / 6.0);
  }
  CHECK(wim(a, b) == doctest::Approx(direct / 5.0).epsilon(1e-13));
  TrajectorySet shorter;
  shorter.trajectories.push_back({gen.matrix(4, 4), 1.0, 0.0});
  CHECK_THROWS_AS(wim(a, shorter), Error);
}
