#include "stochlift/metrics.hpp"

#include "stochlift/error.hpp"
#include "stochlift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stochlift {

namespace {

double sqdist(const double* a, const double* b, Eigen::Index n) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

std::vector<double> sorted(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double w2_1d(std::span<const double> a, std::span<const double> b) {
  require(!a.empty(), ErrorCode::invalid_argument, "w2_1d needs at least one sample");
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << "w2_1d needs equal sizes (got " << a.size() << " and " << b.size()
       << "); use the quantile variant for unequal sizes";
    fail(ErrorCode::dimension_mismatch, os.str());
  }
  const auto sa = sorted(a);
  const auto sb = sorted(b);
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(sa.size()));
}

double w2_1d_quantile(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), ErrorCode::invalid_argument, "w2_1d_quantile needs nonempty samples");
  if (a.size() == b.size()) return w2_1d(a, b);
  const auto sa = sorted(a);
  const auto sb = sorted(b);
  const auto na = sa.size();
  const auto nb = sb.size();
  // Quantile levels are multiples of 1/(na nb); walk them in integer units.
  std::size_t i = 0, j = 0, prev = 0;
  double s = 0.0;
  while (i < na && j < nb) {
    const std::size_t ea = (i + 1) * nb;
    const std::size_t eb = (j + 1) * na;
    const std::size_t next = std::min(ea, eb);
    const double d = sa[i] - sb[j];
    s += static_cast<double>(next - prev) * d * d;
    prev = next;
    if (ea == next) ++i;
    if (eb == next) ++j;
  }
  return std::sqrt(s / static_cast<double>(na * nb));
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  require(cost.rows() == cost.cols(), ErrorCode::dimension_mismatch, "assignment needs a square cost matrix");
  require(cost.allFinite(), ErrorCode::non_finite, "assignment cost must be finite");
  const auto n = static_cast<std::size_t>(cost.rows());
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting paths with row/column potentials, 1-based with a
  // virtual column 0.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

namespace {

double w2_exact_impl(const Matrix& a, const Matrix& b, bool parallel) {
  require(a.rows() >= 1, ErrorCode::invalid_argument, "w2_exact needs at least one point");
  require(a.rows() == b.rows(), ErrorCode::dimension_mismatch, "w2_exact needs equal cloud sizes");
  require(a.cols() == b.cols(), ErrorCode::dimension_mismatch, "w2_exact needs equal point dimensions");
  if (static_cast<std::size_t>(a.rows()) > kExactW2Limit) {
    std::ostringstream os;
    os << "w2_exact is limited to " << kExactW2Limit << " points (got " << a.rows() << "); use w2_sliced";
    fail(ErrorCode::invalid_argument, os.str());
  }
  const Eigen::Index N = a.rows();
  const Eigen::Index d = a.cols();
  Matrix cost(N, N);
#pragma omp parallel for schedule(static) if (parallel)
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < N; ++j) cost(i, j) = sqdist(a.row(i).data(), b.row(j).data(), d);
  }
  const auto sigma = solve_assignment(cost);
  double s = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) s += cost(i, static_cast<Eigen::Index>(sigma[static_cast<std::size_t>(i)]));
  return std::sqrt(std::max(0.0, s) / static_cast<double>(N));
}

}  // namespace

double w2_exact(const Matrix& a, const Matrix& b) { return w2_exact_impl(a, b, true); }
double w2_exact_serial(const Matrix& a, const Matrix& b) { return w2_exact_impl(a, b, false); }

namespace {

Vector direction(Eigen::Index d, std::uint64_t seed, int k) {
  Rng rng(derive_seed(seed, stream::projections, static_cast<std::uint64_t>(k)));
  Vector u(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Eigen::Index c = 0; c < d; ++c) u(c) = rng.normal();
    norm = u.norm();
  }
  return u / norm;
}

double projected_w2_sq(const Matrix& a, const Matrix& b, const Vector& u) {
  std::vector<double> pa(static_cast<std::size_t>(a.rows())), pb(static_cast<std::size_t>(b.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) pa[static_cast<std::size_t>(i)] = a.row(i).dot(u.transpose());
  for (Eigen::Index i = 0; i < b.rows(); ++i) pb[static_cast<std::size_t>(i)] = b.row(i).dot(u.transpose());
  const double w = w2_1d_quantile(pa, pb);
  return w * w;
}

void check_sliced(const Matrix& a, const Matrix& b, int n_proj) {
  require(a.rows() >= 1 && b.rows() >= 1, ErrorCode::invalid_argument, "w2_sliced needs nonempty clouds");
  require(a.cols() == b.cols(), ErrorCode::dimension_mismatch, "w2_sliced needs equal point dimensions");
  require(n_proj >= 1, ErrorCode::invalid_argument, "n_proj must be >= 1");
}

}  // namespace

double w2_sliced(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed) {
  check_sliced(a, b, n_proj);
  std::vector<double> parts(static_cast<std::size_t>(n_proj));
#pragma omp parallel for schedule(static)
  for (int k = 0; k < n_proj; ++k) {
    parts[static_cast<std::size_t>(k)] = projected_w2_sq(a, b, direction(a.cols(), seed, k));
  }
  double s = 0.0;
  for (double v : parts) s += v;
  return std::sqrt(s / n_proj);
}

double w2_sliced_serial(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed) {
  check_sliced(a, b, n_proj);
  double s = 0.0;
  for (int k = 0; k < n_proj; ++k) s += projected_w2_sq(a, b, direction(a.cols(), seed, k));
  return std::sqrt(s / n_proj);
}

double w2_auto(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed, bool* exact) {
  const bool use_exact = a.rows() == b.rows() && static_cast<std::size_t>(a.rows()) <= kExactW2Limit;
  if (exact) *exact = use_exact;
  return use_exact ? w2_exact(a, b) : w2_sliced(a, b, n_proj, seed);
}

// ---- Lipschitz ---------------------------------------------------------------

namespace {

void check_lipschitz(const LiftedDataset& data) {
  data.validate();
  require(data.size() >= 2, ErrorCode::invalid_argument, "lipschitz_constant needs at least 2 records");
  if (data.size() > kLipschitzLimit) {
    std::ostringstream os;
    os << "lipschitz_constant is limited to " << kLipschitzLimit << " records (got " << data.size() << ")";
    fail(ErrorCode::invalid_argument, os.str());
  }
}

struct PairBest {
  double value = 0.0;
  std::size_t j = 0;
  bool degenerate = false;
};

PairBest best_partner(const LiftedDataset& data, std::size_t i) {
  const auto ii = static_cast<Eigen::Index>(i);
  const Eigen::Index nx = data.inputs.cols();
  const Eigen::Index nl = data.labels.cols();
  const Eigen::Index ny = data.targets.cols();
  PairBest best;
  best.j = i + 1;
  for (std::size_t j = i + 1; j < data.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double dy = std::sqrt(sqdist(data.targets.row(ii).data(), data.targets.row(jj).data(), ny));
    const double dx2 = sqdist(data.inputs.row(ii).data(), data.inputs.row(jj).data(), nx);
    const double dl2 = sqdist(data.labels.row(ii).data(), data.labels.row(jj).data(), nl);
    const double den = std::sqrt(dx2 + dl2);
    if (den == 0.0) {
      if (dy == 0.0) continue;
      best.degenerate = true;
      best.j = j;
      return best;
    }
    const double r = dy / den;
    if (r > best.value) {
      best.value = r;
      best.j = j;
    }
  }
  return best;
}

[[noreturn]] void degenerate_pair(std::size_t i, std::size_t j) {
  std::ostringstream os;
  os << "records " << i << " and " << j << " share (x, xi) but differ in y; labels are not injective";
  fail(ErrorCode::singular, os.str());
}

}  // namespace

LipschitzResult lipschitz_constant(const LiftedDataset& data) {
  check_lipschitz(data);
  const auto N = static_cast<long>(data.size());
  std::vector<PairBest> rows(data.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < N - 1; ++i) rows[static_cast<std::size_t>(i)] = best_partner(data, static_cast<std::size_t>(i));
  LipschitzResult out{0.0, 0, 1};
  for (std::size_t i = 0; i + 1 < data.size(); ++i) {
    if (rows[i].degenerate) degenerate_pair(i, rows[i].j);
    if (rows[i].value > out.value) out = {rows[i].value, i, rows[i].j};
  }
  return out;
}

LipschitzResult lipschitz_constant_serial(const LiftedDataset& data) {
  check_lipschitz(data);
  LipschitzResult out{0.0, 0, 1};
  for (std::size_t i = 0; i + 1 < data.size(); ++i) {
    const auto b = best_partner(data, i);
    if (b.degenerate) degenerate_pair(i, b.j);
    if (b.value > out.value) out = {b.value, i, b.j};
  }
  return out;
}

double max_target_gap(const LiftedDataset& data) {
  data.validate();
  const Eigen::Index N = data.targets.rows();
  const Eigen::Index ny = data.targets.cols();
  double best = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i + 1; j < N; ++j) {
      best = std::max(best, std::sqrt(sqdist(data.targets.row(i).data(), data.targets.row(j).data(), ny)));
    }
  }
  return best;
}

double min_label_gap(const Matrix& labels) {
  require(labels.rows() >= 2, ErrorCode::invalid_argument, "min_label_gap needs at least 2 labels");
  const Eigen::Index N = labels.rows();
  const Eigen::Index d = labels.cols();
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index j = i + 1; j < N; ++j) {
      best = std::min(best, std::sqrt(sqdist(labels.row(i).data(), labels.row(j).data(), d)));
    }
  }
  return best;
}

// ---- physics -----------------------------------------------------------------

std::vector<std::size_t> RegionSpec::resolve(std::size_t n) const {
  require(std::isfinite(threshold), ErrorCode::invalid_argument, "region threshold must be finite");
  if (kind == Kind::index_set) {
    require(!indices.empty(), ErrorCode::invalid_argument, "region index set is empty");
    for (auto k : indices) {
      require(k < n, ErrorCode::invalid_argument, "region index out of range");
    }
    return indices;
  }
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  require(g * g == n && g >= 1, ErrorCode::invalid_argument,
          "boundary_cells region needs a square grid state");
  std::vector<std::size_t> out;
  for (std::size_t iy = 0; iy < g; ++iy) {
    for (std::size_t ix = 0; ix < g; ++ix) {
      if (iy == 0 || ix == 0 || iy + 1 == g || ix + 1 == g) out.push_back(iy * g + ix);
    }
  }
  return out;
}

RegionSpec boundary_region(const Vector& u0, double fraction) {
  RegionSpec r;
  r.kind = RegionSpec::Kind::boundary_cells;
  r.threshold = fraction * u0.cwiseAbs().maxCoeff();
  return r;
}

std::optional<double> crossing_time(const Trajectory& traj, const RegionSpec& region) {
  const auto cells = region.resolve(traj.dim());
  const auto T = static_cast<Eigen::Index>(traj.length());
  require(T >= 1, ErrorCode::invalid_argument, "empty trajectory");
  for (Eigen::Index t = 0; t < T; ++t) {
    for (auto k : cells) {
      if (traj.states(t, static_cast<Eigen::Index>(k)) > region.threshold) {
        return T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
      }
    }
  }
  return std::nullopt;
}

WctResult wct(const TrajectorySet& truth, const TrajectorySet& generated, const RegionSpec& region) {
  require(truth.size() >= 1 && generated.size() >= 1, ErrorCode::invalid_argument, "wct needs nonempty sets");
  WctResult out;
  auto times = [&region](const TrajectorySet& set, std::size_t& never) {
    std::vector<double> v;
    v.reserve(set.size());
    for (const auto& tr : set.trajectories) {
      const auto c = crossing_time(tr, region);
      if (!c) ++never;
      v.push_back(c.value_or(1.0));
    }
    return v;
  };
  const auto a = times(truth, out.never_true);
  const auto b = times(generated, out.never_generated);
  require(out.never_true < truth.size(), ErrorCode::precondition,
          "no reference trajectory crosses the threshold; WCT is undefined");
  require(out.never_generated < generated.size(), ErrorCode::precondition,
          "no generated trajectory crosses the threshold; WCT is undefined");
  out.value = w2_1d_quantile(a, b);
  return out;
}

double integrated_mass(std::span<const double> state) {
  require(!state.empty(), ErrorCode::invalid_argument, "empty state");
  double s = 0.0;
  for (double v : state) s += std::abs(v);
  return s / static_cast<double>(state.size());
}

double wim(const TrajectorySet& truth, const TrajectorySet& generated) {
  require(truth.size() >= 1 && generated.size() >= 1, ErrorCode::invalid_argument, "wim needs nonempty sets");
  require(truth.length() == generated.length(), ErrorCode::dimension_mismatch, "wim needs equal trajectory lengths");
  require(truth.dim() == generated.dim(), ErrorCode::dimension_mismatch, "wim needs equal state dimensions");
  const auto T = truth.length();
  const auto n = static_cast<std::size_t>(truth.dim());
  auto masses = [n](const TrajectorySet& set, std::size_t t) {
    std::vector<double> v;
    v.reserve(set.size());
    for (const auto& tr : set.trajectories) {
      v.push_back(integrated_mass({tr.states.row(static_cast<Eigen::Index>(t)).data(), n}));
    }
    return v;
  };
  double s = 0.0;
  for (std::size_t t = 0; t < T; ++t) s += w2_1d_quantile(masses(truth, t), masses(generated, t));
  return s / static_cast<double>(T);
}

}  // namespace stochlift
