#include "stochlift/theory.hpp"

#include "stochlift/error.hpp"
#include "stochlift/metrics.hpp"
#include "stochlift/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace stochlift {

BaselineMap knn_mean_baseline(const Matrix& inputs, const Matrix& targets, std::size_t k) {
  require(inputs.rows() >= 1 && inputs.rows() == targets.rows(), ErrorCode::dimension_mismatch,
          "baseline needs matching nonempty inputs and targets");
  require(k >= 1, ErrorCode::invalid_argument, "k must be >= 1");
  const auto kk = std::min<std::size_t>(k, static_cast<std::size_t>(inputs.rows()));
  return [inputs, targets, kk](const Vector& x) -> Vector {
    require(x.size() == inputs.cols(), ErrorCode::dimension_mismatch, "baseline input width mismatch");
    const auto N = static_cast<std::size_t>(inputs.rows());
    std::vector<double> dist(N);
    for (std::size_t i = 0; i < N; ++i) {
      dist[i] = (inputs.row(static_cast<Eigen::Index>(i)).transpose() - x).squaredNorm();
    }
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                      [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
    Vector mean = Vector::Zero(targets.cols());
    for (std::size_t r = 0; r < kk; ++r) mean += targets.row(static_cast<Eigen::Index>(order[r])).transpose();
    return mean / static_cast<double>(kk);
  };
}

AffineInterpolant build_affine_interpolant(const LiftedDataset& train, BaselineMap baseline) {
  train.validate();
  const auto N = train.size();
  const auto d = train.label_dim();
  if (d < N) {
    std::ostringstream os;
    os << "affine interpolant needs label_dim >= records (" << d << " < " << N << ")";
    fail(ErrorCode::precondition, os.str());
  }
  for (Eigen::Index i = 0; i < train.labels.rows(); ++i) {
    require(std::abs(train.labels.row(i).norm() - 1.0) <= 1e-9, ErrorCode::precondition,
            "affine interpolant needs unit-norm labels");
  }
  AffineInterpolant out;
  out.inputs = train.inputs;
  out.targets = train.targets;
  out.labels = train.labels;
  const Matrix gram = train.labels * train.labels.transpose();
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  out.condition_number = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(out.condition_number <= kGramConditionLimit)) {
    std::ostringstream os;
    os << "label Gram matrix is numerically singular (condition " << out.condition_number
       << "); increase label_dim";
    fail(ErrorCode::singular, os.str());
  }
  const Eigen::LLT<Matrix> llt(gram);
  require(llt.info() == Eigen::Success, ErrorCode::singular, "label Gram matrix factorization failed");
  out.gram_inverse = llt.solve(Matrix::Identity(gram.rows(), gram.cols()));
  out.baseline = baseline ? std::move(baseline) : knn_mean_baseline(train.inputs, train.targets, 8);
  return out;
}

Vector eval_affine_interpolant(const AffineInterpolant& interp, const Vector& x, const Vector& xi, bool check_norm) {
  require(x.size() == interp.inputs.cols(), ErrorCode::dimension_mismatch, "interpolant input width mismatch");
  require(xi.size() == interp.labels.cols(), ErrorCode::dimension_mismatch, "interpolant label width mismatch");
  if (check_norm) {
    require(std::abs(xi.norm() - 1.0) <= 1e-9, ErrorCode::invalid_argument, "label must have unit norm");
  }
  const Vector b = interp.baseline(x);
  const Vector coeff = interp.gram_inverse * (interp.labels * xi);
  const Matrix centered = interp.targets.rowwise() - b.transpose();
  return b + centered.transpose() * coeff;
}

double max_anchor_residual(const AffineInterpolant& interp) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < interp.inputs.rows(); ++j) {
    const Vector y = eval_affine_interpolant(interp, interp.inputs.row(j).transpose(), interp.labels.row(j).transpose());
    worst = std::max(worst, (y - interp.targets.row(j).transpose()).norm());
  }
  return worst;
}

double c_delta(double delta, double c_universal) {
  require(delta > 0.0 && delta < 1.0, ErrorCode::invalid_argument, "delta must lie in (0, 1)");
  require(c_universal > 0.0, ErrorCode::invalid_argument, "the universal constant must be positive");
  return 2.0 * (std::sqrt(2.0) / std::sqrt(c_universal) +
                std::sqrt(std::log(2.0 / delta) / (c_universal * std::log(2.0))));
}

double prop32_rhs(std::size_t n, std::size_t T, std::size_t M, std::size_t d, double delta, double c_universal) {
  require(n >= 1, ErrorCode::invalid_argument, "n must be >= 1");
  require(M >= 2, ErrorCode::precondition, "the bound needs M >= 2");
  const double cd = c_delta(delta, c_universal);
  const double logterm = std::log(static_cast<double>(T + 1) * static_cast<double>(M));
  const double needed = std::max(cd * cd * logterm, 2.0);
  if (static_cast<double>(d) < needed) {
    std::ostringstream os;
    os << "label dimension " << d << " is below the required " << needed << "; the bound is not claimed";
    fail(ErrorCode::precondition, os.str());
  }
  return std::sqrt(static_cast<double>(n)) / std::sqrt(2.0) *
         (1.0 + cd * std::sqrt(logterm / static_cast<double>(d)));
}

double fit_universal_c(const std::vector<LipschitzObservation>& observations, double delta, double lo, double hi) {
  require(!observations.empty(), ErrorCode::invalid_argument, "no observations to fit");
  require(lo > 0.0 && hi > lo, ErrorCode::invalid_argument, "invalid search interval");
  // The bound loosens as c shrinks while the precondition tightens, so the
  // feasible set is an interval and its upper end is found by bisection.
  auto bound_holds = [&](double c) {
    for (const auto& o : observations) {
      const double cd = c_delta(delta, c);
      const double logterm = std::log(static_cast<double>(o.T + 1) * static_cast<double>(o.M));
      const double rhs = std::sqrt(static_cast<double>(o.n) / 2.0) *
                         (1.0 + cd * std::sqrt(logterm / static_cast<double>(o.d)));
      if (o.value > rhs) return false;
    }
    return true;
  };
  auto precondition_holds = [&](double c) {
    for (const auto& o : observations) {
      const double cd = c_delta(delta, c);
      const double logterm = std::log(static_cast<double>(o.T + 1) * static_cast<double>(o.M));
      if (static_cast<double>(o.d) < std::max(cd * cd * logterm, 2.0) || o.M < 2) return false;
    }
    return true;
  };
  double best;
  if (bound_holds(hi)) {
    best = hi;
  } else if (!bound_holds(lo)) {
    return 0.0;
  } else {
    double a = std::log(lo), b = std::log(hi);
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (a + b);
      if (bound_holds(std::exp(mid))) a = mid;
      else b = mid;
    }
    best = std::exp(a);
  }
  return precondition_holds(best) ? best : 0.0;
}

Prop31Report check_prop31_trend(const TransitionMap& map, const LiftedDataset& train, const TrajectorySet& test,
                                const Prop31Options& options) {
  train.validate();
  test.validate();
  require(!options.test_sizes.empty(), ErrorCode::invalid_argument, "no test sizes given");
  require(test.dim() == train.state_dim(), ErrorCode::dimension_mismatch, "test set dimension mismatch");

  Prop31Report report;
  double sq = 0.0;
  for (Eigen::Index r = 0; r < train.inputs.rows(); ++r) {
    const Vector y = map(train.inputs.row(r).transpose(), train.labels.row(r).transpose());
    sq += (y - train.targets.row(r).transpose()).squaredNorm();
  }
  report.train_loss = sq / static_cast<double>(train.size());
  if (!(report.train_loss <= options.interpolation_tol)) {
    std::ostringstream os;
    os << "map does not interpolate the training data (mean residual " << report.train_loss << " > "
       << options.interpolation_tol << ")";
    fail(ErrorCode::precondition, os.str());
  }

  const std::size_t m = train.input_states();
  const std::size_t n = train.state_dim();
  const std::size_t t_in = train.direct() ? 0 : options.time;
  const std::size_t t_out = train.direct() ? test.length() - 1 : options.time + 1;
  require(t_in + 1 >= m && t_out < test.length(), ErrorCode::invalid_argument, "time index out of range");

  std::vector<std::size_t> order(test.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(options.seed, stream::split, 1));
  for (std::size_t k = order.size(); k-- > 1;) std::swap(order[k], order[static_cast<std::size_t>(rng.below(k + 1))]);

  for (auto size : options.test_sizes) {
    require(size >= 1 && size <= test.size(), ErrorCode::invalid_argument, "test size exceeds the test set");
    const Matrix labels = draw_labels(size, train.label_dim(), options.law, derive_seed(options.seed, stream::labels, size));
    Matrix generated(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(n));
    Matrix truth(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(n));
    Vector window(static_cast<Eigen::Index>(m * n));
    for (std::size_t k = 0; k < size; ++k) {
      const auto& st = test.trajectories[order[k]].states;
      for (std::size_t w = 0; w < m; ++w) {
        window.segment(static_cast<Eigen::Index>(w * n), static_cast<Eigen::Index>(n)) =
            st.row(static_cast<Eigen::Index>(t_in + 1 - m + w)).transpose();
      }
      const auto r = static_cast<Eigen::Index>(k);
      generated.row(r) = map(window, labels.row(r).transpose()).transpose();
      truth.row(r) = st.row(static_cast<Eigen::Index>(t_out));
    }
    report.rows.push_back({size, w2_auto(generated, truth, options.n_proj, options.seed), options.seed});
  }
  const auto smallest = std::min_element(report.rows.begin(), report.rows.end(),
                                         [](const auto& a, const auto& b) { return a.n_test < b.n_test; });
  const auto largest = std::max_element(report.rows.begin(), report.rows.end(),
                                        [](const auto& a, const auto& b) { return a.n_test < b.n_test; });
  report.decreasing = largest->w2 <= smallest->w2;
  return report;
}

}  // namespace stochlift
