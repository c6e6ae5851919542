#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/types.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace stochlift {

/// Maps a state window to a state.
using BaselineMap = std::function<Vector(const Vector&)>;
/// A transition map F(window, label).
using TransitionMap = std::function<Vector(const Vector&, const Vector&)>;

/// Mean target of the k anchors whose inputs are nearest to x (ties broken by
/// index).
BaselineMap knn_mean_baseline(const Matrix& inputs, const Matrix& targets, std::size_t k = 8);

/// Closed-form interpolant affine in the label,
///   F(x, xi) = b(x) + sum_ik (y_i - b(x)) Ginv_ik (xi_k . xi),
/// with G the Gram matrix of the unit-norm anchor labels.
struct AffineInterpolant {
  Matrix inputs;   // anchors x_i, one per row
  Matrix targets;  // y_i
  Matrix labels;   // xi_i, unit norm
  Matrix gram_inverse;
  double condition_number = 1.0;
  BaselineMap baseline;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
};

inline constexpr double kGramConditionLimit = 1e12;

/// Needs d >= N and unit-norm labels. An empty baseline selects the k=8
/// nearest-anchor mean.
AffineInterpolant build_affine_interpolant(const LiftedDataset& train, BaselineMap baseline = {});

/// Evaluates the closed form. The label must have unit norm (to 1e-9) unless
/// check_norm is false.
Vector eval_affine_interpolant(const AffineInterpolant& interp, const Vector& x, const Vector& xi,
                               bool check_norm = true);

/// Residual max_j ||F(x_j, xi_j) - y_j|| over the anchors.
double max_anchor_residual(const AffineInterpolant& interp);

/// c_delta = 2 (sqrt 2 / sqrt c + sqrt(ln(2/delta) / (c ln 2))).
double c_delta(double delta, double c_universal);

/// Upper bound on the discrete Lipschitz constant of a normalized lifted set
/// with unit-norm labels,
///   sqrt(n/2) (1 + c_delta sqrt(ln((T+1) M) / d)).
/// Throws when d < max(c_delta^2 ln((T+1) M), 2) or M < 2.
double prop32_rhs(std::size_t n, std::size_t T, std::size_t M, std::size_t d, double delta, double c_universal);

/// Observed Lipschitz constant together with its configuration.
struct LipschitzObservation {
  std::size_t n = 0, T = 0, M = 0, d = 0;
  double value = 0.0;
};

/// Largest c in [lo, hi] for which every observation lies under the bound
/// and satisfies its precondition. Returns 0 if none does.
double fit_universal_c(const std::vector<LipschitzObservation>& observations, double delta, double lo = 1e-4,
                       double hi = 1e4);

struct Prop31Options {
  std::vector<std::size_t> test_sizes{64, 256};
  /// Time index t of the input state; targets are states at t + 1.
  std::size_t time = 0;
  std::uint64_t seed = 0;
  LabelLaw law = LabelLaw::gaussian;
  /// Mean squared training residual accepted as interpolation.
  double interpolation_tol = 1e-4;
  int n_proj = 256;
};

struct Prop31Row {
  std::size_t n_test = 0;
  double w2 = 0.0;
  std::uint64_t seed = 0;
};

struct Prop31Report {
  std::vector<Prop31Row> rows;
  double train_loss = 0.0;
  /// W2 at the largest test size does not exceed W2 at the smallest.
  bool decreasing = false;
};

/// For each test size, pushes that many held-out (x_t, fresh label) inputs
/// through the map and compares with the true x_{t+1} marginal. Throws if the
/// map does not interpolate `train` within the tolerance.
Prop31Report check_prop31_trend(const TransitionMap& map, const LiftedDataset& train, const TrajectorySet& test,
                                const Prop31Options& options);

}  // namespace stochlift
