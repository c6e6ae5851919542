#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace stochlift {

// ---- Wasserstein-2 ----------------------------------------------------------

/// Exact W2 between equal-size 1-D empirical measures (sorted coupling).
double w2_1d(std::span<const double> a, std::span<const double> b);
/// W2 between 1-D empirical measures of any sizes via their quantile functions.
double w2_1d_quantile(std::span<const double> a, std::span<const double> b);

/// Minimum-cost perfect matching on a square cost matrix. Returns the column
/// assigned to each row.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

inline constexpr std::size_t kExactW2Limit = 1024;

/// Exact W2 between equal-size point clouds (one point per row).
double w2_exact(const Matrix& a, const Matrix& b);
double w2_exact_serial(const Matrix& a, const Matrix& b);
/// Monte Carlo sliced W2 over n_proj uniform directions.
double w2_sliced(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed);
double w2_sliced_serial(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed);
/// Exact if both clouds have the same size within the exact limit, sliced
/// otherwise. Sets *exact to report which was used.
double w2_auto(const Matrix& a, const Matrix& b, int n_proj, std::uint64_t seed, bool* exact = nullptr);

// ---- discrete Lipschitz constant -------------------------------------------

struct LipschitzResult {
  double value = 0.0;
  std::size_t i = 0;
  std::size_t j = 0;
};

inline constexpr std::size_t kLipschitzLimit = 20000;

/// max over record pairs of ||y_i - y_j|| / sqrt(||x_i - x_j||^2 + ||xi_i - xi_j||^2).
LipschitzResult lipschitz_constant(const LiftedDataset& data);
LipschitzResult lipschitz_constant_serial(const LiftedDataset& data);

/// Largest pairwise target distance.
double max_target_gap(const LiftedDataset& data);
/// Smallest pairwise distance between label rows.
double min_label_gap(const Matrix& labels);

// ---- physics metrics -------------------------------------------------------

struct RegionSpec {
  enum class Kind { boundary_cells, index_set };
  Kind kind = Kind::boundary_cells;
  std::vector<std::size_t> indices;
  double threshold = 0.1;

  /// Component indices of the region for state dimension n. Boundary cells
  /// need n to be a perfect square (a flattened grid).
  std::vector<std::size_t> resolve(std::size_t n) const;
};

/// Boundary-cell region with threshold `fraction * max|u0|`.
RegionSpec boundary_region(const Vector& u0, double fraction = 0.1);

/// First normalized time t / (T - 1) at which a region component exceeds the
/// threshold; nullopt if never.
std::optional<double> crossing_time(const Trajectory& traj, const RegionSpec& region);

struct WctResult {
  double value = 0.0;
  std::size_t never_true = 0;
  std::size_t never_generated = 0;
};

/// W2 between crossing-time samples; `never` maps to 1.
WctResult wct(const TrajectorySet& truth, const TrajectorySet& generated, const RegionSpec& region);

/// (1/n) ||x||_1
double integrated_mass(std::span<const double> state);

/// Time average of the W2 between integrated-mass samples.
double wim(const TrajectorySet& truth, const TrajectorySet& generated);

}  // namespace stochlift
