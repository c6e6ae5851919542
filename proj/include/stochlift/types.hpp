#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stochlift {

using Vector = Eigen::VectorXd;
/// Row-major so that one row is one state / one sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// States x_0 .. x_{T-1} of one realization, one state per row.
struct Trajectory {
  Matrix states;
  double dt_stored = 1.0;
  double t0 = 0.0;

  std::size_t length() const { return static_cast<std::size_t>(states.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(states.cols()); }
};

/// Per-component affine map onto [0, 1]. Constant components map to 0.5.
struct Normalization {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> constant;

  std::size_t dim() const { return min.size(); }
  double to_unit(std::size_t k, double value) const;
  double from_unit(std::size_t k, double value) const;
};

enum class Source { duffing, wave, external, generated };

std::string_view to_string(Source source) noexcept;
Source source_from_string(std::string_view name);

struct TrajectorySet {
  std::vector<Trajectory> trajectories;
  std::optional<Normalization> normalization;
  std::uint64_t seed = 0;
  Source source = Source::external;
  /// Free-form provenance (e.g. the checkpoint hash of a generated set).
  std::string provenance;

  std::size_t size() const { return trajectories.size(); }
  std::size_t length() const { return trajectories.empty() ? 0 : trajectories.front().length(); }
  std::size_t dim() const { return trajectories.empty() ? 0 : trajectories.front().dim(); }
  bool normalized() const { return normalization.has_value(); }

  /// Throws if trajectories disagree on T or n, T < 2, or normalized data
  /// (other than generated data) leaves [0, 1].
  void validate() const;

  /// All states at time index t, one row per trajectory.
  Matrix marginal(std::size_t t) const;
};

}  // namespace stochlift
