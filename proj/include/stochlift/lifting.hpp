#pragma once

#include "stochlift/rng.hpp"
#include "stochlift/types.hpp"

#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

namespace stochlift {

enum class LabelLaw { gaussian, sphere };

std::string_view to_string(LabelLaw law) noexcept;
LabelLaw label_law_from_string(std::string_view name);

/// Draws `count` labels of dimension `dim`, one per row.
Matrix draw_labels(std::size_t count, std::size_t dim, LabelLaw law, std::uint64_t seed);
/// Fills `out` with one label.
void draw_label(Rng& rng, LabelLaw law, Eigen::Ref<Vector> out);

/// Transition records (x window, next state, label).
struct LiftedDataset {
  /// Window value recorded for the direct initial-to-final ablation.
  static constexpr std::size_t full_horizon = std::numeric_limits<std::size_t>::max();

  Matrix inputs;   // N x (window * n), oldest state first
  Matrix targets;  // N x n
  Matrix labels;   // N x d
  /// Source trajectory and time index of the last input state of each record.
  std::vector<std::uint32_t> trajectory;
  std::vector<std::uint32_t> time;

  std::size_t window = 1;
  LabelLaw law = LabelLaw::gaussian;
  double shuffle_fraction = 0.0;
  std::uint64_t seed = 0;

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(targets.cols()); }
  std::size_t label_dim() const { return static_cast<std::size_t>(labels.cols()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs.cols()); }
  bool direct() const { return window == full_horizon; }
  /// Number of states in one input window (1 for direct pairs).
  std::size_t input_states() const { return direct() ? 1 : window; }

  void validate() const;
};

/// One record per (trajectory i, t) with t = window-1 .. T-2: the input is
/// x_{t-window+1} .. x_t, the target x_{t+1}, the label a fresh draw.
LiftedDataset lift(const TrajectorySet& set, std::size_t label_dim, std::size_t window, LabelLaw law,
                   std::uint64_t seed);

/// Per-time-step permutation of targets among floor(fraction * M) randomly
/// chosen source trajectories. Inputs and labels are untouched.
LiftedDataset shuffle_pairs(const LiftedDataset& data, double fraction, std::uint64_t seed);

/// Split whole trajectories: ceil(M * test_fraction) go to the test side.
std::pair<TrajectorySet, TrajectorySet> split(const TrajectorySet& set, double test_fraction,
                                              std::uint64_t seed);
/// The index partition behind split(); both sides sorted ascending.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count,
                                                                            double test_fraction,
                                                                            std::uint64_t seed);

/// One record per trajectory: x_0 -> x_{T-1}.
LiftedDataset make_direct_pairs(const TrajectorySet& set, std::size_t label_dim, std::uint64_t seed,
                                LabelLaw law = LabelLaw::gaussian);

}  // namespace stochlift
