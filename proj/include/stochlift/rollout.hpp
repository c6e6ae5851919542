#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/model.hpp"
#include "stochlift/types.hpp"

#include <cstdint>
#include <vector>

namespace stochlift {

struct RolloutOptions {
  LabelLaw law = LabelLaw::gaussian;
  /// Clamp generated states to [0, 1] after the rollout finishes.
  bool clamp = false;
  double dt_stored = 1.0;
};

/// x_{t+1} = F(window_t, xi_t) with a fresh label per step; the window drops
/// its oldest state each step. `initial` holds the m starting states, one per
/// row. Returns the m initial states followed by `steps` generated ones, using
/// exactly `steps` model evaluations.
Trajectory rollout(const Model& model, const Matrix& initial, long steps, std::uint64_t seed,
                   const RolloutOptions& options = {});

/// Independent rollouts from each initial window; member i uses the
/// sub-seed derive_seed(seed, rollout, i).
TrajectorySet generate_ensemble(const Model& model, const std::vector<Matrix>& initials, long steps,
                                std::uint64_t seed, const RolloutOptions& options = {});
TrajectorySet generate_ensemble_serial(const Model& model, const std::vector<Matrix>& initials, long steps,
                                       std::uint64_t seed, const RolloutOptions& options = {});

/// The first m states of every trajectory of a set.
std::vector<Matrix> initial_windows(const TrajectorySet& set, std::size_t m);

}  // namespace stochlift
