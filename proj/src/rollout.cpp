#include "stochlift/rollout.hpp"

#include "stochlift/error.hpp"
#include "stochlift/rng.hpp"

#include <exception>
#include <sstream>

namespace stochlift {

Trajectory rollout(const Model& model, const Matrix& initial, long steps, std::uint64_t seed,
                   const RolloutOptions& options) {
  const auto& cfg = model.config();
  require(steps >= 1, ErrorCode::invalid_argument, "rollout needs steps >= 1");
  require(initial.rows() >= 1 && initial.cols() == cfg.out_dim &&
              initial.rows() * initial.cols() == cfg.in_dim,
          ErrorCode::dimension_mismatch, "initial window does not match the model input");
  const Eigen::Index m = initial.rows();
  const Eigen::Index n = initial.cols();

  Trajectory out;
  out.dt_stored = options.dt_stored;
  out.states.resize(m + steps, n);
  out.states.topRows(m) = initial;

  Rng rng(seed);
  Vector label(cfg.label_dim);
  Vector window(cfg.in_dim);
  for (long s = 0; s < steps; ++s) {
    for (Eigen::Index w = 0; w < m; ++w) window.segment(w * n, n) = out.states.row(s + w).transpose();
    draw_label(rng, options.law, label);
    const Vector next = model.forward(window, label);
    if (!next.allFinite()) {
      std::ostringstream os;
      os << "rollout produced a non-finite state at step " << s;
      fail(ErrorCode::non_finite, os.str());
    }
    out.states.row(m + s) = next.transpose();
  }
  if (options.clamp) out.states = out.states.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

namespace {

TrajectorySet ensemble_impl(const Model& model, const std::vector<Matrix>& initials, long steps, std::uint64_t seed,
                            const RolloutOptions& options, bool parallel) {
  require(!initials.empty(), ErrorCode::invalid_argument, "no initial windows");
  const auto count = static_cast<long>(initials.size());
  TrajectorySet set;
  set.trajectories.resize(initials.size());
  set.seed = seed;
  set.source = Source::generated;
  set.provenance = model.hash();

  std::vector<std::exception_ptr> errors(initials.size());
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (long i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      set.trajectories[k] =
          rollout(model, initials[k], steps, derive_seed(seed, stream::rollout, k), options);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error& e) {
      std::ostringstream os;
      os << "ensemble member " << k << ": " << e.what();
      fail(e.code(), os.str());
    }
  }
  return set;
}

}  // namespace

TrajectorySet generate_ensemble(const Model& model, const std::vector<Matrix>& initials, long steps,
                                std::uint64_t seed, const RolloutOptions& options) {
  return ensemble_impl(model, initials, steps, seed, options, true);
}

TrajectorySet generate_ensemble_serial(const Model& model, const std::vector<Matrix>& initials, long steps,
                                       std::uint64_t seed, const RolloutOptions& options) {
  return ensemble_impl(model, initials, steps, seed, options, false);
}

std::vector<Matrix> initial_windows(const TrajectorySet& set, std::size_t m) {
  set.validate();
  require(m >= 1 && m < set.length(), ErrorCode::invalid_argument, "window must satisfy 1 <= m < T");
  std::vector<Matrix> out;
  out.reserve(set.size());
  for (const auto& tr : set.trajectories) out.emplace_back(tr.states.topRows(static_cast<Eigen::Index>(m)));
  return out;
}

}  // namespace stochlift
