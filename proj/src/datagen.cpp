#include "stochlift/datagen.hpp"

#include "stochlift/error.hpp"
#include "stochlift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numbers>
#include <sstream>

namespace stochlift {

namespace {

/// Rethrows the lowest-index exception captured inside a parallel loop so the
/// reported error does not depend on scheduling.
void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

// ---- Duffing --------------------------------------------------------------

void DuffingConfig::validate() const {
  require(dt_int > 0.0 && std::isfinite(dt_int), ErrorCode::invalid_argument, "dt_int must be > 0");
  require(store_every >= 1, ErrorCode::invalid_argument, "store_every must be >= 1");
  require(t_end > 0.0 && std::isfinite(t_end), ErrorCode::invalid_argument, "t_end must be > 0");
  require(n_traj >= 1, ErrorCode::invalid_argument, "n_traj must be >= 1");
  require(var0 >= 0.0, ErrorCode::invalid_argument, "var0 must be >= 0");
  require(noise >= 0.0, ErrorCode::invalid_argument, "noise must be >= 0");
  require(frames() >= 2, ErrorCode::invalid_argument,
          "t_end / (dt_int * store_every) must give at least 2 stored frames");
}

long DuffingConfig::steps() const { return std::lround(t_end / dt_int); }

long DuffingConfig::frames() const { return steps() / store_every + 1; }

std::array<double, 2> duffing_drift(const std::array<double, 2>& x) noexcept {
  return {x[1], -0.4 * x[1] + x[0] - 0.2 * x[0] * x[0] * x[0]};
}

namespace {

Trajectory duffing_trajectory(const DuffingConfig& config, std::uint64_t seed, std::size_t index) {
  Rng rng(derive_seed(seed, stream::duffing, index));
  const double sd0 = std::sqrt(config.var0);
  std::array<double, 2> x{config.m0[0] + sd0 * rng.normal(), config.m0[1] + sd0 * rng.normal()};

  const long steps = config.steps();
  const long frames = config.frames();
  const double dt = config.dt_int;
  const double noise_scale = config.noise * std::sqrt(dt);

  Trajectory tr;
  tr.states.resize(frames, 2);
  tr.dt_stored = dt * config.store_every;
  tr.t0 = 0.0;
  tr.states(0, 0) = x[0];
  tr.states(0, 1) = x[1];

  long frame = 1;
  for (long s = 1; s <= steps && frame < frames; ++s) {
    const auto drift = duffing_drift(x);
    const double dw = config.noise > 0.0 ? noise_scale * rng.normal() : 0.0;
    x[0] += drift[0] * dt;
    x[1] += drift[1] * dt + dw;
    if (!std::isfinite(x[0]) || !std::isfinite(x[1])) {
      std::ostringstream os;
      os << "Duffing integration blew up in trajectory " << index << " at step " << s;
      fail(ErrorCode::non_finite, os.str());
    }
    if (s % config.store_every == 0) {
      tr.states(frame, 0) = x[0];
      tr.states(frame, 1) = x[1];
      ++frame;
    }
  }
  return tr;
}

TrajectorySet duffing_shell(const DuffingConfig& config, std::uint64_t seed) {
  config.validate();
  TrajectorySet set;
  set.trajectories.resize(static_cast<std::size_t>(config.n_traj));
  set.seed = seed;
  set.source = Source::duffing;
  return set;
}

}  // namespace

TrajectorySet simulate_duffing(const DuffingConfig& config, std::uint64_t seed) {
  TrajectorySet set = duffing_shell(config, seed);
  const auto count = static_cast<long>(set.size());
  std::vector<std::exception_ptr> errors(set.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long i = 0; i < count; ++i) {
    try {
      set.trajectories[static_cast<std::size_t>(i)] =
          duffing_trajectory(config, seed, static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return set;
}

TrajectorySet simulate_duffing_serial(const DuffingConfig& config, std::uint64_t seed) {
  TrajectorySet set = duffing_shell(config, seed);
  for (std::size_t i = 0; i < set.size(); ++i) set.trajectories[i] = duffing_trajectory(config, seed, i);
  return set;
}

// ---- random medium --------------------------------------------------------

SpeedField sample_speed_field(const SpeedFieldConfig& config, std::uint64_t seed) {
  require(config.grid >= 8, ErrorCode::invalid_argument, "speed field grid must be >= 8");
  require(config.roughness >= 0.0, ErrorCode::invalid_argument, "roughness must be >= 0");
  require(config.spectral_width > 0.0, ErrorCode::invalid_argument, "spectral_width must be > 0");
  require(config.c0 > 0.0, ErrorCode::invalid_argument, "c0 must be > 0");

  const int g = config.grid;
  const int kmax = std::min(g / 2 - 1, static_cast<int>(std::ceil(config.spectral_peak + 4.0 * config.spectral_width)));
  const double h = config.domain_length / g;
  const double base = 2.0 * std::numbers::pi / config.domain_length;

  Rng rng(derive_seed(seed, stream::medium));
  Matrix z = Matrix::Zero(g, g);
  // Half-plane of wavenumbers: each real mode stands for the pair (k, -k).
  for (int ky = 0; ky <= kmax; ++ky) {
    for (int kx = -kmax; kx <= kmax; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      const double kn = std::hypot(static_cast<double>(kx), static_cast<double>(ky));
      const double envelope =
          std::exp(-0.5 * std::pow((kn - config.spectral_peak) / config.spectral_width, 2));
      const double amplitude = envelope * std::exp(config.amplitude_log_sd * rng.normal());
      const double phase = 2.0 * std::numbers::pi * rng.uniform();
      for (int iy = 0; iy < g; ++iy) {
        for (int ix = 0; ix < g; ++ix) {
          z(iy, ix) += amplitude * std::cos(base * h * (kx * ix + ky * iy) + phase);
        }
      }
    }
  }

  const double mean = z.mean();
  z.array() -= mean;
  const double sd = std::sqrt(z.squaredNorm() / static_cast<double>(z.size()));

  SpeedField field;
  field.values.resize(g, g);
  field.spectral_peak = config.spectral_peak;
  field.roughness = config.roughness;
  field.seed = seed;
  if (config.roughness == 0.0 || sd == 0.0) {
    field.values.setConstant(config.c0);
  } else {
    field.values = (config.c0 * (config.roughness / sd * z.array()).exp()).matrix();
  }
  return field;
}

SpeedField sample_speed_field(int grid, double spectral_peak, double roughness, std::uint64_t seed) {
  SpeedFieldConfig config;
  config.grid = grid;
  config.spectral_peak = spectral_peak;
  config.roughness = roughness;
  return sample_speed_field(config, seed);
}

// ---- wave -----------------------------------------------------------------

void WaveConfig::validate() const {
  require(grid >= 8, ErrorCode::invalid_argument, "wave grid must be >= 8");
  require(cfl > 0.0 && cfl < 1.0, ErrorCode::invalid_argument, "cfl must lie in (0, 1)");
  require(n_stored >= 2, ErrorCode::invalid_argument, "n_stored must be >= 2");
  require(t_end > 0.0, ErrorCode::invalid_argument, "t_end must be > 0");
  require(domain_length > 0.0, ErrorCode::invalid_argument, "domain_length must be > 0");
  require(bump_width > 0.0, ErrorCode::invalid_argument, "bump_width must be > 0");
  require(n_traj >= 1, ErrorCode::invalid_argument, "n_traj must be >= 1");
}

Vector wave_initial_condition(const WaveConfig& config) {
  const int g = config.grid;
  const double h = config.spacing();
  const double center = 0.5 * config.domain_length;
  Vector u(static_cast<Eigen::Index>(g) * g);
  for (int iy = 0; iy < g; ++iy) {
    for (int ix = 0; ix < g; ++ix) {
      const double dx = ix * h - center;
      const double dy = iy * h - center;
      u(iy * g + ix) = std::exp(-config.bump_width * (dx * dx + dy * dy));
    }
  }
  return u;
}

WaveSolver::WaveSolver(const SpeedField& field, double spacing, double dt, const Vector& u0)
    : grid_(field.grid()), spacing_(spacing), dt_(dt) {
  const auto n = static_cast<Eigen::Index>(grid_) * grid_;
  require(u0.size() == n, ErrorCode::dimension_mismatch, "initial condition does not match the grid");
  require(field.values.allFinite(), ErrorCode::non_finite, "speed field has non-finite values");
  c2_.resize(n);
  for (int iy = 0; iy < grid_; ++iy) {
    for (int ix = 0; ix < grid_; ++ix) c2_(iy * grid_ + ix) = field.values(iy, ix) * field.values(iy, ix);
  }
  current_ = u0;
  scratch_.resize(n);
  laplacian(u0, scratch_);
  // Zero initial velocity: the ghost level u^{-1} mirrors u^{1}.
  previous_ = u0 + 0.5 * dt_ * dt_ * c2_.cwiseProduct(scratch_);
}

void WaveSolver::laplacian(const Vector& u, Vector& out) const {
  const int g = grid_;
  const double inv_h2 = 1.0 / (spacing_ * spacing_);
  for (int iy = 0; iy < g; ++iy) {
    const int up = (iy + 1) % g;
    const int down = (iy + g - 1) % g;
    for (int ix = 0; ix < g; ++ix) {
      const int right = (ix + 1) % g;
      const int left = (ix + g - 1) % g;
      const double center = u(iy * g + ix);
      out(iy * g + ix) = (u(iy * g + right) + u(iy * g + left) + u(up * g + ix) + u(down * g + ix) -
                          4.0 * center) * inv_h2;
    }
  }
}

void WaveSolver::step() {
  laplacian(current_, scratch_);
  const double dt2 = dt_ * dt_;
  for (Eigen::Index k = 0; k < current_.size(); ++k) {
    const double next = 2.0 * current_(k) - previous_(k) + dt2 * c2_(k) * scratch_(k);
    previous_(k) = current_(k);
    current_(k) = next;
  }
  ++steps_;
}

double WaveSolver::staggered_energy() const {
  const int g = grid_;
  const double h = spacing_;
  double kinetic = 0.0;
  double potential = 0.0;
  for (int iy = 0; iy < g; ++iy) {
    const int up = (iy + 1) % g;
    for (int ix = 0; ix < g; ++ix) {
      const int right = (ix + 1) % g;
      const int k = iy * g + ix;
      const double v = (current_(k) - previous_(k)) / dt_;
      kinetic += v * v;
      const double gx_now = (current_(iy * g + right) - current_(k)) / h;
      const double gy_now = (current_(up * g + ix) - current_(k)) / h;
      const double gx_old = (previous_(iy * g + right) - previous_(k)) / h;
      const double gy_old = (previous_(up * g + ix) - previous_(k)) / h;
      potential += c2_(k) * (gx_now * gx_old + gy_now * gy_old);
    }
  }
  return h * h * (kinetic + potential);
}

std::pair<double, long> wave_time_step(const WaveConfig& config, double c_max) {
  const double frame_dt = config.t_end / (config.n_stored - 1);
  const double dt_max = config.cfl * config.spacing() / (c_max * std::numbers::sqrt2);
  const long substeps = std::max(1L, static_cast<long>(std::ceil(frame_dt / dt_max)));
  return {frame_dt / static_cast<double>(substeps), substeps};
}

Trajectory simulate_wave(const WaveConfig& config, const SpeedField& field, const Vector& u0) {
  config.validate();
  require(field.grid() == config.grid, ErrorCode::dimension_mismatch,
          "speed field grid does not match the wave config grid");
  require(field.values.allFinite(), ErrorCode::non_finite, "speed field has non-finite values");
  require(field.values.minCoeff() > 0.0, ErrorCode::invalid_argument, "speed field must be positive");

  const auto [dt, substeps] = wave_time_step(config, field.max());
  WaveSolver solver(field, config.spacing(), dt, u0);

  Trajectory tr;
  const auto n = static_cast<Eigen::Index>(config.grid) * config.grid;
  tr.states.resize(config.n_stored, n);
  tr.dt_stored = config.t_end / (config.n_stored - 1);
  tr.t0 = 0.0;
  tr.states.row(0) = u0.transpose();
  for (int frame = 1; frame < config.n_stored; ++frame) {
    for (long s = 0; s < substeps; ++s) solver.step();
    if (!solver.current().allFinite()) {
      std::ostringstream os;
      os << "wave solution became non-finite at frame " << frame;
      fail(ErrorCode::non_finite, os.str());
    }
    tr.states.row(frame) = solver.current().transpose();
  }
  return tr;
}

Trajectory simulate_wave(const WaveConfig& config, const SpeedField& field) {
  return simulate_wave(config, field, wave_initial_condition(config));
}

namespace {

SpeedFieldConfig medium_for(const WaveConfig& config) {
  SpeedFieldConfig medium = config.medium;
  medium.grid = config.grid;
  medium.domain_length = config.domain_length;
  return medium;
}

Trajectory wave_member(const WaveConfig& config, const Vector& u0, std::uint64_t seed, std::size_t i) {
  const SpeedField field = sample_speed_field(medium_for(config), derive_seed(seed, stream::medium, i));
  return simulate_wave(config, field, u0);
}

TrajectorySet wave_shell(const WaveConfig& config, std::uint64_t seed) {
  config.validate();
  TrajectorySet set;
  set.trajectories.resize(static_cast<std::size_t>(config.n_traj));
  set.seed = seed;
  set.source = Source::wave;
  return set;
}

}  // namespace

TrajectorySet generate_wave_set(const WaveConfig& config, std::uint64_t seed) {
  TrajectorySet set = wave_shell(config, seed);
  const Vector u0 = wave_initial_condition(config);
  const auto count = static_cast<long>(set.size());
  std::vector<std::exception_ptr> errors(set.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    try {
      set.trajectories[static_cast<std::size_t>(i)] = wave_member(config, u0, seed, static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  rethrow_first(errors);
  return set;
}

TrajectorySet generate_wave_set_serial(const WaveConfig& config, std::uint64_t seed) {
  TrajectorySet set = wave_shell(config, seed);
  const Vector u0 = wave_initial_condition(config);
  for (std::size_t i = 0; i < set.size(); ++i) set.trajectories[i] = wave_member(config, u0, seed, i);
  return set;
}

// ---- normalization --------------------------------------------------------

TrajectorySet normalize(const TrajectorySet& set) {
  require(!set.trajectories.empty(), ErrorCode::invalid_argument, "cannot normalize an empty set");
  require(!set.normalized(), ErrorCode::precondition, "set is already normalized");
  const auto n = set.dim();
  Normalization record;
  record.min.assign(n, std::numeric_limits<double>::infinity());
  record.max.assign(n, -std::numeric_limits<double>::infinity());
  record.constant.assign(n, false);
  for (const auto& tr : set.trajectories) {
    for (Eigen::Index t = 0; t < tr.states.rows(); ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        const double v = tr.states(t, static_cast<Eigen::Index>(k));
        record.min[k] = std::min(record.min[k], v);
        record.max[k] = std::max(record.max[k], v);
      }
    }
  }
  for (std::size_t k = 0; k < n; ++k) record.constant[k] = !(record.max[k] > record.min[k]);

  TrajectorySet out = set;
  for (auto& tr : out.trajectories) tr = normalize(tr, record);
  out.normalization = std::move(record);
  return out;
}

Trajectory normalize(const Trajectory& traj, const Normalization& record) {
  require(traj.dim() == record.dim(), ErrorCode::dimension_mismatch, "normalization record dimension mismatch");
  Trajectory out = traj;
  for (Eigen::Index t = 0; t < out.states.rows(); ++t) {
    for (std::size_t k = 0; k < record.dim(); ++k) {
      auto& v = out.states(t, static_cast<Eigen::Index>(k));
      v = record.to_unit(k, v);
    }
  }
  return out;
}

Trajectory denormalize(const Trajectory& traj, const Normalization& record) {
  require(traj.dim() == record.dim(), ErrorCode::dimension_mismatch, "normalization record dimension mismatch");
  Trajectory out = traj;
  for (Eigen::Index t = 0; t < out.states.rows(); ++t) {
    for (std::size_t k = 0; k < record.dim(); ++k) {
      auto& v = out.states(t, static_cast<Eigen::Index>(k));
      v = record.from_unit(k, v);
    }
  }
  return out;
}

TrajectorySet denormalize(const TrajectorySet& set) {
  require(set.normalized(), ErrorCode::precondition, "set carries no normalization record");
  TrajectorySet out = set;
  for (auto& tr : out.trajectories) tr = denormalize(tr, *set.normalization);
  out.normalization.reset();
  return out;
}

TrajectorySet subsample(const TrajectorySet& set, int stride) {
  require(stride >= 1, ErrorCode::invalid_argument, "stride must be >= 1");
  TrajectorySet out = set;
  for (auto& tr : out.trajectories) {
    const Eigen::Index frames = (tr.states.rows() - 1) / stride + 1;
    Matrix kept(frames, tr.states.cols());
    for (Eigen::Index f = 0; f < frames; ++f) kept.row(f) = tr.states.row(f * stride);
    tr.states = std::move(kept);
    tr.dt_stored *= stride;
  }
  return out;
}

}  // namespace stochlift
