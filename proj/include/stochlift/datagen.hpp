#pragma once

#include "stochlift/types.hpp"

#include <array>
#include <cstdint>

namespace stochlift {

// ---------------------------------------------------------------------------
// Duffing oscillator with random forcing
//   dx1 = x2 dt
//   dx2 = (-0.4 x2 + x1 - 0.2 x1^3) dt + noise dW
// integrated by Euler-Maruyama from X_0 ~ N(m0, var0 I).
// ---------------------------------------------------------------------------
struct DuffingConfig {
  std::array<double, 2> m0{0.0, 10.0};
  double var0 = 0.5;
  double t_end = 14.0;
  double dt_int = 0.005;
  int store_every = 14;
  int n_traj = 512;
  /// Amplitude of dW; 1 is the physical model, 0 gives the deterministic flow.
  double noise = 1.0;

  void validate() const;
  /// Number of integrator steps, round(t_end / dt_int).
  long steps() const;
  /// Stored frames including t = 0.
  long frames() const;
};

TrajectorySet simulate_duffing(const DuffingConfig& config, std::uint64_t seed);

/// Serial reference for simulate_duffing; must agree bitwise.
TrajectorySet simulate_duffing_serial(const DuffingConfig& config, std::uint64_t seed);

/// Duffing drift at a state, exposed for oracles in tests.
std::array<double, 2> duffing_drift(const std::array<double, 2>& x) noexcept;

// ---------------------------------------------------------------------------
// Random medium and 2D wave equation u_tt = c(x)^2 Laplace(u) on the
// periodic square [0, L]^2.
// ---------------------------------------------------------------------------
struct SpeedFieldConfig {
  int grid = 16;
  double spectral_peak = 1.0;
  /// Width of the Gaussian envelope in |k|.
  double spectral_width = 1.0;
  /// Standard deviation of log c.
  double roughness = 0.3;
  /// Log-standard-deviation of the per-mode amplitude.
  double amplitude_log_sd = 0.5;
  double c0 = 1.0;
  double domain_length = 6.283185307179586;
};

struct SpeedField {
  Matrix values;  // grid x grid, row index = y, column index = x
  double spectral_peak = 1.0;
  double roughness = 0.0;
  std::uint64_t seed = 0;

  int grid() const { return static_cast<int>(values.rows()); }
  double max() const { return values.maxCoeff(); }
};

/// Periodic log-normal medium, c = c0 exp(roughness * Z / std(Z)) where Z is
/// a zero-mean random Fourier series with log-normal amplitudes under a
/// Gaussian envelope peaked at |k| = spectral_peak and uniform phases.
SpeedField sample_speed_field(const SpeedFieldConfig& config, std::uint64_t seed);

SpeedField sample_speed_field(int grid, double spectral_peak, double roughness,
                              std::uint64_t seed);

struct WaveConfig {
  int grid = 16;
  double domain_length = 6.283185307179586;
  double t_end = 8.0;
  int n_stored = 32;
  double cfl = 0.5;
  double bump_width = 30.0;
  int n_traj = 128;
  SpeedFieldConfig medium{};

  void validate() const;
  double spacing() const { return domain_length / grid; }
};

/// Gaussian bump exp(-bump_width |x - center|^2) sampled on the grid,
/// flattened row-major.
Vector wave_initial_condition(const WaveConfig& config);

/// Leapfrog integrator with the 5-point periodic Laplacian.
class WaveSolver {
 public:
  /// Starts from (u0, zero velocity) with step dt.
  WaveSolver(const SpeedField& field, double spacing, double dt, const Vector& u0);

  void step();
  const Vector& current() const { return current_; }
  const Vector& previous() const { return previous_; }
  double dt() const { return dt_; }
  long steps_taken() const { return steps_; }

  /// Discrete energy between the previous and current levels,
  ///   h^2 sum ((u^n - u^{n-1}) / dt)^2 + c^2 (D u^n) . (D u^{n-1}),
  /// with D the forward difference. Exactly conserved by leapfrog for
  /// constant c (up to rounding).
  double staggered_energy() const;

 private:
  void laplacian(const Vector& u, Vector& out) const;

  int grid_;
  double spacing_;
  double dt_;
  Vector c2_;
  Vector previous_;
  Vector current_;
  Vector scratch_;
  long steps_ = 0;
};

/// Time step used by simulate_wave: the largest dt <= cfl h / (c_max sqrt 2)
/// that divides the frame spacing evenly. Returns (dt, substeps per frame).
std::pair<double, long> wave_time_step(const WaveConfig& config, double c_max);

Trajectory simulate_wave(const WaveConfig& config, const SpeedField& field);
Trajectory simulate_wave(const WaveConfig& config, const SpeedField& field, const Vector& u0);

TrajectorySet generate_wave_set(const WaveConfig& config, std::uint64_t seed);
TrajectorySet generate_wave_set_serial(const WaveConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Per-component min/max normalization over every state of the set.
TrajectorySet normalize(const TrajectorySet& set);
TrajectorySet denormalize(const TrajectorySet& set);
/// Apply the set's normalization record inverse to a single trajectory.
Trajectory denormalize(const Trajectory& traj, const Normalization& record);
Trajectory normalize(const Trajectory& traj, const Normalization& record);

/// Keep every stride-th frame starting at frame 0.
TrajectorySet subsample(const TrajectorySet& set, int stride);

}  // namespace stochlift
