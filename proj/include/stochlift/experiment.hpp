#pragma once

#include "stochlift/datagen.hpp"
#include "stochlift/io.hpp"
#include "stochlift/lifting.hpp"
#include "stochlift/model.hpp"
#include "stochlift/theory.hpp"
#include "stochlift/trainer.hpp"
#include "stochlift/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stochlift {

enum class DatasetKind { duffing, wave };

struct DatasetSection {
  DatasetKind kind = DatasetKind::duffing;
  DuffingConfig duffing{};
  WaveConfig wave{};
  /// Keep every stride-th stored frame.
  int stride = 1;
  bool normalize = true;
};

struct LiftingSection {
  int label_dim = 64;
  int window = 1;
  LabelLaw law = LabelLaw::gaussian;
  double shuffle_fraction = 0.0;
  bool direct_map = false;
};

/// Architecture knobs; in/out/label widths follow from the data and lifting.
struct ModelSection {
  std::vector<int> hidden{256, 256, 256};
  int embed_width = 128;
  Activation activation = Activation::gelu;
  bool residual_output = true;
  bool layer_norm = false;
  bool zero_head = false;
};

struct OptimizerSection {
  OptConfig opt{};
  /// Write an intermediate checkpoint every k steps; 0 disables.
  long checkpoint_every = 0;
};

/// Metric names accepted in the evaluation list.
inline const std::vector<std::string> kMetricNames{"w2_final", "w2_times", "wct", "wim", "lipschitz", "gradnorm"};

struct EvaluationSection {
  double test_fraction = 0.5;
  std::vector<std::string> metrics{"w2_final", "w2_times"};
  /// Frame indices for w2_times; negative values count from the end.
  std::vector<long> w2_times{};
  int n_proj = 256;
  /// Region threshold as a fraction of max |u0| (boundary cells of the grid).
  double region_fraction = 0.1;
  /// Explicit region component indices; empty selects boundary cells.
  std::vector<std::size_t> region_indices{};
  /// Number of test inputs for the label-Jacobian statistics.
  int gradnorm_samples = 64;
  /// Ensemble members per test initial window.
  int ensemble_per_initial = 1;
  bool clamp = false;
};

struct SeedSection {
  std::uint64_t data = 1;
  std::uint64_t split = 2;
  std::uint64_t labels = 3;
  std::uint64_t shuffle = 4;
  std::uint64_t init = 5;
  std::uint64_t batches = 6;
  std::uint64_t rollout = 7;
  std::uint64_t eval = 8;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSection dataset{};
  LiftingSection lifting{};
  ModelSection model{};
  OptimizerSection optimizer{};
  EvaluationSection evaluation{};
  SeedSection seeds{};
  std::string output_dir = "out";

  /// Checks ranges and cross-section consistency.
  void validate() const;
};

/// Full document with every default filled in.
Json to_json(const ExperimentConfig& config);
/// Starts from defaults and applies `doc`. Unknown keys and type errors are
/// rejected with ErrorCode::config naming the offending path.
ExperimentConfig experiment_from_json(const Json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path);
/// config_hash of the fully defaulted document.
std::string experiment_hash(const ExperimentConfig& config);

/// Applies "a.b.c=value" assignments. The value is parsed as JSON and taken
/// as a plain string if that fails.
Json apply_overrides(Json doc, const std::vector<std::string>& assignments);

/// Data hash: only the fields that affect the generated set.
Json dataset_json(const ExperimentConfig& config);

/// Simulate, normalize (if requested) and subsample.
TrajectorySet make_dataset(const ExperimentConfig& config);

struct TrainTestSplit {
  TrajectorySet train;
  TrajectorySet test;
};
TrainTestSplit split_dataset(const ExperimentConfig& config, const TrajectorySet& set);

/// Lift, shuffle or build direct pairs as configured.
LiftedDataset make_training_data(const ExperimentConfig& config, const TrajectorySet& train);

ModelConfig model_config(const ExperimentConfig& config, std::size_t state_dim);

struct TrainOutcome {
  Model model;
  TrainingLog log;
};
/// Trains from the configured initialization. `callback` sees every step.
TrainOutcome run_training(const ExperimentConfig& config, const LiftedDataset& data,
                          const TrainCallback& callback = {});

struct MetricRow {
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  /// Generated ensemble (normalized space when the data is normalized).
  TrajectorySet generated;

  std::optional<double> find(const std::string& metric) const;
};

/// Ensemble rollout from the test windows and the configured metrics.
/// Metrics are computed on denormalized states.
EvalReport evaluate(const ExperimentConfig& config, const Model& model, const TrajectorySet& train,
                    const TrajectorySet& test);

/// Split-half W2 and WCT baselines of the test set with itself.
std::vector<MetricRow> self_distance_baselines(const ExperimentConfig& config, const TrajectorySet& test);

/// Everything for one configuration in memory: data, split, train, evaluate.
struct PointResult {
  ExperimentConfig config;
  std::string hash;
  double final_loss = 0.0;
  EvalReport report;
  Model model;
};
PointResult run_point(const ExperimentConfig& config);

enum class StudyKind { shuffle, labeldim, gradnorm, direct };
std::string_view to_string(StudyKind kind) noexcept;
StudyKind study_kind_from_string(std::string_view name);

/// Sweep values of a study.
std::vector<double> study_values(StudyKind kind);
/// The base config with the study variable set to `value` (for `direct`,
/// 0 is sequential and 1 is the direct map). Seeds are left untouched.
ExperimentConfig study_point(StudyKind kind, const ExperimentConfig& base, double value);

struct StudyRow {
  double value = 0.0;
  std::string hash;
  double final_loss = 0.0;
  std::vector<MetricRow> metrics;
};

/// Runs every sweep point with at most `jobs` in flight. On failure the rows
/// finished so far are written before the error propagates.
std::vector<StudyRow> run_study(StudyKind kind, const ExperimentConfig& base, int jobs,
                                const std::filesystem::path& csv_path = {});

/// study,value,final_loss,<metrics...>,config_hash under a provenance line
/// for the base config.
void write_study_csv(const std::filesystem::path& path, StudyKind kind, const ExperimentConfig& base,
                     const std::vector<StudyRow>& rows);

/// The frames (t, t + 1) of the first `count` trajectories, so that lifting
/// with window 1 yields exactly one transition per trajectory.
TrajectorySet transition_slice(const TrajectorySet& set, std::size_t t, std::size_t count);

struct TheoryOptions {
  int seeds = 10;
  std::size_t anchors = 64;
  std::size_t anchor_label_dim = 4096;
  /// Input frame for the interpolant and trend checks.
  std::size_t time = 10;
  std::vector<std::size_t> test_sizes{64, 256};
  /// Trajectory counts and label dimensions of the Lipschitz bound check.
  std::vector<std::size_t> bound_trajectories{8, 16, 32};
  std::vector<std::size_t> bound_label_dims{64, 256, 1024};
  double delta = 0.1;
};

struct TheoryReport {
  Json summary;
  std::vector<Prop31Row> curve;
};

/// Interpolant residuals and conditioning, the held-out W2 trend of the
/// interpolant, and the empirical Lipschitz bound with a fitted constant,
/// all on the configured (normalized) data.
TheoryReport run_theory_suite(const ExperimentConfig& config, const TheoryOptions& options);

/// "config_hash=<hex> seeds=data:1,split:2,..." for CSV comment lines.
std::string provenance_line(const ExperimentConfig& config);

}  // namespace stochlift
