#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/model.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace stochlift {

struct OptConfig {
  int batch_size = 64;
  double lr_base = 1e-4;
  double weight_decay = 1e-4;
  long iterations = 20000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  /// Global gradient-norm clip; 0 disables it.
  double clip_norm = 0.0;

  void validate() const;
};

/// base * (1 + cos(pi step / total)) / 2.
double cosine_lr(long step, long total, double base);

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;  // number of updates applied so far

  explicit AdamState(Eigen::Index size = 0) : m(Vector::Zero(size)), v(Vector::Zero(size)) {}
};

/// One AdamW update with decoupled decay at learning rate lr:
///   p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
void adamw_step(Vector& params, const Vector& grad, AdamState& state, double lr, const OptConfig& cfg);

struct TrainingLog {
  std::vector<double> loss;
  std::vector<double> lr;
  double final_loss = 0.0;
  double wall_time = 0.0;  // seconds, informational only
  OptConfig config;
};

/// Called after every iteration with (step, loss, model); used for periodic
/// checkpoints.
using TrainCallback = std::function<void(long, double, const Model&)>;

std::pair<Model, TrainingLog> train(const Model& model, const LiftedDataset& data, const OptConfig& cfg,
                                    const TrainCallback& callback = {});

/// Median of the first and last 5% of the loss history.
std::pair<double, double> loss_progress(const TrainingLog& log);

}  // namespace stochlift
