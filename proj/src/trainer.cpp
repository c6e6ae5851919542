#include "stochlift/trainer.hpp"

#include "stochlift/error.hpp"
#include "stochlift/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

namespace stochlift {

void OptConfig::validate() const {
  require(batch_size >= 1, ErrorCode::invalid_argument, "batch_size must be >= 1");
  require(lr_base > 0.0 && std::isfinite(lr_base), ErrorCode::invalid_argument, "lr_base must be positive");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), ErrorCode::invalid_argument,
          "weight_decay must be >= 0");
  require(iterations >= 0, ErrorCode::invalid_argument, "iterations must be >= 0");
  require(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0,
          ErrorCode::invalid_argument, "Adam betas must lie in (0,1)");
  require(adam_eps > 0.0, ErrorCode::invalid_argument, "adam_eps must be positive");
  require(clip_norm >= 0.0, ErrorCode::invalid_argument, "clip_norm must be >= 0");
}

double cosine_lr(long step, long total, double base) {
  require(total >= 0 && step >= 0 && step <= total, ErrorCode::invalid_argument,
          "cosine_lr needs 0 <= step <= total");
  if (total == 0) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void adamw_step(Vector& params, const Vector& grad, AdamState& state, double lr, const OptConfig& cfg) {
  require(params.size() == grad.size() && state.m.size() == params.size() && state.v.size() == params.size(),
          ErrorCode::dimension_mismatch, "adamw_step shape mismatch");
  state.step += 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double decay = 1.0 - lr * cfg.weight_decay;
  state.m = b1 * state.m + (1.0 - b1) * grad;
  state.v = b2 * state.v + (1.0 - b2) * grad.cwiseProduct(grad);
  params.array() = params.array() * decay -
                   lr * ((state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.adam_eps));
  require(params.allFinite(), ErrorCode::non_finite, "non-finite parameter after AdamW update");
}

std::pair<Model, TrainingLog> train(const Model& model, const LiftedDataset& data, const OptConfig& cfg,
                                    const TrainCallback& callback) {
  cfg.validate();
  data.validate();
  const auto& mc = model.config();
  if (static_cast<int>(data.input_dim()) != mc.in_dim || static_cast<int>(data.state_dim()) != mc.out_dim ||
      static_cast<int>(data.label_dim()) != mc.label_dim) {
    std::ostringstream os;
    os << "dataset dims (in " << data.input_dim() << ", out " << data.state_dim() << ", label "
       << data.label_dim() << ") do not match the model (in " << mc.in_dim << ", out " << mc.out_dim
       << ", label " << mc.label_dim << ")";
    fail(ErrorCode::dimension_mismatch, os.str());
  }

  const auto start = std::chrono::steady_clock::now();
  Model current = model;
  TrainingLog log;
  log.config = cfg;
  log.loss.reserve(static_cast<std::size_t>(cfg.iterations));
  log.lr.reserve(static_cast<std::size_t>(cfg.iterations));

  AdamState state(current.params().size());
  Rng rng(derive_seed(cfg.seed, stream::batches));
  std::vector<std::size_t> batch(static_cast<std::size_t>(cfg.batch_size));
  const auto N = static_cast<std::uint64_t>(data.size());

  LossGrad lg;
  for (long step = 0; step < cfg.iterations; ++step) {
    for (auto& idx : batch) idx = static_cast<std::size_t>(rng.below(N));
    try {
      loss_and_grad(current, data, batch, lg);
    } catch (const Error& e) {
      std::ostringstream os;
      os << "training diverged at step " << step << ": " << e.what();
      fail(ErrorCode::non_finite, os.str());
    }
    if (cfg.clip_norm > 0.0) {
      const double norm = lg.grad.norm();
      if (norm > cfg.clip_norm) lg.grad *= cfg.clip_norm / norm;
    }
    const double lr = cosine_lr(step, cfg.iterations, cfg.lr_base);
    try {
      current.update_params([&](Vector& p) { adamw_step(p, lg.grad, state, lr, cfg); });
    } catch (const Error& e) {
      std::ostringstream os;
      os << "training diverged at step " << step << ": " << e.what();
      fail(ErrorCode::non_finite, os.str());
    }
    log.loss.push_back(lg.loss);
    log.lr.push_back(lr);
    if (callback) callback(step, lg.loss, current);
  }

  log.final_loss = mean_loss(current, data);
  log.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(current), std::move(log)};
}

namespace {
double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace

std::pair<double, double> loss_progress(const TrainingLog& log) {
  require(!log.loss.empty(), ErrorCode::invalid_argument, "empty loss history");
  const auto n = log.loss.size();
  const auto k = std::max<std::size_t>(1, n / 20);
  std::vector<double> head(log.loss.begin(), log.loss.begin() + static_cast<long>(k));
  std::vector<double> tail(log.loss.end() - static_cast<long>(k), log.loss.end());
  return {median_of(head), median_of(tail)};
}

}  // namespace stochlift
