#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/types.hpp"

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace stochlift {

enum class Activation { gelu, tanh, identity };

std::string_view to_string(Activation act) noexcept;
Activation activation_from_string(std::string_view name);

struct ModelConfig {
  int in_dim = 2;
  int out_dim = 2;
  std::vector<int> hidden{256, 256, 256};
  int label_dim = 64;
  int embed_width = 128;
  Activation activation = Activation::gelu;
  /// Predict an update added to the most recent input state.
  bool residual_output = true;
  /// Standardize each trunk pre-activation before modulation.
  bool layer_norm = false;

  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

/// Location of one tensor inside the flat parameter vector. Weights are
/// stored row-major as (out x in).
struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

struct ParamLayout {
  std::vector<TensorSlot> slots;
  std::size_t total = 0;

  const TensorSlot& at(std::string_view name) const;
};

/// Tensor order: label embedding (embed.0.w/b, embed.1.w/b), then per trunk
/// layer l: trunk.l.w/b, film.l.gamma.w/b, film.l.beta.w/b, then head.w/b.
/// The modulation is gamma = 1 + (gamma.w e + gamma.b), beta = beta.w e + beta.b.
ParamLayout make_layout(const ModelConfig& config);

/// Counts forward evaluations; copying a counter copies its current value.
class CallCounter {
 public:
  CallCounter() = default;
  CallCounter(const CallCounter& other) : value_(other.value()) {}
  CallCounter& operator=(const CallCounter& other) {
    value_.store(other.value());
    return *this;
  }
  void add(std::uint64_t n) const { value_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t value() const { return value_.load(std::memory_order_relaxed); }
  void reset() const { value_.store(0); }

 private:
  mutable std::atomic<std::uint64_t> value_{0};
};

/// The transition map F(x window, label). Immutable apart from the
/// instrumentation counter.
class Model {
 public:
  Model(ModelConfig config, Vector params);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  const Vector& params() const { return params_; }
  void set_params(Vector params);
  /// Applies `update` to the parameters in place, then checks the invariants.
  template <class F>
  void update_params(F&& update) {
    update(params_);
    check_params();
  }

  /// Single evaluation; counts as one forward call.
  Vector forward(const Vector& window, const Vector& label) const;
  /// Row-wise evaluation; counts one call per row.
  Matrix forward_batch(const Matrix& windows, const Matrix& labels) const;
  /// The network output before the residual connection is added.
  Vector trunk_output(const Vector& window, const Vector& label) const;

  std::uint64_t forward_calls() const { return calls_.value(); }
  void reset_forward_calls() const { calls_.reset(); }

  /// FNV-1a of the architecture and the raw parameter bytes, hex encoded.
  std::string hash() const;

 private:
  void check_params() const;

  ModelConfig config_;
  ParamLayout layout_;
  Vector params_;
  CallCounter calls_;
};

struct InitOptions {
  /// Zero the output head so that a residual model starts as the identity.
  bool zero_head = false;
};

Model init_model(const ModelConfig& config, std::uint64_t seed, InitOptions options = {});

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

/// Rows of a batch, one record per row.
struct BatchRef {
  const Matrix& inputs;
  const Matrix& labels;
  const Matrix& targets;
};

/// Mean over records of ||F(x, xi) - y||^2 and its exact gradient. Records
/// are processed in fixed-size chunks reduced in chunk order, so the value
/// does not depend on the thread count.
LossGrad loss_and_grad(const Model& model, const BatchRef& batch);
/// Same, over the given records of a dataset. Indices are sorted first, so
/// the result does not depend on their order.
LossGrad loss_and_grad(const Model& model, const LiftedDataset& data, std::span<const std::size_t> indices);
/// Same, reusing the storage of `out`.
void loss_and_grad(const Model& model, const LiftedDataset& data, std::span<const std::size_t> indices,
                   LossGrad& out);
/// Record-at-a-time reference implementation with no batching or threads.
LossGrad loss_and_grad_serial(const Model& model, const BatchRef& batch);

/// Mean loss over all records, without gradients.
double mean_loss(const Model& model, const LiftedDataset& data);
/// Record-at-a-time reference; agrees with mean_loss up to summation order.
double mean_loss_serial(const Model& model, const LiftedDataset& data);

/// Jacobian dF/dxi (out_dim x label_dim), exact, one reverse pass per output.
Matrix label_jacobian(const Model& model, const Vector& window, const Vector& label);
/// Frobenius norm of label_jacobian.
double label_gradient_norm(const Model& model, const Vector& window, const Vector& label);

/// Gather rows of a dataset into dense matrices.
struct Batch {
  Matrix inputs;
  Matrix labels;
  Matrix targets;
  BatchRef ref() const { return {inputs, labels, targets}; }
};
Batch gather(const LiftedDataset& data, std::span<const std::size_t> indices);
void gather(const LiftedDataset& data, std::span<const std::size_t> indices, Batch& out);

}  // namespace stochlift
