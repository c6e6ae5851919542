#include "stochlift/model.hpp"

#include "stochlift/error.hpp"
#include "stochlift/hash.hpp"
#include "stochlift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace stochlift {

std::string_view to_string(Activation act) noexcept {
  switch (act) {
    case Activation::gelu: return "gelu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "gelu";
}

Activation activation_from_string(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  fail(ErrorCode::invalid_argument, "unknown activation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  require(in_dim >= 1 && out_dim >= 1 && label_dim >= 1 && embed_width >= 1, ErrorCode::invalid_argument,
          "model widths must be >= 1");
  for (int w : hidden) require(w >= 1, ErrorCode::invalid_argument, "hidden widths must be >= 1");
  if (residual_output) {
    require(in_dim % out_dim == 0, ErrorCode::invalid_argument,
            "residual output needs in_dim divisible by out_dim");
  }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.in_dim == b.in_dim && a.out_dim == b.out_dim && a.hidden == b.hidden && a.label_dim == b.label_dim &&
         a.embed_width == b.embed_width && a.activation == b.activation &&
         a.residual_output == b.residual_output && a.layer_norm == b.layer_norm;
}

const TensorSlot& ParamLayout::at(std::string_view name) const {
  for (const auto& s : slots) {
    if (s.name == name) return s;
  }
  fail(ErrorCode::invalid_argument, "no tensor named '" + std::string(name) + "'");
}

ParamLayout make_layout(const ModelConfig& config) {
  config.validate();
  ParamLayout layout;
  auto add = [&layout](std::string name, int rows, int cols) {
    layout.slots.push_back({std::move(name), rows, cols, layout.total});
    layout.total += layout.slots.back().size();
  };
  const int e = config.embed_width;
  add("embed.0.w", e, config.label_dim);
  add("embed.0.b", 1, e);
  add("embed.1.w", e, e);
  add("embed.1.b", 1, e);
  int prev = config.in_dim;
  for (std::size_t l = 0; l < config.hidden.size(); ++l) {
    const int w = config.hidden[l];
    const std::string p = "trunk." + std::to_string(l);
    const std::string f = "film." + std::to_string(l);
    add(p + ".w", w, prev);
    add(p + ".b", 1, w);
    add(f + ".gamma.w", w, e);
    add(f + ".gamma.b", 1, w);
    add(f + ".beta.w", w, e);
    add(f + ".beta.b", 1, w);
    prev = w;
  }
  add("head.w", config.out_dim, prev);
  add("head.b", 1, config.out_dim);
  return layout;
}

namespace {

constexpr Eigen::Index kChunkRows = 64;
constexpr double kLayerNormEps = 1e-5;

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using ConstRow = Eigen::Map<const Eigen::RowVectorXd>;
using MutRow = Eigen::Map<Eigen::RowVectorXd>;

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); }
double gelu_grad(double x) {
  const double cdf = 0.5 * std::erfc(-x * kInvSqrt2);
  const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return cdf + x * pdf;
}

double activate(Activation act, double x) {
  switch (act) {
    case Activation::gelu: return gelu(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::identity: return x;
  }
  return x;
}

double activate_grad(Activation act, double x) {
  switch (act) {
    case Activation::gelu: return gelu_grad(x);
    case Activation::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

auto act_fn(Activation act) {
  return [act](double x) { return activate(act, x); };
}
auto act_grad_fn(Activation act) {
  return [act](double x) { return activate_grad(act, x); };
}

/// Forward intermediates for one chunk of rows. Kept between calls so that
/// repeated evaluations reuse their storage.
struct Cache {
  Matrix labels;
  Matrix e1_pre, e1, e2_pre, e;
  std::vector<Matrix> h;      // h[0] is the input, h[l+1] the output of layer l
  std::vector<Matrix> zn;     // pre-activation before modulation (normalized if enabled)
  std::vector<Vector> inv_sd; // per-row 1/sd for layer norm
  std::vector<Matrix> gamma;
  std::vector<Matrix> a;      // modulated pre-activation
  Matrix y;
};

/// Scratch for the reverse pass.
struct Scratch {
  Matrix dh, da, dz, dgamma, de, de2, de1, residual;
};

/// Views of the parameter (or gradient) vector following the layout order.
class Network {
 public:
  Network(const ModelConfig& config, const ParamLayout& layout, const double* params)
      : config_(config), layout_(layout), p_(params) {}

  std::size_t layers() const { return config_.hidden.size(); }

  ConstMap weight(std::size_t slot) const {
    const auto& s = layout_.slots[slot];
    return ConstMap(p_ + s.offset, s.rows, s.cols);
  }
  ConstRow bias(std::size_t slot) const {
    const auto& s = layout_.slots[slot];
    return ConstRow(p_ + s.offset, s.cols);
  }

  static std::size_t trunk_slot(std::size_t l) { return 4 + 6 * l; }
  std::size_t head_slot() const { return 4 + 6 * layers(); }

  void forward(const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& labels, Cache& c) const {
    const auto f = act_fn(config_.activation);
    const auto L = layers();
    c.h.resize(L + 1);
    c.zn.resize(L);
    c.inv_sd.resize(L);
    c.gamma.resize(L);
    c.a.resize(L);
    c.labels = labels;
    c.h[0] = x;
    if (L > 0) {
      c.e1_pre.noalias() = labels * weight(0).transpose();
      c.e1_pre.rowwise() += bias(1);
      c.e1 = c.e1_pre.unaryExpr(f);
      c.e2_pre.noalias() = c.e1 * weight(2).transpose();
      c.e2_pre.rowwise() += bias(3);
      c.e = c.e2_pre.unaryExpr(f);
    }
    for (std::size_t l = 0; l < L; ++l) {
      const auto s = trunk_slot(l);
      Matrix& z = c.zn[l];
      z.noalias() = c.h[l] * weight(s).transpose();
      z.rowwise() += bias(s + 1);
      if (config_.layer_norm) {
        const auto w = static_cast<double>(z.cols());
        c.inv_sd[l].resize(z.rows());
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
          const double mu = z.row(r).sum() / w;
          z.row(r).array() -= mu;
          const double var = z.row(r).squaredNorm() / w;
          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
          c.inv_sd[l](r) = inv;
          z.row(r) *= inv;
        }
      }
      c.gamma[l].noalias() = c.e * weight(s + 2).transpose();
      c.gamma[l].rowwise() += bias(s + 3);
      c.gamma[l].array() += 1.0;
      c.a[l].noalias() = c.e * weight(s + 4).transpose();
      c.a[l].rowwise() += bias(s + 5);
      c.a[l] += c.gamma[l].cwiseProduct(z);
      c.h[l + 1] = c.a[l].unaryExpr(f);
    }
    const auto hs = head_slot();
    c.y.noalias() = c.h[L] * weight(hs).transpose();
    c.y.rowwise() += bias(hs + 1);
    if (config_.residual_output) c.y += x.rightCols(config_.out_dim);
  }

  /// Accumulates the parameter gradient of sum(dy . y) into grad. When
  /// dlabels is non-null it receives the gradient with respect to the labels.
  void backward(const Cache& c, const Matrix& dy, double* grad, Matrix* dlabels, Scratch& w) const {
    const auto df = act_grad_fn(config_.activation);
    const auto L = layers();
    auto gw = [&](std::size_t slot) {
      const auto& s = layout_.slots[slot];
      return MutMap(grad + s.offset, s.rows, s.cols);
    };
    auto gb = [&](std::size_t slot) {
      const auto& s = layout_.slots[slot];
      return MutRow(grad + s.offset, s.cols);
    };

    const auto hs = head_slot();
    gw(hs).noalias() += dy.transpose() * c.h[L];
    gb(hs + 1) += dy.colwise().sum();
    if (L == 0) {
      if (dlabels) *dlabels = Matrix::Zero(dy.rows(), config_.label_dim);
      return;
    }
    w.dh.noalias() = dy * weight(hs);
    w.de.setZero(c.e.rows(), c.e.cols());
    for (std::size_t li = L; li-- > 0;) {
      const auto s = trunk_slot(li);
      w.da = w.dh.cwiseProduct(c.a[li].unaryExpr(df));
      w.dz = w.da.cwiseProduct(c.gamma[li]);
      w.dgamma = w.da.cwiseProduct(c.zn[li]);
      gw(s + 2).noalias() += w.dgamma.transpose() * c.e;
      gb(s + 3) += w.dgamma.colwise().sum();
      gw(s + 4).noalias() += w.da.transpose() * c.e;
      gb(s + 5) += w.da.colwise().sum();
      w.de.noalias() += w.dgamma * weight(s + 2);
      w.de.noalias() += w.da * weight(s + 4);
      if (config_.layer_norm) {
        const auto width = static_cast<double>(w.dz.cols());
        for (Eigen::Index r = 0; r < w.dz.rows(); ++r) {
          const double mean_d = w.dz.row(r).sum() / width;
          const double mean_dz = w.dz.row(r).dot(c.zn[li].row(r)) / width;
          w.dz.row(r) = c.inv_sd[li](r) *
                        (w.dz.row(r).array() - mean_d - c.zn[li].row(r).array() * mean_dz).matrix();
        }
      }
      gw(s).noalias() += w.dz.transpose() * c.h[li];
      gb(s + 1) += w.dz.colwise().sum();
      if (li > 0) w.dh.noalias() = w.dz * weight(s);
    }

    w.de2 = w.de.cwiseProduct(c.e2_pre.unaryExpr(df));
    gw(2).noalias() += w.de2.transpose() * c.e1;
    gb(3) += w.de2.colwise().sum();
    w.de1.noalias() = w.de2 * weight(2);
    w.de1.array() *= c.e1_pre.unaryExpr(df).array();
    gw(0).noalias() += w.de1.transpose() * c.labels;
    gb(1) += w.de1.colwise().sum();
    if (dlabels) dlabels->noalias() = w.de1 * weight(0);
  }

 private:
  const ModelConfig& config_;
  const ParamLayout& layout_;
  const double* p_;
};

/// Per-thread storage reused across calls.
struct Workspace {
  Cache cache;
  Scratch scratch;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

void check_batch(const ModelConfig& cfg, const BatchRef& batch) {
  require(batch.inputs.rows() >= 1, ErrorCode::invalid_argument, "batch is empty");
  require(batch.inputs.cols() == cfg.in_dim, ErrorCode::dimension_mismatch, "batch input width mismatch");
  require(batch.labels.cols() == cfg.label_dim, ErrorCode::dimension_mismatch, "batch label width mismatch");
  require(batch.targets.cols() == cfg.out_dim, ErrorCode::dimension_mismatch, "batch target width mismatch");
  require(batch.labels.rows() == batch.inputs.rows() && batch.targets.rows() == batch.inputs.rows(),
          ErrorCode::dimension_mismatch, "batch rows differ");
}

[[noreturn]] void report_non_finite(const Vector& residual_sq, Eigen::Index offset,
                                    std::span<const std::size_t> record_ids) {
  for (Eigen::Index r = 0; r < residual_sq.rows(); ++r) {
    if (!std::isfinite(residual_sq(r))) {
      const auto local = static_cast<std::size_t>(offset + r);
      const auto id = record_ids.empty() ? local : record_ids[local];
      std::ostringstream os;
      os << "non-finite loss at record " << id;
      fail(ErrorCode::non_finite, os.str());
    }
  }
  fail(ErrorCode::non_finite, "non-finite loss");
}

/// Chunk 0 accumulates straight into out.grad and later chunks are added in
/// chunk order, which gives the same sum for every thread count.
void chunked_loss_and_grad(const Model& model, const BatchRef& batch, std::span<const std::size_t> record_ids,
                           LossGrad& out) {
  const auto& cfg = model.config();
  check_batch(cfg, batch);
  const Network net(cfg, model.layout(), model.params().data());
  const Eigen::Index rows = batch.inputs.rows();
  const Eigen::Index chunks = (rows + kChunkRows - 1) / kChunkRows;
  const double scale = 2.0 / static_cast<double>(rows);
  const auto P = static_cast<Eigen::Index>(model.layout().total);

  out.grad.setZero(P);
  std::vector<Vector> extra(static_cast<std::size_t>(chunks > 1 ? chunks - 1 : 0));
  std::vector<double> losses(static_cast<std::size_t>(chunks), 0.0);
  std::vector<Eigen::Index> bad(static_cast<std::size_t>(chunks), -1);
  std::vector<Vector> bad_rows(static_cast<std::size_t>(chunks));

#pragma omp parallel for schedule(static) if (chunks > 1)
  for (Eigen::Index k = 0; k < chunks; ++k) {
    const Eigen::Index r0 = k * kChunkRows;
    const Eigen::Index nr = std::min(kChunkRows, rows - r0);
    auto& ws = workspace();
    net.forward(batch.inputs.middleRows(r0, nr), batch.labels.middleRows(r0, nr), ws.cache);
    Matrix& residual = ws.scratch.residual;
    residual = ws.cache.y - batch.targets.middleRows(r0, nr);
    double sum = 0.0;
    for (Eigen::Index r = 0; r < nr; ++r) sum += residual.row(r).squaredNorm();
    const auto ks = static_cast<std::size_t>(k);
    losses[ks] = sum;
    if (!std::isfinite(sum)) {
      bad[ks] = r0;
      bad_rows[ks] = residual.rowwise().squaredNorm();
      continue;
    }
    double* target = out.grad.data();
    if (k > 0) {
      extra[ks - 1].setZero(P);
      target = extra[ks - 1].data();
    }
    residual *= scale;
    net.backward(ws.cache, residual, target, nullptr, ws.scratch);
  }

  for (std::size_t k = 0; k < bad.size(); ++k) {
    if (bad[k] >= 0) report_non_finite(bad_rows[k], bad[k], record_ids);
  }
  double total = losses[0];
  for (std::size_t k = 1; k < losses.size(); ++k) {
    total += losses[k];
    out.grad += extra[k - 1];
  }
  out.loss = total / static_cast<double>(rows);
}

}  // namespace

// ---- Model ----------------------------------------------------------------

Model::Model(ModelConfig config, Vector params)
    : config_(std::move(config)), layout_(make_layout(config_)), params_(std::move(params)) {
  require(static_cast<std::size_t>(params_.size()) == layout_.total, ErrorCode::dimension_mismatch,
          "parameter vector length does not match the layout");
  require(params_.allFinite(), ErrorCode::non_finite, "model parameters must be finite");
}

void Model::check_params() const {
  require(static_cast<std::size_t>(params_.size()) == layout_.total, ErrorCode::dimension_mismatch,
          "parameter vector length does not match the layout");
  require(params_.allFinite(), ErrorCode::non_finite, "model parameters must be finite");
}

void Model::set_params(Vector params) {
  require(static_cast<std::size_t>(params.size()) == layout_.total, ErrorCode::dimension_mismatch,
          "parameter vector length does not match the layout");
  require(params.allFinite(), ErrorCode::non_finite, "model parameters must be finite");
  params_ = std::move(params);
}

Matrix Model::forward_batch(const Matrix& windows, const Matrix& labels) const {
  require(windows.cols() == config_.in_dim, ErrorCode::dimension_mismatch, "input window width mismatch");
  require(labels.cols() == config_.label_dim, ErrorCode::dimension_mismatch, "label width mismatch");
  require(windows.rows() == labels.rows(), ErrorCode::dimension_mismatch, "window and label counts differ");
  const Network net(config_, layout_, params_.data());
  Cache& cache = workspace().cache;
  net.forward(windows, labels, cache);
  calls_.add(static_cast<std::uint64_t>(windows.rows()));
  return cache.y;
}

Vector Model::forward(const Vector& window, const Vector& label) const {
  require(window.size() == config_.in_dim, ErrorCode::dimension_mismatch, "input window width mismatch");
  require(label.size() == config_.label_dim, ErrorCode::dimension_mismatch, "label width mismatch");
  const Network net(config_, layout_, params_.data());
  Cache& cache = workspace().cache;
  net.forward(window.transpose(), label.transpose(), cache);
  calls_.add(1);
  return cache.y.row(0).transpose();
}

Vector Model::trunk_output(const Vector& window, const Vector& label) const {
  require(window.size() == config_.in_dim, ErrorCode::dimension_mismatch, "input window width mismatch");
  require(label.size() == config_.label_dim, ErrorCode::dimension_mismatch, "label width mismatch");
  const Network net(config_, layout_, params_.data());
  Cache& cache = workspace().cache;
  net.forward(window.transpose(), label.transpose(), cache);
  Vector y = cache.y.row(0).transpose();
  if (config_.residual_output) y -= window.tail(config_.out_dim);
  return y;
}

std::string Model::hash() const {
  Fnv1a h;
  std::ostringstream arch;
  arch << config_.in_dim << ':' << config_.out_dim << ':' << config_.label_dim << ':' << config_.embed_width << ':'
       << to_string(config_.activation) << ':' << config_.residual_output << ':' << config_.layer_norm;
  for (int w : config_.hidden) arch << ':' << w;
  h.update(arch.str());
  h.update(params_.data(), static_cast<std::size_t>(params_.size()) * sizeof(double));
  return h.hex();
}

Model init_model(const ModelConfig& config, std::uint64_t seed, InitOptions options) {
  const ParamLayout layout = make_layout(config);
  Vector params = Vector::Zero(static_cast<Eigen::Index>(layout.total));
  Rng rng(derive_seed(seed, stream::init));
  for (const auto& slot : layout.slots) {
    const bool is_bias = slot.rows == 1 && slot.name.ends_with(".b");
    const bool is_film = slot.name.starts_with("film.");
    const bool is_head = slot.name == "head.w";
    if (is_bias || is_film || (is_head && options.zero_head)) continue;
    const double bound = std::sqrt(3.0 / slot.cols);
    for (std::size_t k = 0; k < slot.size(); ++k) {
      params(static_cast<Eigen::Index>(slot.offset + k)) = bound * (2.0 * rng.uniform() - 1.0);
    }
  }
  return Model(config, std::move(params));
}

// ---- losses ---------------------------------------------------------------

LossGrad loss_and_grad(const Model& model, const BatchRef& batch) {
  LossGrad out;
  chunked_loss_and_grad(model, batch, {}, out);
  return out;
}

void gather(const LiftedDataset& data, std::span<const std::size_t> indices, Batch& b) {
  const auto count = static_cast<Eigen::Index>(indices.size());
  b.inputs.resize(count, data.inputs.cols());
  b.labels.resize(count, data.labels.cols());
  b.targets.resize(count, data.targets.cols());
  for (Eigen::Index r = 0; r < count; ++r) {
    const auto i = indices[static_cast<std::size_t>(r)];
    require(i < data.size(), ErrorCode::invalid_argument, "record index out of range");
    const auto src = static_cast<Eigen::Index>(i);
    b.inputs.row(r) = data.inputs.row(src);
    b.labels.row(r) = data.labels.row(src);
    b.targets.row(r) = data.targets.row(src);
  }
}

Batch gather(const LiftedDataset& data, std::span<const std::size_t> indices) {
  Batch b;
  gather(data, indices, b);
  return b;
}

void loss_and_grad(const Model& model, const LiftedDataset& data, std::span<const std::size_t> indices,
                   LossGrad& out) {
  thread_local std::vector<std::size_t> sorted;
  thread_local Batch batch;
  sorted.assign(indices.begin(), indices.end());
  std::sort(sorted.begin(), sorted.end());
  gather(data, sorted, batch);
  chunked_loss_and_grad(model, batch.ref(), sorted, out);
}

LossGrad loss_and_grad(const Model& model, const LiftedDataset& data, std::span<const std::size_t> indices) {
  LossGrad out;
  loss_and_grad(model, data, indices, out);
  return out;
}

LossGrad loss_and_grad_serial(const Model& model, const BatchRef& batch) {
  const auto& cfg = model.config();
  check_batch(cfg, batch);
  const auto& layout = model.layout();
  const double* p = model.params().data();
  const auto L = cfg.hidden.size();
  const auto act = cfg.activation;
  auto W = [&](std::size_t slot) {
    const auto& s = layout.slots[slot];
    return ConstMap(p + s.offset, s.rows, s.cols);
  };
  auto bvec = [&](std::size_t slot) {
    const auto& s = layout.slots[slot];
    return Eigen::Map<const Vector>(p + s.offset, s.cols);
  };
  auto f = [act](const Vector& v) { return Vector(v.unaryExpr([act](double x) { return activate(act, x); })); };
  auto df = [act](const Vector& v) { return Vector(v.unaryExpr([act](double x) { return activate_grad(act, x); })); };

  LossGrad out;
  out.grad = Vector::Zero(static_cast<Eigen::Index>(layout.total));
  auto G = [&](std::size_t slot) {
    const auto& s = layout.slots[slot];
    return MutMap(out.grad.data() + s.offset, s.rows, s.cols);
  };
  auto Gb = [&](std::size_t slot) {
    const auto& s = layout.slots[slot];
    return Eigen::Map<Vector>(out.grad.data() + s.offset, s.cols);
  };

  const Eigen::Index rows = batch.inputs.rows();
  const double scale = 2.0 / static_cast<double>(rows);
  double total = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vector x = batch.inputs.row(r).transpose();
    const Vector xi = batch.labels.row(r).transpose();
    Vector e1_pre, e1, e2_pre, e;
    if (L > 0) {
      e1_pre = W(0) * xi + bvec(1);
      e1 = f(e1_pre);
      e2_pre = W(2) * e1 + bvec(3);
      e = f(e2_pre);
    }
    std::vector<Vector> h{x}, zn(L), gamma(L), a(L);
    std::vector<double> inv_sd(L, 1.0);
    for (std::size_t l = 0; l < L; ++l) {
      const auto s = 4 + 6 * l;
      Vector z = W(s) * h[l] + bvec(s + 1);
      if (cfg.layer_norm) {
        const double mu = z.mean();
        z.array() -= mu;
        inv_sd[l] = 1.0 / std::sqrt(z.squaredNorm() / static_cast<double>(z.size()) + kLayerNormEps);
        z *= inv_sd[l];
      }
      gamma[l] = (W(s + 2) * e + bvec(s + 3)).array() + 1.0;
      a[l] = gamma[l].cwiseProduct(z) + W(s + 4) * e + bvec(s + 5);
      zn[l] = z;
      h.push_back(f(a[l]));
    }
    const auto hs = 4 + 6 * L;
    Vector y = W(hs) * h[L] + bvec(hs + 1);
    if (cfg.residual_output) y += x.tail(cfg.out_dim);
    const Vector res = y - batch.targets.row(r).transpose();
    const double sq = res.squaredNorm();
    if (!std::isfinite(sq)) {
      std::ostringstream os;
      os << "non-finite loss at record " << r;
      fail(ErrorCode::non_finite, os.str());
    }
    total += sq;

    const Vector dy = scale * res;
    G(hs) += dy * h[L].transpose();
    Gb(hs + 1) += dy;
    Vector dh = W(hs).transpose() * dy;
    Vector de = L > 0 ? Vector::Zero(e.size()) : Vector();
    for (std::size_t li = L; li-- > 0;) {
      const auto s = 4 + 6 * li;
      const Vector da = dh.cwiseProduct(df(a[li]));
      Vector dz = da.cwiseProduct(gamma[li]);
      const Vector dgamma = da.cwiseProduct(zn[li]);
      G(s + 2) += dgamma * e.transpose();
      Gb(s + 3) += dgamma;
      G(s + 4) += da * e.transpose();
      Gb(s + 5) += da;
      de += W(s + 2).transpose() * dgamma + W(s + 4).transpose() * da;
      if (cfg.layer_norm) {
        const double w = static_cast<double>(dz.size());
        const double mean_d = dz.sum() / w;
        const double mean_dz = dz.dot(zn[li]) / w;
        dz = inv_sd[li] * (dz.array() - mean_d - zn[li].array() * mean_dz).matrix();
      }
      G(s) += dz * h[li].transpose();
      Gb(s + 1) += dz;
      dh = W(s).transpose() * dz;
    }
    if (L > 0) {
      const Vector de2 = de.cwiseProduct(df(e2_pre));
      G(2) += de2 * e1.transpose();
      Gb(3) += de2;
      const Vector de1 = (W(2).transpose() * de2).cwiseProduct(df(e1_pre));
      G(0) += de1 * xi.transpose();
      Gb(1) += de1;
    }
  }
  out.loss = total / static_cast<double>(rows);
  return out;
}

double mean_loss(const Model& model, const LiftedDataset& data) {
  data.validate();
  const auto& cfg = model.config();
  require(static_cast<int>(data.input_dim()) == cfg.in_dim && static_cast<int>(data.label_dim()) == cfg.label_dim &&
              static_cast<int>(data.state_dim()) == cfg.out_dim,
          ErrorCode::dimension_mismatch, "dataset does not match the model dimensions");
  const Network net(cfg, model.layout(), model.params().data());
  const auto rows = static_cast<Eigen::Index>(data.size());
  const Eigen::Index chunks = (rows + kChunkRows - 1) / kChunkRows;
  std::vector<double> sums(static_cast<std::size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (Eigen::Index k = 0; k < chunks; ++k) {
    const Eigen::Index r0 = k * kChunkRows;
    const Eigen::Index nr = std::min(kChunkRows, rows - r0);
    Cache& cache = workspace().cache;
    net.forward(data.inputs.middleRows(r0, nr), data.labels.middleRows(r0, nr), cache);
    const Matrix per_row = (cache.y - data.targets.middleRows(r0, nr)).rowwise().squaredNorm();
    double s = 0.0;
    for (Eigen::Index r = 0; r < nr; ++r) s += per_row(r);
    sums[static_cast<std::size_t>(k)] = s;
  }
  double total = 0.0;
  for (double s : sums) total += s;
  require(std::isfinite(total), ErrorCode::non_finite, "non-finite mean loss");
  return total / static_cast<double>(rows);
}

double mean_loss_serial(const Model& model, const LiftedDataset& data) {
  data.validate();
  double total = 0.0;
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(data.size()); ++r) {
    total += (model.forward(data.inputs.row(r).transpose(), data.labels.row(r).transpose()) -
              data.targets.row(r).transpose())
                 .squaredNorm();
  }
  require(std::isfinite(total), ErrorCode::non_finite, "non-finite mean loss");
  return total / static_cast<double>(data.size());
}

Matrix label_jacobian(const Model& model, const Vector& window, const Vector& label) {
  const auto& cfg = model.config();
  require(window.size() == cfg.in_dim, ErrorCode::dimension_mismatch, "input window width mismatch");
  require(label.size() == cfg.label_dim, ErrorCode::dimension_mismatch, "label width mismatch");
  const auto n = static_cast<Eigen::Index>(cfg.out_dim);
  const Network net(cfg, model.layout(), model.params().data());
  const Matrix x = window.transpose().replicate(n, 1);
  const Matrix xi = label.transpose().replicate(n, 1);
  Cache cache;
  net.forward(x, xi, cache);
  // Row k of the seed selects output k; the label gradient of that row is
  // row k of the Jacobian.
  const Matrix seed = Matrix::Identity(n, n);
  Vector scratch = Vector::Zero(static_cast<Eigen::Index>(model.layout().total));
  Matrix jac;
  Scratch work;
  net.backward(cache, seed, scratch.data(), &jac, work);
  return jac;
}

double label_gradient_norm(const Model& model, const Vector& window, const Vector& label) {
  return label_jacobian(model, window, label).norm();
}

}  // namespace stochlift
