#include "stochlift/experiment.hpp"

#include "stochlift/error.hpp"
#include "stochlift/metrics.hpp"
#include "stochlift/rng.hpp"
#include "stochlift/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace stochlift {

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  fail(ErrorCode::config, path + ": " + what);
}

// Reads one JSON object, remembering which keys were consumed so that
// anything left over is reported as unknown.
class Section {
 public:
  Section(const Json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const char* key) {
    used_.insert(key);
    const auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  void get(const char* key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) config_error(key_path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, double& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) config_error(key_path(key), "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, int& out) {
    long tmp = out;
    get(key, tmp);
    if (tmp < std::numeric_limits<int>::min() || tmp > std::numeric_limits<int>::max()) {
      config_error(key_path(key), "integer out of range");
    }
    out = static_cast<int>(tmp);
  }
  void get(const char* key, long& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) config_error(key_path(key), "expected an integer");
      out = v->get<long>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const auto* v = find(key)) {
      if (!v->is_number_unsigned()) config_error(key_path(key), "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) config_error(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T>
  void get(const char* key, std::vector<T>& out) {
    if (const auto* v = find(key)) {
      if (!v->is_array()) config_error(key_path(key), "expected an array");
      std::vector<T> tmp;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const Json& e = (*v)[i];
        const std::string where = key_path(key) + "[" + std::to_string(i) + "]";
        if constexpr (std::is_same_v<T, std::string>) {
          if (!e.is_string()) config_error(where, "expected a string");
        } else if constexpr (std::is_unsigned_v<T>) {
          if (!e.is_number_unsigned()) config_error(where, "expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
          if (!e.is_number_integer()) config_error(where, "expected an integer");
        } else {
          if (!e.is_number()) config_error(where, "expected a number");
        }
        tmp.push_back(e.get<T>());
      }
      out = std::move(tmp);
    }
  }
  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string name;
    if (const auto* v = find(key)) {
      if (!v->is_string()) config_error(key_path(key), "expected a string");
      name = v->get<std::string>();
      try {
        out = parse(name);
      } catch (const Error& e) {
        config_error(key_path(key), e.what());
      }
    }
  }

  /// Nested section, or an empty object if absent.
  Section sub(const char* key) {
    static const Json empty = Json::object();
    const auto* v = find(key);
    return Section(v ? *v : empty, key_path(key));
  }

  void finish() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!used_.count(it.key())) config_error(key_path(it.key().c_str()), "unknown key");
    }
  }

 private:
  const Json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

DatasetKind dataset_kind_from_string(std::string_view name) {
  if (name == "duffing") return DatasetKind::duffing;
  if (name == "wave") return DatasetKind::wave;
  fail(ErrorCode::invalid_argument, "unknown dataset kind '" + std::string(name) + "'");
}

std::string_view to_string(DatasetKind kind) { return kind == DatasetKind::duffing ? "duffing" : "wave"; }

bool has_metric(const ExperimentConfig& cfg, std::string_view name) {
  const auto& m = cfg.evaluation.metrics;
  return std::find(m.begin(), m.end(), name) != m.end();
}

Json duffing_json(const DuffingConfig& c) {
  return Json{{"m0", {c.m0[0], c.m0[1]}}, {"var0", c.var0},         {"t_end", c.t_end}, {"dt_int", c.dt_int},
              {"store_every", c.store_every}, {"n_traj", c.n_traj}, {"noise", c.noise}};
}

Json wave_json(const WaveConfig& c) {
  return Json{{"grid", c.grid},
              {"domain_length", c.domain_length},
              {"t_end", c.t_end},
              {"n_stored", c.n_stored},
              {"cfl", c.cfl},
              {"bump_width", c.bump_width},
              {"n_traj", c.n_traj},
              {"medium",
               {{"spectral_peak", c.medium.spectral_peak},
                {"spectral_width", c.medium.spectral_width},
                {"roughness", c.medium.roughness},
                {"amplitude_log_sd", c.medium.amplitude_log_sd},
                {"c0", c.medium.c0}}}};
}

// Final frame of every trajectory.
Matrix final_frames(const TrajectorySet& set) { return set.marginal(set.length() - 1); }

// The frames (0, T - 1) of every trajectory, to compare with direct-map output.
TrajectorySet endpoints(const TrajectorySet& set) {
  TrajectorySet out = set;
  for (auto& tr : out.trajectories) {
    Matrix s(2, tr.states.cols());
    s.row(0) = tr.states.row(0);
    s.row(1) = tr.states.row(tr.states.rows() - 1);
    tr.states = std::move(s);
  }
  return out;
}

TrajectorySet to_physical(const TrajectorySet& set) {
  return set.normalized() ? denormalize(set) : set;
}

RegionSpec region_for(const ExperimentConfig& cfg, const TrajectorySet& physical_test) {
  const Vector u0 = physical_test.trajectories.front().states.row(0).transpose();
  RegionSpec region = boundary_region(u0, cfg.evaluation.region_fraction);
  if (!cfg.evaluation.region_indices.empty()) {
    region.kind = RegionSpec::Kind::index_set;
    region.indices = cfg.evaluation.region_indices;
  }
  return region;
}

long resolve_time(long t, std::size_t T) {
  const long TT = static_cast<long>(T);
  const long r = t < 0 ? TT + t : t;
  require(r >= 0 && r < TT, ErrorCode::invalid_argument, "w2 time index " + std::to_string(t) + " out of range");
  return r;
}

double median(std::vector<double> v) {
  require(!v.empty(), ErrorCode::invalid_argument, "median of nothing");
  std::sort(v.begin(), v.end());
  const auto k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(!name.empty(), ErrorCode::config, "name must not be empty");
  if (dataset.kind == DatasetKind::duffing) dataset.duffing.validate();
  else dataset.wave.validate();
  require(dataset.stride >= 1, ErrorCode::config, "dataset.stride must be >= 1");
  require(lifting.label_dim >= 1, ErrorCode::config, "lifting.label_dim must be >= 1");
  require(lifting.window >= 1, ErrorCode::config, "lifting.window must be >= 1");
  require(lifting.shuffle_fraction >= 0.0 && lifting.shuffle_fraction <= 1.0, ErrorCode::config,
          "lifting.shuffle_fraction must lie in [0, 1]");
  require(!(lifting.direct_map && lifting.shuffle_fraction > 0.0), ErrorCode::config,
          "lifting.direct_map and lifting.shuffle_fraction are exclusive");
  require(!(lifting.direct_map && lifting.window != 1), ErrorCode::config,
          "lifting.direct_map needs lifting.window = 1");
  for (int h : model.hidden) require(h >= 1, ErrorCode::config, "model.hidden widths must be >= 1");
  require(model.embed_width >= 1, ErrorCode::config, "model.embed_width must be >= 1");
  optimizer.opt.validate();
  require(optimizer.checkpoint_every >= 0, ErrorCode::config, "optimizer.checkpoint_every must be >= 0");
  require(evaluation.test_fraction > 0.0 && evaluation.test_fraction < 1.0, ErrorCode::config,
          "evaluation.test_fraction must lie in (0, 1)");
  for (const auto& m : evaluation.metrics) {
    require(std::find(kMetricNames.begin(), kMetricNames.end(), m) != kMetricNames.end(), ErrorCode::config,
            "evaluation.metrics: unknown metric '" + m + "'");
  }
  require(evaluation.n_proj >= 1, ErrorCode::config, "evaluation.n_proj must be >= 1");
  require(evaluation.region_fraction > 0.0, ErrorCode::config, "evaluation.region_fraction must be positive");
  require(evaluation.gradnorm_samples >= 1, ErrorCode::config, "evaluation.gradnorm_samples must be >= 1");
  require(evaluation.ensemble_per_initial >= 1, ErrorCode::config, "evaluation.ensemble_per_initial must be >= 1");

  // Frame count after subsampling must leave room for the window.
  const long frames = dataset.kind == DatasetKind::duffing ? dataset.duffing.frames() : dataset.wave.n_stored;
  const long T = (frames - 1) / dataset.stride + 1;
  require(T >= 2, ErrorCode::config, "fewer than two frames remain after subsampling");
  require(lifting.window < T, ErrorCode::config,
          "lifting.window (" + std::to_string(lifting.window) + ") must be smaller than the frame count (" +
              std::to_string(T) + ")");
}

Json to_json(const ExperimentConfig& c) {
  const auto& o = c.optimizer.opt;
  const auto& e = c.evaluation;
  return Json{
      {"name", c.name},
      {"dataset",
       {{"kind", to_string(c.dataset.kind)},
        {"duffing", duffing_json(c.dataset.duffing)},
        {"wave", wave_json(c.dataset.wave)},
        {"stride", c.dataset.stride},
        {"normalize", c.dataset.normalize}}},
      {"lifting",
       {{"label_dim", c.lifting.label_dim},
        {"window", c.lifting.window},
        {"law", to_string(c.lifting.law)},
        {"shuffle_fraction", c.lifting.shuffle_fraction},
        {"direct_map", c.lifting.direct_map}}},
      {"model",
       {{"hidden", c.model.hidden},
        {"embed_width", c.model.embed_width},
        {"activation", to_string(c.model.activation)},
        {"residual_output", c.model.residual_output},
        {"layer_norm", c.model.layer_norm},
        {"zero_head", c.model.zero_head}}},
      {"optimizer",
       {{"batch_size", o.batch_size},
        {"lr_base", o.lr_base},
        {"weight_decay", o.weight_decay},
        {"iterations", o.iterations},
        {"adam_beta1", o.adam_beta1},
        {"adam_beta2", o.adam_beta2},
        {"adam_eps", o.adam_eps},
        {"clip_norm", o.clip_norm},
        {"checkpoint_every", c.optimizer.checkpoint_every}}},
      {"evaluation",
       {{"test_fraction", e.test_fraction},
        {"metrics", e.metrics},
        {"w2_times", e.w2_times},
        {"n_proj", e.n_proj},
        {"region_fraction", e.region_fraction},
        {"region_indices", e.region_indices},
        {"gradnorm_samples", e.gradnorm_samples},
        {"ensemble_per_initial", e.ensemble_per_initial},
        {"clamp", e.clamp}}},
      {"seeds",
       {{"data", c.seeds.data},
        {"split", c.seeds.split},
        {"labels", c.seeds.labels},
        {"shuffle", c.seeds.shuffle},
        {"init", c.seeds.init},
        {"batches", c.seeds.batches},
        {"rollout", c.seeds.rollout},
        {"eval", c.seeds.eval}}},
      {"output_dir", c.output_dir},
  };
}

ExperimentConfig experiment_from_json(const Json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  root.get("name", c.name);
  root.get("output_dir", c.output_dir);
  {
    auto s = root.sub("dataset");
    s.get_enum("kind", c.dataset.kind, dataset_kind_from_string);
    s.get("stride", c.dataset.stride);
    s.get("normalize", c.dataset.normalize);
    {
      auto d = s.sub("duffing");
      std::vector<double> m0{c.dataset.duffing.m0[0], c.dataset.duffing.m0[1]};
      d.get("m0", m0);
      if (m0.size() != 2) config_error("dataset.duffing.m0", "expected two numbers");
      c.dataset.duffing.m0 = {m0[0], m0[1]};
      d.get("var0", c.dataset.duffing.var0);
      d.get("t_end", c.dataset.duffing.t_end);
      d.get("dt_int", c.dataset.duffing.dt_int);
      d.get("store_every", c.dataset.duffing.store_every);
      d.get("n_traj", c.dataset.duffing.n_traj);
      d.get("noise", c.dataset.duffing.noise);
      d.finish();
    }
    {
      auto w = s.sub("wave");
      auto& wc = c.dataset.wave;
      w.get("grid", wc.grid);
      w.get("domain_length", wc.domain_length);
      w.get("t_end", wc.t_end);
      w.get("n_stored", wc.n_stored);
      w.get("cfl", wc.cfl);
      w.get("bump_width", wc.bump_width);
      w.get("n_traj", wc.n_traj);
      auto m = w.sub("medium");
      m.get("spectral_peak", wc.medium.spectral_peak);
      m.get("spectral_width", wc.medium.spectral_width);
      m.get("roughness", wc.medium.roughness);
      m.get("amplitude_log_sd", wc.medium.amplitude_log_sd);
      m.get("c0", wc.medium.c0);
      m.finish();
      w.finish();
    }
    s.finish();
  }
  {
    auto s = root.sub("lifting");
    s.get("label_dim", c.lifting.label_dim);
    s.get("window", c.lifting.window);
    s.get_enum("law", c.lifting.law, label_law_from_string);
    s.get("shuffle_fraction", c.lifting.shuffle_fraction);
    s.get("direct_map", c.lifting.direct_map);
    s.finish();
  }
  {
    auto s = root.sub("model");
    s.get("hidden", c.model.hidden);
    s.get("embed_width", c.model.embed_width);
    s.get_enum("activation", c.model.activation, activation_from_string);
    s.get("residual_output", c.model.residual_output);
    s.get("layer_norm", c.model.layer_norm);
    s.get("zero_head", c.model.zero_head);
    s.finish();
  }
  {
    auto s = root.sub("optimizer");
    auto& o = c.optimizer.opt;
    s.get("batch_size", o.batch_size);
    s.get("lr_base", o.lr_base);
    s.get("weight_decay", o.weight_decay);
    s.get("iterations", o.iterations);
    s.get("adam_beta1", o.adam_beta1);
    s.get("adam_beta2", o.adam_beta2);
    s.get("adam_eps", o.adam_eps);
    s.get("clip_norm", o.clip_norm);
    s.get("checkpoint_every", c.optimizer.checkpoint_every);
    s.finish();
  }
  {
    auto s = root.sub("evaluation");
    auto& e = c.evaluation;
    s.get("test_fraction", e.test_fraction);
    s.get("metrics", e.metrics);
    s.get("w2_times", e.w2_times);
    s.get("n_proj", e.n_proj);
    s.get("region_fraction", e.region_fraction);
    s.get("region_indices", e.region_indices);
    s.get("gradnorm_samples", e.gradnorm_samples);
    s.get("ensemble_per_initial", e.ensemble_per_initial);
    s.get("clamp", e.clamp);
    s.finish();
  }
  {
    auto s = root.sub("seeds");
    s.get("data", c.seeds.data);
    s.get("split", c.seeds.split);
    s.get("labels", c.seeds.labels);
    s.get("shuffle", c.seeds.shuffle);
    s.get("init", c.seeds.init);
    s.get("batches", c.seeds.batches);
    s.get("rollout", c.seeds.rollout);
    s.get("eval", c.seeds.eval);
    s.finish();
  }
  root.finish();
  c.optimizer.opt.seed = c.seeds.batches;
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const Json doc = read_json(path);
  try {
    return experiment_from_json(doc);
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::string experiment_hash(const ExperimentConfig& config) { return config_hash(to_json(config)); }

Json dataset_json(const ExperimentConfig& config) {
  Json doc = to_json(config)["dataset"];
  doc["seed"] = config.seeds.data;
  return doc;
}

TrajectorySet make_dataset(const ExperimentConfig& config) {
  config.validate();
  TrajectorySet raw = config.dataset.kind == DatasetKind::duffing
                          ? simulate_duffing(config.dataset.duffing, config.seeds.data)
                          : generate_wave_set(config.dataset.wave, config.seeds.data);
  if (config.dataset.normalize) raw = normalize(raw);
  return config.dataset.stride > 1 ? subsample(raw, config.dataset.stride) : raw;
}

TrainTestSplit split_dataset(const ExperimentConfig& config, const TrajectorySet& set) {
  auto [train, test] = split(set, config.evaluation.test_fraction, config.seeds.split);
  return {std::move(train), std::move(test)};
}

LiftedDataset make_training_data(const ExperimentConfig& config, const TrajectorySet& train) {
  const auto& l = config.lifting;
  const auto d = static_cast<std::size_t>(l.label_dim);
  if (l.direct_map) return make_direct_pairs(train, d, config.seeds.labels, l.law);
  LiftedDataset data = lift(train, d, static_cast<std::size_t>(l.window), l.law, config.seeds.labels);
  if (l.shuffle_fraction > 0.0) data = shuffle_pairs(data, l.shuffle_fraction, config.seeds.shuffle);
  return data;
}

ModelConfig model_config(const ExperimentConfig& config, std::size_t state_dim) {
  ModelConfig m;
  const int n = static_cast<int>(state_dim);
  m.in_dim = config.lifting.direct_map ? n : n * config.lifting.window;
  m.out_dim = n;
  m.hidden = config.model.hidden;
  m.label_dim = config.lifting.label_dim;
  m.embed_width = config.model.embed_width;
  m.activation = config.model.activation;
  // The direct map predicts the final state itself, not an increment.
  m.residual_output = config.model.residual_output && !config.lifting.direct_map;
  m.layer_norm = config.model.layer_norm;
  m.validate();
  return m;
}

TrainOutcome run_training(const ExperimentConfig& config, const LiftedDataset& data, const TrainCallback& callback) {
  const ModelConfig mc = model_config(config, data.state_dim());
  if (static_cast<std::size_t>(mc.in_dim) != data.input_dim()) {
    std::ostringstream os;
    os << "model input width " << mc.in_dim << " does not match the lifted input width " << data.input_dim();
    fail(ErrorCode::dimension_mismatch, os.str());
  }
  const Model init = init_model(mc, config.seeds.init, InitOptions{config.model.zero_head});
  OptConfig opt = config.optimizer.opt;
  opt.seed = config.seeds.batches;
  auto [model, log] = train(init, data, opt, callback);
  return {std::move(model), std::move(log)};
}

std::optional<double> EvalReport::find(const std::string& metric) const {
  for (const auto& r : rows) {
    if (r.metric == metric) return r.value;
  }
  return std::nullopt;
}

std::vector<MetricRow> self_distance_baselines(const ExperimentConfig& config, const TrajectorySet& test) {
  require(test.size() >= 2, ErrorCode::precondition, "self-distance needs at least two test trajectories");
  const auto [a_idx, b_idx] = split_indices(test.size(), 0.5, derive_seed(config.seeds.eval, stream::split));
  const TrajectorySet phys = to_physical(test);
  TrajectorySet a = phys, b = phys;
  a.trajectories.clear();
  b.trajectories.clear();
  for (auto i : a_idx) a.trajectories.push_back(phys.trajectories[i]);
  for (auto i : b_idx) b.trajectories.push_back(phys.trajectories[i]);
  if (config.lifting.direct_map) {
    a = endpoints(a);
    b = endpoints(b);
  }
  std::vector<MetricRow> rows;
  const auto& e = config.evaluation;
  rows.push_back({"w2_final_self", w2_auto(final_frames(a), final_frames(b), e.n_proj, config.seeds.eval)});
  if (has_metric(config, "wct")) {
    rows.push_back({"wct_self", wct(a, b, region_for(config, phys)).value});
  }
  return rows;
}

EvalReport evaluate(const ExperimentConfig& config, const Model& model, const TrajectorySet& train,
                    const TrajectorySet& test) {
  config.validate();
  test.validate();
  const auto& e = config.evaluation;
  const bool direct = config.lifting.direct_map;
  const std::size_t m = direct ? 1 : static_cast<std::size_t>(config.lifting.window);
  require(static_cast<std::size_t>(model.config().in_dim) == m * test.dim(), ErrorCode::dimension_mismatch,
          "checkpoint input width does not match the test data and window");

  std::vector<Matrix> initials;
  for (const auto& w : initial_windows(test, m)) {
    for (int k = 0; k < e.ensemble_per_initial; ++k) initials.push_back(w);
  }
  const long steps = direct ? 1 : static_cast<long>(test.length() - m);
  RolloutOptions ro;
  ro.law = config.lifting.law;
  ro.clamp = e.clamp;
  ro.dt_stored = test.trajectories.front().dt_stored;

  EvalReport report;
  report.generated = generate_ensemble(model, initials, steps, config.seeds.rollout, ro);
  report.generated.normalization = test.normalization;

  const TrajectorySet truth_full = to_physical(test);
  const TrajectorySet truth = direct ? endpoints(truth_full) : truth_full;
  TrajectorySet gen = to_physical(report.generated);

  auto add = [&report](std::string name, double value) { report.rows.push_back({std::move(name), value}); };

  if (has_metric(config, "w2_final")) {
    bool exact = false;
    add("w2_final", w2_auto(final_frames(gen), final_frames(truth), e.n_proj, config.seeds.eval, &exact));
    add("w2_final_exact", exact ? 1.0 : 0.0);
  }
  if (has_metric(config, "w2_times")) {
    for (long t : e.w2_times) {
      const auto r = static_cast<std::size_t>(resolve_time(t, truth.length()));
      add("w2_t" + std::to_string(r), w2_auto(gen.marginal(r), truth.marginal(r), e.n_proj, config.seeds.eval));
    }
  }
  if (has_metric(config, "wct")) {
    // A direct map yields only the endpoint frames, so its crossing times
    // are resolved on that coarse grid while the reference keeps every frame.
    const auto region = region_for(config, truth_full);
    const auto r = wct(truth_full, gen, region);
    add("wct", r.value);
    add("wct_never_true", static_cast<double>(r.never_true));
    add("wct_never_generated", static_cast<double>(r.never_generated));
  }
  if (has_metric(config, "wim")) add("wim", wim(truth, gen));
  if (has_metric(config, "lipschitz")) {
    const LiftedDataset data = make_training_data(config, train);
    const auto lip = lipschitz_constant(data);
    add("lipschitz", lip.value);
    add("lipschitz_bound", max_target_gap(data) / min_label_gap(data.labels));
  }
  if (has_metric(config, "gradnorm")) {
    Rng rng(derive_seed(config.seeds.eval, stream::labels, 0x9a));
    const auto n = test.dim();
    const auto T = test.length();
    std::vector<double> norms;
    Vector window(static_cast<Eigen::Index>(m * n));
    Vector label(config.lifting.label_dim);
    for (int s = 0; s < e.gradnorm_samples; ++s) {
      const auto& st = test.trajectories[static_cast<std::size_t>(rng.below(test.size()))].states;
      const auto last = direct ? 0 : static_cast<std::size_t>(m - 1 + rng.below(T - m));
      for (std::size_t w = 0; w < m; ++w) {
        window.segment(static_cast<Eigen::Index>(w * n), static_cast<Eigen::Index>(n)) =
            st.row(static_cast<Eigen::Index>(last + 1 - m + w)).transpose();
      }
      draw_label(rng, config.lifting.law, label);
      norms.push_back(label_gradient_norm(model, window, label));
    }
    add("gradnorm_median", median(norms));
    add("gradnorm_mean", std::accumulate(norms.begin(), norms.end(), 0.0) / static_cast<double>(norms.size()));
  }
  for (auto& row : self_distance_baselines(config, test)) report.rows.push_back(std::move(row));
  return report;
}

PointResult run_point(const ExperimentConfig& config) {
  const auto set = make_dataset(config);
  const auto parts = split_dataset(config, set);
  const auto data = make_training_data(config, parts.train);
  auto outcome = run_training(config, data);
  auto report = evaluate(config, outcome.model, parts.train, parts.test);
  return PointResult{config, experiment_hash(config), outcome.log.final_loss, std::move(report),
                     std::move(outcome.model)};
}

std::string_view to_string(StudyKind kind) noexcept {
  switch (kind) {
    case StudyKind::shuffle: return "shuffle";
    case StudyKind::labeldim: return "labeldim";
    case StudyKind::gradnorm: return "gradnorm";
    case StudyKind::direct: return "direct";
  }
  return "?";
}

StudyKind study_kind_from_string(std::string_view name) {
  for (auto k : {StudyKind::shuffle, StudyKind::labeldim, StudyKind::gradnorm, StudyKind::direct}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::invalid_argument, "unknown study '" + std::string(name) + "'");
}

std::vector<double> study_values(StudyKind kind) {
  switch (kind) {
    case StudyKind::shuffle: return {0.0, 0.25, 0.5, 0.75, 1.0};
    case StudyKind::labeldim: return {1, 2, 8, 32, 128, 512};
    case StudyKind::gradnorm: return {2, 512};
    case StudyKind::direct: return {0, 1};
  }
  return {};
}

ExperimentConfig study_point(StudyKind kind, const ExperimentConfig& base, double value) {
  ExperimentConfig c = base;
  auto ensure = [&c](const char* metric) {
    if (!has_metric(c, metric)) c.evaluation.metrics.emplace_back(metric);
  };
  switch (kind) {
    case StudyKind::shuffle:
      c.lifting.shuffle_fraction = value;
      ensure("w2_final");
      break;
    case StudyKind::labeldim:
    case StudyKind::gradnorm:
      c.lifting.label_dim = static_cast<int>(value);
      if (kind == StudyKind::gradnorm) ensure("gradnorm");
      break;
    case StudyKind::direct:
      c.lifting.direct_map = value != 0.0;
      if (c.lifting.direct_map) c.lifting.window = 1;
      ensure("w2_final");
      ensure("wct");
      break;
  }
  std::ostringstream os;
  os << base.name << "-" << to_string(kind) << "-" << format_double(value);
  c.name = os.str();
  c.validate();
  return c;
}

std::string provenance_line(const ExperimentConfig& config) {
  const auto& s = config.seeds;
  std::ostringstream os;
  os << "config_hash=" << experiment_hash(config) << " seeds=data:" << s.data << ",split:" << s.split
     << ",labels:" << s.labels << ",shuffle:" << s.shuffle << ",init:" << s.init << ",batches:" << s.batches
     << ",rollout:" << s.rollout << ",eval:" << s.eval;
  return os.str();
}

void write_study_csv(const std::filesystem::path& path, StudyKind kind, const ExperimentConfig& base,
                     const std::vector<StudyRow>& rows) {
  std::vector<std::string> metrics;
  for (const auto& r : rows) {
    for (const auto& m : r.metrics) {
      if (std::find(metrics.begin(), metrics.end(), m.metric) == metrics.end()) metrics.push_back(m.metric);
    }
  }
  std::vector<std::string> header{"study", "value", "final_loss"};
  header.insert(header.end(), metrics.begin(), metrics.end());
  header.emplace_back("config_hash");
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) {
    std::vector<std::string> line{std::string(to_string(kind)), format_double(r.value), format_double(r.final_loss)};
    for (const auto& name : metrics) {
      const auto it = std::find_if(r.metrics.begin(), r.metrics.end(), [&](const auto& m) { return m.metric == name; });
      line.push_back(it == r.metrics.end() ? "" : format_double(it->value));
    }
    line.push_back(r.hash);
    body.push_back(std::move(line));
  }
  write_csv(path, header, body, {provenance_line(base)});
}

std::vector<StudyRow> run_study(StudyKind kind, const ExperimentConfig& base, int jobs,
                                const std::filesystem::path& csv_path) {
  require(jobs >= 1, ErrorCode::invalid_argument, "jobs must be >= 1");
  const auto values = study_values(kind);
  std::vector<ExperimentConfig> points;
  for (double v : values) points.push_back(study_point(kind, base, v));

  const auto count = static_cast<long>(points.size());
  std::vector<std::optional<StudyRow>> done(points.size());
  std::vector<std::exception_ptr> errors(points.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
  for (long i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      auto r = run_point(points[k]);
      done[k] = StudyRow{values[k], r.hash, r.final_loss, std::move(r.report.rows)};
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }

  std::vector<StudyRow> rows;
  for (auto& r : done) {
    if (r) rows.push_back(std::move(*r));
  }
  if (!csv_path.empty()) write_study_csv(csv_path, kind, base, rows);
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error& e) {
      fail(e.code(), "study point " + std::to_string(k) + " (value " + format_double(values[k]) + "): " + e.what());
    }
  }
  return rows;
}

Json apply_overrides(Json doc, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::config, "override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      require(!part.empty(), ErrorCode::config, "override key '" + key + "' has an empty component");
      if (!node->is_object()) fail(ErrorCode::config, "override key '" + key + "' descends into a non-object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      if (node->is_null()) *node = Json::object();
      start = dot + 1;
    }
  }
  return doc;
}

TrajectorySet transition_slice(const TrajectorySet& set, std::size_t t, std::size_t count) {
  require(t + 1 < set.length(), ErrorCode::invalid_argument, "slice time out of range");
  require(count >= 1 && count <= set.size(), ErrorCode::invalid_argument, "slice count exceeds the set");
  TrajectorySet out = set;
  out.trajectories.resize(count);
  for (auto& tr : out.trajectories) {
    tr.states = Matrix(tr.states.middleRows(static_cast<Eigen::Index>(t), 2));
    tr.t0 += static_cast<double>(t) * tr.dt_stored;
  }
  return out;
}

TheoryReport run_theory_suite(const ExperimentConfig& config, const TheoryOptions& options) {
  require(options.seeds >= 1, ErrorCode::invalid_argument, "theory suite needs at least one seed");
  const auto set = make_dataset(config);
  require(set.normalized(), ErrorCode::precondition, "the theory checks need normalized data");
  const auto parts = split_dataset(config, set);
  require(!options.test_sizes.empty(), ErrorCode::invalid_argument, "theory suite needs test sizes");
  const auto largest = *std::max_element(options.test_sizes.begin(), options.test_sizes.end());
  require(parts.train.size() >= options.anchors && parts.test.size() >= largest, ErrorCode::precondition,
          "theory checks need " + std::to_string(options.anchors) + " training and " + std::to_string(largest) +
              " test trajectories (have " + std::to_string(parts.train.size()) + " and " +
              std::to_string(parts.test.size()) + ")");
  const auto anchors_set = transition_slice(parts.train, options.time, options.anchors);

  TheoryReport report;
  Json interp = Json::object();
  std::vector<double> residuals, conditions;
  std::size_t well_conditioned = 0, trend_holds = 0;
  for (int s = 0; s < options.seeds; ++s) {
    const auto seed = derive_seed(config.seeds.labels, stream::labels, static_cast<std::uint64_t>(s));
    const auto anchors = lift(anchors_set, options.anchor_label_dim, 1, LabelLaw::sphere, seed);
    const auto ai = build_affine_interpolant(anchors);
    residuals.push_back(max_anchor_residual(ai));
    conditions.push_back(ai.condition_number);
    if (ai.condition_number <= 10.0 && residuals.back() <= 1e-8) ++well_conditioned;

    Prop31Options po;
    po.test_sizes = options.test_sizes;
    po.time = options.time;
    po.seed = seed;
    po.law = LabelLaw::sphere;
    po.n_proj = config.evaluation.n_proj;
    const TransitionMap map = [&ai](const Vector& x, const Vector& xi) { return eval_affine_interpolant(ai, x, xi); };
    const auto trend = check_prop31_trend(map, anchors, parts.test, po);
    if (trend.decreasing) ++trend_holds;
    for (const auto& r : trend.rows) report.curve.push_back(r);
  }
  interp["max_anchor_residual"] = *std::max_element(residuals.begin(), residuals.end());
  interp["median_condition_number"] = median(conditions);
  interp["fraction_residual_and_condition_ok"] = static_cast<double>(well_conditioned) / options.seeds;
  interp["fraction_trend_decreasing"] = static_cast<double>(trend_holds) / options.seeds;
  report.summary["interpolant"] = interp;

  // Lipschitz constants of lifted subsets with unit labels.
  std::vector<LipschitzObservation> obs;
  for (auto M : options.bound_trajectories) {
    require(M >= 2 && M <= parts.train.size(), ErrorCode::invalid_argument, "bound trajectory count out of range");
    TrajectorySet sub = parts.train;
    sub.trajectories.resize(M);
    for (auto d : options.bound_label_dims) {
      for (int s = 0; s < options.seeds; ++s) {
        const auto seed = derive_seed(config.seeds.labels, stream::labels, 0x1000 + static_cast<std::uint64_t>(s));
        const auto data = lift(sub, d, 1, LabelLaw::sphere, seed);
        obs.push_back({sub.dim(), sub.length(), M, d, lipschitz_constant(data).value});
      }
    }
  }
  // Fit the constant on the smallest configuration, test on the others.
  const auto M0 = options.bound_trajectories.front();
  const auto d0 = options.bound_label_dims.front();
  std::vector<LipschitzObservation> fit_set, check_set;
  for (const auto& o : obs) (o.M == M0 && o.d == d0 ? fit_set : check_set).push_back(o);
  const double c = fit_universal_c(fit_set, options.delta);
  Json bound = Json::object();
  bound["fitted_c"] = c;
  bound["delta"] = options.delta;
  std::size_t claimed = 0, covered = 0;
  Json rows = Json::array();
  for (const auto& o : check_set) {
    Json r{{"M", o.M}, {"d", o.d}, {"value", o.value}};
    if (c > 0.0) {
      try {
        const double rhs = prop32_rhs(o.n, o.T, o.M, o.d, options.delta, c);
        r["bound"] = rhs;
        ++claimed;
        if (o.value <= rhs) ++covered;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::precondition) throw;
        r["bound"] = nullptr;
      }
    }
    rows.push_back(std::move(r));
  }
  bound["observations"] = rows;
  bound["claimed"] = claimed;
  bound["coverage"] = claimed ? static_cast<double>(covered) / static_cast<double>(claimed) : 0.0;
  report.summary["lipschitz_bound"] = bound;
  report.summary["config_hash"] = experiment_hash(config);
  return report;
}

}  // namespace stochlift
