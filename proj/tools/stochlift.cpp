// Command line front end: generate, train, evaluate, study, theory-check.

#include "stochlift/error.hpp"
#include "stochlift/experiment.hpp"
#include "stochlift/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace stochlift;

namespace {

constexpr const char* kOutputRootEnv = "STOCHLIFT_OUTPUT_ROOT";

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  long iterations = -1;
  int label_dim = -1;
  double lr = -1.0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config value, e.g. --set lifting.window=3");
  cmd->add_option("-o,--output-dir", c.output_dir, "output directory (overrides output_dir)");
  cmd->add_option("--iterations", c.iterations, "optimizer.iterations");
  cmd->add_option("--label-dim", c.label_dim, "lifting.label_dim");
  cmd->add_option("--lr", c.lr, "optimizer.lr_base");
}

ExperimentConfig resolve_config(const Common& c) {
  Json doc = read_json(c.config_path);
  std::vector<std::string> sets = c.overrides;
  if (c.iterations >= 0) sets.push_back("optimizer.iterations=" + std::to_string(c.iterations));
  if (c.label_dim >= 0) sets.push_back("lifting.label_dim=" + std::to_string(c.label_dim));
  if (c.lr >= 0.0) sets.push_back("optimizer.lr_base=" + format_double(c.lr));
  if (!c.output_dir.empty()) sets.push_back("output_dir=" + Json(c.output_dir).dump());
  doc = apply_overrides(std::move(doc), sets);
  try {
    return experiment_from_json(doc);
  } catch (const Error& e) {
    fail(e.code(), c.config_path + ": " + e.what());
  }
}

// <root>/<output_dir>/<name>, with the root taken from the environment for
// relative output directories.
fs::path run_dir(const ExperimentConfig& cfg) {
  fs::path base = cfg.output_dir;
  if (base.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) base = fs::path(root) / base;
  }
  const fs::path dir = base / cfg.name;
  fs::create_directories(dir);
  return dir;
}

Json provenance(const ExperimentConfig& cfg) {
  const Json full = to_json(cfg);
  return Json{{"config_hash", experiment_hash(cfg)}, {"seeds", full["seeds"]}, {"config", full}};
}

std::vector<std::vector<std::string>> metric_rows(const std::vector<MetricRow>& rows, const std::string& hash) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) out.push_back({r.metric, format_double(r.value), hash});
  return out;
}

TrajectorySet load_data(const fs::path& dir) {
  const fs::path path = dir / "data.traj";
  require(fs::exists(path), ErrorCode::io, "missing dataset '" + path.string() + "'; run generate first");
  return read_trajectory_set(path);
}

void check_data_matches(const fs::path& dir, const ExperimentConfig& cfg) {
  const Json side = read_json(dir / "data.json");
  const std::string expected = config_hash(dataset_json(cfg));
  require(side.value("config_hash", "") == expected, ErrorCode::config,
          "dataset in '" + dir.string() + "' was generated from a different dataset config; rerun generate");
}

int cmd_generate(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto dir = run_dir(cfg);
  const auto set = make_dataset(cfg);
  write_trajectory_set(dir / "data.traj", set);
  Json side = sidecar(set, dataset_json(cfg));
  side["experiment_hash"] = experiment_hash(cfg);
  write_json(dir / "data.json", side);
  std::cout << "generate " << (dir / "data.traj").string() << " M=" << set.size() << " T=" << set.length()
            << " n=" << set.dim() << " config_hash=" << experiment_hash(cfg) << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  const auto cfg = resolve_config(c);
  const auto dir = run_dir(cfg);
  const auto set = load_data(dir);
  check_data_matches(dir, cfg);
  const auto parts = split_dataset(cfg, set);
  const auto data = make_training_data(cfg, parts.train);
  // Surface width problems before any optimization happens.
  const auto mc = model_config(cfg, data.state_dim());
  require(static_cast<std::size_t>(mc.in_dim) == data.input_dim(), ErrorCode::dimension_mismatch,
          "model input width does not match the lifted data");

  const std::string hash = experiment_hash(cfg);
  const Json meta = provenance(cfg);
  const long every = cfg.optimizer.checkpoint_every;
  TrainCallback cb;
  if (every > 0) {
    cb = [&](long step, double, const Model& model) {
      if ((step + 1) % every == 0) save_checkpoint(dir / ("checkpoint_" + std::to_string(step + 1)), model, meta);
    };
  }
  auto outcome = run_training(cfg, data, cb);
  save_checkpoint(dir / "model", outcome.model, meta);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < outcome.log.loss.size(); ++k) {
    rows.push_back({std::to_string(k), format_double(outcome.log.lr[k]), format_double(outcome.log.loss[k])});
  }
  write_csv(dir / "train_log.csv", {"step", "lr", "loss"}, rows, {provenance_line(cfg)});
  const auto [first, last] = loss_progress(outcome.log);
  Json summary = meta;
  summary["final_loss"] = outcome.log.final_loss;
  summary["loss_first_median"] = first;
  summary["loss_last_median"] = last;
  summary["records"] = data.size();
  summary["model_hash"] = outcome.model.hash();
  write_json(dir / "train.json", summary);
  std::cout << "train final_loss=" << format_double(outcome.log.final_loss) << " records=" << data.size()
            << " model_hash=" << outcome.model.hash() << " config_hash=" << hash << '\n';
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint) {
  const auto cfg = resolve_config(c);
  const auto dir = run_dir(cfg);
  const auto set = load_data(dir);
  check_data_matches(dir, cfg);
  const fs::path base = checkpoint.empty() ? dir / "model" : fs::path(checkpoint);
  const Model model = load_checkpoint(base);
  const Json ck = checkpoint_metadata(base);
  const auto parts = split_dataset(cfg, set);
  const auto report = evaluate(cfg, model, parts.train, parts.test);

  const std::string hash = experiment_hash(cfg);
  write_csv(dir / "metrics.csv", {"metric", "value", "config_hash"}, metric_rows(report.rows, hash),
            {provenance_line(cfg)});
  Json doc = provenance(cfg);
  doc["train_config_hash"] = ck.value("extra", Json::object()).value("config_hash", "");
  doc["model_hash"] = model.hash();
  Json metrics = Json::object();
  for (const auto& r : report.rows) metrics[r.metric] = r.value;
  doc["metrics"] = metrics;
  write_json(dir / "metrics.json", doc);
  TrajectorySet generated = report.generated;
  write_trajectory_set(dir / "generated.traj", generated);
  write_json(dir / "generated.json", sidecar(generated, to_json(cfg)));
  for (const auto& r : report.rows) std::cout << r.metric << "=" << format_double(r.value) << '\n';
  std::cout << "evaluate config_hash=" << hash << '\n';
  return 0;
}

int cmd_study(const Common& c, const std::string& kind_name, int jobs) {
  const auto cfg = resolve_config(c);
  const auto kind = study_kind_from_string(kind_name);
  const auto dir = run_dir(cfg);
  const fs::path csv = dir / ("study_" + kind_name + ".csv");
  const auto rows = run_study(kind, cfg, jobs, csv);
  std::cout << "study " << kind_name << " points=" << rows.size() << " csv=" << csv.string()
            << " config_hash=" << experiment_hash(cfg) << '\n';
  return 0;
}

int cmd_theory(const Common& c, int seeds) {
  const auto cfg = resolve_config(c);
  const auto dir = run_dir(cfg);
  TheoryOptions opts;
  opts.seeds = seeds;
  const auto report = run_theory_suite(cfg, opts);
  write_json(dir / "theory.json", report.summary);
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : report.curve) rows.push_back({std::to_string(r.n_test), format_double(r.w2), std::to_string(r.seed)});
  write_csv(dir / "prop31.csv", {"n_test", "w2", "seed"}, rows, {provenance_line(cfg)});
  std::cout << report.summary.dump(2) << '\n';
  return 0;
}

void print_error(std::string_view code, const std::string& message) {
  std::cerr << Json{{"error", {{"code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic lifting experiments"};
  app.require_subcommand(1);

  Common common;
  std::string checkpoint, study_kind;
  int jobs = 1, theory_seeds = 10;

  auto* gen = app.add_subcommand("generate", "simulate and store the dataset");
  add_common(gen, common);
  auto* tr = app.add_subcommand("train", "lift the stored dataset and fit the model");
  add_common(tr, common);
  auto* ev = app.add_subcommand("evaluate", "roll out on the test split and compute metrics");
  add_common(ev, common);
  ev->add_option("--checkpoint", checkpoint, "checkpoint base path (default <run>/model)");
  auto* st = app.add_subcommand("study", "sweep one variable with train + evaluate per point");
  add_common(st, common);
  st->add_option("--kind", study_kind, "shuffle | labeldim | gradnorm | direct")->required();
  st->add_option("-j,--jobs", jobs, "points run concurrently")->check(CLI::PositiveNumber);
  auto* th = app.add_subcommand("theory-check", "interpolant, trend and Lipschitz bound checks");
  add_common(th, common);
  th->add_option("--seeds", theory_seeds, "label seeds per check")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(common);
    if (tr->parsed()) return cmd_train(common);
    if (ev->parsed()) return cmd_evaluate(common, checkpoint);
    if (st->parsed()) return cmd_study(common, study_kind, jobs);
    if (th->parsed()) return cmd_theory(common, theory_seeds);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
