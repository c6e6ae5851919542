#include "stochlift/lifting.hpp"

#include "stochlift/error.hpp"
#include "stochlift/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

namespace stochlift {

std::string_view to_string(LabelLaw law) noexcept {
  return law == LabelLaw::sphere ? "sphere" : "gaussian";
}

LabelLaw label_law_from_string(std::string_view name) {
  if (name == "gaussian") return LabelLaw::gaussian;
  if (name == "sphere") return LabelLaw::sphere;
  fail(ErrorCode::invalid_argument, "unknown label law '" + std::string(name) + "'");
}

void draw_label(Rng& rng, LabelLaw law, Eigen::Ref<Vector> out) {
  for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = rng.normal();
  if (law == LabelLaw::sphere) {
    double norm = out.norm();
    while (norm == 0.0) {  // probability zero, but keep the contract
      for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = rng.normal();
      norm = out.norm();
    }
    out /= norm;
  }
}

Matrix draw_labels(std::size_t count, std::size_t dim, LabelLaw law, std::uint64_t seed) {
  require(dim >= 1, ErrorCode::invalid_argument, "label dimension must be >= 1");
  Rng rng(derive_seed(seed, stream::labels));
  Matrix labels(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  Vector row(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    draw_label(rng, law, row);
    labels.row(i) = row.transpose();
  }
  return labels;
}

void LiftedDataset::validate() const {
  const auto n = size();
  require(n >= 1, ErrorCode::invalid_argument, "lifted dataset is empty");
  require(static_cast<std::size_t>(targets.rows()) == n && static_cast<std::size_t>(labels.rows()) == n,
          ErrorCode::dimension_mismatch, "inputs, targets and labels differ in length");
  require(trajectory.size() == n && time.size() == n, ErrorCode::dimension_mismatch,
          "record provenance length mismatch");
  require(input_dim() == input_states() * state_dim(), ErrorCode::dimension_mismatch,
          "input width is not window * state dimension");
  require(label_dim() >= 1, ErrorCode::invalid_argument, "label dimension must be >= 1");
}

LiftedDataset lift(const TrajectorySet& set, std::size_t label_dim, std::size_t window, LabelLaw law,
                   std::uint64_t seed) {
  set.validate();
  require(label_dim >= 1, ErrorCode::invalid_argument, "label_dim must be >= 1");
  const std::size_t T = set.length();
  const std::size_t n = set.dim();
  if (window < 1 || window >= T) {
    std::ostringstream os;
    os << "window " << window << " must satisfy 1 <= window < T = " << T;
    fail(ErrorCode::invalid_argument, os.str());
  }
  const std::size_t per_traj = T - window;
  const std::size_t count = set.size() * per_traj;

  LiftedDataset out;
  out.inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(window * n));
  out.targets.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(n));
  out.trajectory.resize(count);
  out.time.resize(count);
  out.window = window;
  out.law = law;
  out.seed = seed;

  Eigen::Index r = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& states = set.trajectories[i].states;
    for (std::size_t t = window - 1; t + 1 < T; ++t, ++r) {
      for (std::size_t w = 0; w < window; ++w) {
        out.inputs.block(r, static_cast<Eigen::Index>(w * n), 1, static_cast<Eigen::Index>(n)) =
            states.row(static_cast<Eigen::Index>(t + 1 - window + w));
      }
      out.targets.row(r) = states.row(static_cast<Eigen::Index>(t + 1));
      out.trajectory[static_cast<std::size_t>(r)] = static_cast<std::uint32_t>(i);
      out.time[static_cast<std::size_t>(r)] = static_cast<std::uint32_t>(t);
    }
  }
  out.labels = draw_labels(count, label_dim, law, seed);
  return out;
}

LiftedDataset shuffle_pairs(const LiftedDataset& data, double fraction, std::uint64_t seed) {
  data.validate();
  require(fraction >= 0.0 && fraction <= 1.0, ErrorCode::invalid_argument, "shuffle fraction must lie in [0, 1]");
  require(data.shuffle_fraction == 0.0, ErrorCode::precondition,
          "dataset is already shuffled; the ablation must start from the true pairing");
  require(!data.direct(), ErrorCode::precondition, "direct pairs cannot be shuffled");

  LiftedDataset out = data;
  out.shuffle_fraction = fraction;

  std::vector<std::uint32_t> trajectories(data.trajectory.begin(), data.trajectory.end());
  std::sort(trajectories.begin(), trajectories.end());
  trajectories.erase(std::unique(trajectories.begin(), trajectories.end()), trajectories.end());
  const std::size_t M = trajectories.size();
  const auto chosen = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(M) + 1e-12));
  if (chosen < 2) return out;  // zero or one trajectory cannot exchange targets

  Rng rng(derive_seed(seed, stream::shuffle));
  // Partial Fisher-Yates selects the participating trajectories.
  for (std::size_t k = 0; k < chosen; ++k) {
    const auto j = k + static_cast<std::size_t>(rng.below(M - k));
    std::swap(trajectories[k], trajectories[j]);
  }
  std::vector<std::uint32_t> selected(trajectories.begin(), trajectories.begin() + static_cast<std::ptrdiff_t>(chosen));
  std::sort(selected.begin(), selected.end());

  // record lookup for (selected trajectory, time)
  std::map<std::uint32_t, std::size_t> slot;
  for (std::size_t k = 0; k < selected.size(); ++k) slot[selected[k]] = k;
  std::map<std::uint32_t, std::vector<std::ptrdiff_t>> by_time;
  for (std::size_t r = 0; r < data.size(); ++r) {
    auto it = slot.find(data.trajectory[r]);
    if (it == slot.end()) continue;
    auto& row = by_time[data.time[r]];
    if (row.empty()) row.assign(chosen, -1);
    row[it->second] = static_cast<std::ptrdiff_t>(r);
  }

  std::vector<std::size_t> perm(chosen);
  for (auto& [t, records] : by_time) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t k = chosen - 1; k > 0; --k) {
      const auto j = static_cast<std::size_t>(rng.below(k + 1));
      std::swap(perm[k], perm[j]);
    }
    for (std::size_t k = 0; k < chosen; ++k) {
      const auto dst = records[k];
      const auto src = records[perm[k]];
      require(dst >= 0 && src >= 0, ErrorCode::precondition,
              "shuffle needs every selected trajectory to have a record at each time");
      out.targets.row(dst) = data.targets.row(src);
    }
  }
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t count,
                                                                            double test_fraction,
                                                                            std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorCode::invalid_argument,
          "test_fraction must lie in (0, 1)");
  const auto test_size = static_cast<std::size_t>(std::ceil(static_cast<double>(count) * test_fraction - 1e-12));
  require(test_size >= 1 && test_size < count, ErrorCode::invalid_argument,
          "split would leave one side empty");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, stream::split));
  for (std::size_t k = count - 1; k > 0; --k) {
    const auto j = static_cast<std::size_t>(rng.below(k + 1));
    std::swap(order[k], order[j]);
  }
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_size));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(test_size), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {std::move(train), std::move(test)};
}

std::pair<TrajectorySet, TrajectorySet> split(const TrajectorySet& set, double test_fraction,
                                              std::uint64_t seed) {
  const auto [train_idx, test_idx] = split_indices(set.size(), test_fraction, seed);
  auto subset = [&set](const std::vector<std::size_t>& idx) {
    TrajectorySet out;
    out.normalization = set.normalization;
    out.seed = set.seed;
    out.source = set.source;
    out.provenance = set.provenance;
    out.trajectories.reserve(idx.size());
    for (auto i : idx) out.trajectories.push_back(set.trajectories[i]);
    return out;
  };
  return {subset(train_idx), subset(test_idx)};
}

LiftedDataset make_direct_pairs(const TrajectorySet& set, std::size_t label_dim, std::uint64_t seed,
                                LabelLaw law) {
  set.validate();
  const std::size_t M = set.size();
  const std::size_t T = set.length();
  const std::size_t n = set.dim();
  LiftedDataset out;
  out.inputs.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(n));
  out.targets.resize(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(n));
  out.trajectory.resize(M);
  out.time.assign(M, 0);
  out.window = LiftedDataset::full_horizon;
  out.law = law;
  out.seed = seed;
  for (std::size_t i = 0; i < M; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.inputs.row(r) = set.trajectories[i].states.row(0);
    out.targets.row(r) = set.trajectories[i].states.row(static_cast<Eigen::Index>(T - 1));
    out.trajectory[i] = static_cast<std::uint32_t>(i);
  }
  out.labels = draw_labels(M, label_dim, law, seed);
  return out;
}

}  // namespace stochlift
