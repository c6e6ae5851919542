#pragma once

#include "stochlift/lifting.hpp"
#include "stochlift/model.hpp"
#include "stochlift/types.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace stochlift {

using Json = nlohmann::json;

// Binary container, little endian throughout:
//   magic "SLTRAJ01", u32 version, u32 flags, u64 M, u64 T, u64 n,
//   f64 dt_stored, f64 t0, u64 seed, u32 source, u32 provenance length,
//   provenance bytes, [normalization: n x (f64 min, f64 max, u8 constant)],
//   M*T*n f32 states (trajectory, time, component),
//   [labels block: see write_lifted].
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint32_t kFlagNormalized = 1u << 0;
inline constexpr std::uint32_t kFlagLabels = 1u << 1;

void write_trajectory_set(const std::filesystem::path& path, const TrajectorySet& set);
TrajectorySet read_trajectory_set(const std::filesystem::path& path);

/// Lifted records reuse the container: each record is stored as a
/// trajectory of window states followed by its target, then a labels block
///   u64 N, u64 d, u64 window, u32 law, f64 shuffle_fraction, u64 seed,
///   N u32 trajectory ids, N u32 time ids, N*d f32 labels.
void write_lifted(const std::filesystem::path& path, const LiftedDataset& data);
LiftedDataset read_lifted(const std::filesystem::path& path);

/// Sidecar document describing a container.
Json sidecar(const TrajectorySet& set, const Json& config);
void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);

/// Checkpoint: `<base>.json` (layout and architecture) and `<base>.params`
/// (raw f64 parameters).
void save_checkpoint(const std::filesystem::path& base, const Model& model, const Json& extra = Json::object());
Model load_checkpoint(const std::filesystem::path& base);
Json checkpoint_metadata(const std::filesystem::path& base);

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& doc);

/// Shortest text that reads back to the same double.
std::string format_double(double value);

/// Writes rows under a header line, comma separated. Each comment becomes a
/// leading "# " line.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows, const std::vector<std::string>& comments = {});

/// FNV-1a of the canonical (sorted-key, compact) dump.
std::string config_hash(const Json& config);

}  // namespace stochlift
