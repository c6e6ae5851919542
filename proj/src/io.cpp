#include "stochlift/io.hpp"

#include "stochlift/error.hpp"
#include "stochlift/hash.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stochlift {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'L', 'T', 'R', 'A', 'J', '0', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    require(out_.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  }
  template <class T>
  void put(const T& value) {
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    require(out_.good(), ErrorCode::io, "write to '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    require(in_.good(), ErrorCode::io, "cannot open '" + path.string() + "'");
  }
  template <class T>
  T get() {
    T value;
    read(&value, sizeof(T));
    return value;
  }
  void read(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    require(static_cast<std::size_t>(in_.gcount()) == n, ErrorCode::io, "'" + path_.string() + "' is truncated");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

struct Header {
  std::uint32_t flags = 0;
  std::uint64_t M = 0, T = 0, n = 0;
  double dt = 1.0, t0 = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t source = 0;
  std::string provenance;
  std::optional<Normalization> normalization;
};

void write_header(Writer& w, const Header& h) {
  w.bytes(kMagic, sizeof kMagic);
  w.put(kContainerVersion);
  w.put(h.flags);
  w.put(h.M);
  w.put(h.T);
  w.put(h.n);
  w.put(h.dt);
  w.put(h.t0);
  w.put(h.seed);
  w.put(h.source);
  w.put(static_cast<std::uint32_t>(h.provenance.size()));
  w.bytes(h.provenance.data(), h.provenance.size());
  if (h.flags & kFlagNormalized) {
    const auto& nz = *h.normalization;
    for (std::size_t k = 0; k < nz.dim(); ++k) {
      w.put(nz.min[k]);
      w.put(nz.max[k]);
      w.put(static_cast<std::uint8_t>(nz.constant[k] ? 1 : 0));
    }
  }
}

Header read_header(Reader& r, const std::filesystem::path& path) {
  char magic[8];
  r.read(magic, sizeof magic);
  require(std::memcmp(magic, kMagic, sizeof magic) == 0, ErrorCode::io,
          "'" + path.string() + "' is not a trajectory container");
  const auto version = r.get<std::uint32_t>();
  require(version == kContainerVersion, ErrorCode::io,
          "'" + path.string() + "' has unsupported version " + std::to_string(version));
  Header h;
  h.flags = r.get<std::uint32_t>();
  h.M = r.get<std::uint64_t>();
  h.T = r.get<std::uint64_t>();
  h.n = r.get<std::uint64_t>();
  h.dt = r.get<double>();
  h.t0 = r.get<double>();
  h.seed = r.get<std::uint64_t>();
  h.source = r.get<std::uint32_t>();
  const auto plen = r.get<std::uint32_t>();
  h.provenance.resize(plen);
  if (plen > 0) r.read(h.provenance.data(), plen);
  require(h.n >= 1 && h.T >= 1 && h.n < (1u << 28) && h.T < (1u << 28) && h.M < (1u << 28), ErrorCode::io,
          "'" + path.string() + "' has implausible dimensions");
  if (h.flags & kFlagNormalized) {
    Normalization nz;
    for (std::uint64_t k = 0; k < h.n; ++k) {
      nz.min.push_back(r.get<double>());
      nz.max.push_back(r.get<double>());
      nz.constant.push_back(r.get<std::uint8_t>() != 0);
    }
    h.normalization = std::move(nz);
  }
  return h;
}

std::uint32_t source_code(Source s) { return static_cast<std::uint32_t>(s); }
Source source_of(std::uint32_t code) {
  require(code <= static_cast<std::uint32_t>(Source::generated), ErrorCode::io, "invalid source tag in container");
  return static_cast<Source>(code);
}

void put_states(Writer& w, const Matrix& states) {
  std::vector<float> buf(static_cast<std::size_t>(states.size()));
  for (Eigen::Index k = 0; k < states.size(); ++k) buf[static_cast<std::size_t>(k)] = static_cast<float>(states.data()[k]);
  w.bytes(buf.data(), buf.size() * sizeof(float));
}

void get_states(Reader& r, Matrix& states) {
  std::vector<float> buf(static_cast<std::size_t>(states.size()));
  r.read(buf.data(), buf.size() * sizeof(float));
  for (Eigen::Index k = 0; k < states.size(); ++k) states.data()[k] = static_cast<double>(buf[static_cast<std::size_t>(k)]);
}

}  // namespace

void write_trajectory_set(const std::filesystem::path& path, const TrajectorySet& set) {
  set.validate();
  Header h;
  h.flags = set.normalized() ? kFlagNormalized : 0u;
  h.M = set.size();
  h.T = set.length();
  h.n = set.dim();
  h.dt = set.trajectories.front().dt_stored;
  h.t0 = set.trajectories.front().t0;
  h.seed = set.seed;
  h.source = source_code(set.source);
  h.provenance = set.provenance;
  h.normalization = set.normalization;
  Writer w(path);
  write_header(w, h);
  for (const auto& tr : set.trajectories) put_states(w, tr.states);
  w.finish();
}

TrajectorySet read_trajectory_set(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r, path);
  require(!(h.flags & kFlagLabels), ErrorCode::io, "'" + path.string() + "' holds lifted records, not trajectories");
  TrajectorySet set;
  set.seed = h.seed;
  set.source = source_of(h.source);
  set.provenance = h.provenance;
  set.normalization = h.normalization;
  set.trajectories.resize(h.M);
  for (auto& tr : set.trajectories) {
    tr.states.resize(static_cast<Eigen::Index>(h.T), static_cast<Eigen::Index>(h.n));
    tr.dt_stored = h.dt;
    tr.t0 = h.t0;
    get_states(r, tr.states);
  }
  require(r.at_end(), ErrorCode::io, "'" + path.string() + "' has trailing bytes");
  set.validate();
  return set;
}

void write_lifted(const std::filesystem::path& path, const LiftedDataset& data) {
  data.validate();
  const auto N = data.size();
  const auto n = data.state_dim();
  const auto m = data.input_states();
  Header h;
  h.flags = kFlagLabels;
  h.M = N;
  h.T = m + 1;
  h.n = n;
  h.seed = data.seed;
  h.source = source_code(Source::external);
  Writer w(path);
  write_header(w, h);
  Matrix rec(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      rec.row(static_cast<Eigen::Index>(k)) =
          data.inputs.block(i, static_cast<Eigen::Index>(k * n), 1, static_cast<Eigen::Index>(n));
    }
    rec.row(static_cast<Eigen::Index>(m)) = data.targets.row(i);
    put_states(w, rec);
  }
  w.put(static_cast<std::uint64_t>(N));
  w.put(static_cast<std::uint64_t>(data.label_dim()));
  w.put(static_cast<std::uint64_t>(data.window));
  w.put(static_cast<std::uint32_t>(data.law == LabelLaw::sphere ? 1 : 0));
  w.put(data.shuffle_fraction);
  w.put(data.seed);
  w.bytes(data.trajectory.data(), N * sizeof(std::uint32_t));
  w.bytes(data.time.data(), N * sizeof(std::uint32_t));
  put_states(w, data.labels);
  w.finish();
}

LiftedDataset read_lifted(const std::filesystem::path& path) {
  Reader r(path);
  const Header h = read_header(r, path);
  require((h.flags & kFlagLabels) != 0, ErrorCode::io, "'" + path.string() + "' has no labels block");
  const auto N = h.M;
  const auto n = h.n;
  const auto m = h.T - 1;
  require(m >= 1, ErrorCode::io, "lifted container needs at least one input state");
  LiftedDataset data;
  data.inputs.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(m * n));
  data.targets.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(n));
  Matrix rec(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(N); ++i) {
    get_states(r, rec);
    for (std::size_t k = 0; k < m; ++k) {
      data.inputs.block(i, static_cast<Eigen::Index>(k * n), 1, static_cast<Eigen::Index>(n)) =
          rec.row(static_cast<Eigen::Index>(k));
    }
    data.targets.row(i) = rec.row(static_cast<Eigen::Index>(m));
  }
  const auto count = r.get<std::uint64_t>();
  const auto d = r.get<std::uint64_t>();
  require(count == N && d >= 1 && d < (1u << 24), ErrorCode::io, "inconsistent labels block");
  data.window = static_cast<std::size_t>(r.get<std::uint64_t>());
  data.law = r.get<std::uint32_t>() == 1 ? LabelLaw::sphere : LabelLaw::gaussian;
  data.shuffle_fraction = r.get<double>();
  data.seed = r.get<std::uint64_t>();
  data.trajectory.resize(N);
  data.time.resize(N);
  r.read(data.trajectory.data(), N * sizeof(std::uint32_t));
  r.read(data.time.data(), N * sizeof(std::uint32_t));
  data.labels.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
  get_states(r, data.labels);
  require(r.at_end(), ErrorCode::io, "'" + path.string() + "' has trailing bytes");
  data.validate();
  return data;
}

Json sidecar(const TrajectorySet& set, const Json& config) {
  Json doc;
  doc["format"] = "stochlift-traj";
  doc["version"] = kContainerVersion;
  doc["M"] = set.size();
  doc["T"] = set.length();
  doc["n"] = set.dim();
  doc["dt_stored"] = set.trajectories.empty() ? 1.0 : set.trajectories.front().dt_stored;
  doc["source"] = std::string(to_string(set.source));
  doc["seed"] = set.seed;
  doc["normalized"] = set.normalized();
  doc["provenance"] = set.provenance;
  doc["config"] = config;
  doc["config_hash"] = config_hash(config);
  return doc;
}

void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  out << doc.dump(2) << '\n';
  require(out.good(), ErrorCode::io, "write to '" + path.string() + "' failed");
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorCode::config, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Json to_json(const ModelConfig& c) {
  return Json{{"in_dim", c.in_dim},
              {"out_dim", c.out_dim},
              {"hidden", c.hidden},
              {"label_dim", c.label_dim},
              {"embed_width", c.embed_width},
              {"activation", std::string(to_string(c.activation))},
              {"residual_output", c.residual_output},
              {"layer_norm", c.layer_norm}};
}

ModelConfig model_config_from_json(const Json& doc) {
  try {
    ModelConfig c;
    c.in_dim = doc.at("in_dim").get<int>();
    c.out_dim = doc.at("out_dim").get<int>();
    c.hidden = doc.at("hidden").get<std::vector<int>>();
    c.label_dim = doc.at("label_dim").get<int>();
    c.embed_width = doc.at("embed_width").get<int>();
    c.activation = activation_from_string(doc.at("activation").get<std::string>());
    c.residual_output = doc.at("residual_output").get<bool>();
    c.layer_norm = doc.value("layer_norm", false);
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    fail(ErrorCode::config, std::string("bad model description: ") + e.what());
  }
}

namespace {
std::filesystem::path with_suffix(const std::filesystem::path& base, const char* suffix) {
  return std::filesystem::path(base.string() + suffix);
}
}  // namespace

void save_checkpoint(const std::filesystem::path& base, const Model& model, const Json& extra) {
  Json doc;
  doc["format"] = "stochlift-checkpoint";
  doc["version"] = 1;
  doc["model"] = to_json(model.config());
  Json slots = Json::array();
  for (const auto& s : model.layout().slots) {
    slots.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}, {"offset", s.offset}});
  }
  doc["layout"] = {{"total", model.layout().total}, {"tensors", slots}};
  doc["hash"] = model.hash();
  doc["extra"] = extra;
  write_json(with_suffix(base, ".json"), doc);
  Writer w(with_suffix(base, ".params"));
  w.bytes(model.params().data(), static_cast<std::size_t>(model.params().size()) * sizeof(double));
  w.finish();
}

Json checkpoint_metadata(const std::filesystem::path& base) { return read_json(with_suffix(base, ".json")); }

Model load_checkpoint(const std::filesystem::path& base) {
  const Json doc = checkpoint_metadata(base);
  require(doc.value("format", "") == "stochlift-checkpoint", ErrorCode::io, "not a checkpoint description");
  const ModelConfig cfg = model_config_from_json(doc.at("model"));
  const ParamLayout layout = make_layout(cfg);
  require(doc.at("layout").at("total").get<std::size_t>() == layout.total, ErrorCode::io,
          "checkpoint layout does not match its architecture");
  const auto path = with_suffix(base, ".params");
  require(std::filesystem::exists(path), ErrorCode::io, "missing parameter file '" + path.string() + "'");
  require(std::filesystem::file_size(path) == layout.total * sizeof(double), ErrorCode::io,
          "parameter file size does not match the layout");
  Vector params(static_cast<Eigen::Index>(layout.total));
  Reader r(path);
  r.read(params.data(), layout.total * sizeof(double));
  Model model(cfg, std::move(params));
  if (doc.contains("hash")) {
    require(doc["hash"].get<std::string>() == model.hash(), ErrorCode::io, "checkpoint hash mismatch");
  }
  return model;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows, const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorCode::io, "cannot open '" + path.string() + "' for writing");
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) out << ',';
      out << cells[k];
    }
    out << '\n';
  };
  for (const auto& c : comments) out << "# " << c << '\n';
  line(header);
  for (const auto& r : rows) {
    require(r.size() == header.size(), ErrorCode::invalid_argument, "CSV row width does not match the header");
    line(r);
  }
  require(out.good(), ErrorCode::io, "write to '" + path.string() + "' failed");
}

std::string config_hash(const Json& config) { return fnv1a_hex(config.dump()); }

}  // namespace stochlift
