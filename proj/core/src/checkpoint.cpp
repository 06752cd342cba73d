#include "flowfill/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "flowfill/digest.hpp"

namespace flowfill {

namespace {

std::string join_reals(const RowVector& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_real(v(i));
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

class ManifestReader {
 public:
  ManifestReader(KeyValues kv, std::filesystem::path path) : kv_(std::move(kv)), path_(std::move(path)) {}

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw DataError(path_.string() + ": missing key '" + key + "'");
    return it->second;
  }

  template <typename T>
  T number(const std::string& key) const {
    const std::string& s = get(key);
    T v{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw DataError(path_.string() + ": bad value for '" + key + "': " + s);
    }
    return v;
  }

  RowVector reals(const std::string& key, Index expected) const {
    auto parts = split(get(key), ',');
    if (static_cast<Index>(parts.size()) != expected) {
      throw DataError(path_.string() + ": '" + key + "' has the wrong length");
    }
    RowVector v(expected);
    for (Index i = 0; i < expected; ++i) {
      const std::string& s = parts[static_cast<std::size_t>(i)];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v(i));
      if (ec != std::errc()) throw DataError(path_.string() + ": bad number in '" + key + "'");
    }
    return v;
  }

 private:
  KeyValues kv_;
  std::filesystem::path path_;
};

std::string snapshot_file(std::size_t k, const char* net) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "snapshot_%03zu_%s.bin", k, net);
  return buf;
}

}  // namespace

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  KeyValues kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " is not key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_params(const std::filesystem::path& path, const diff::ParamSet& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  const Vector& flat = params.flat();
  for (Index i = 0; i < flat.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(flat(i));
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void read_params(const std::filesystem::path& path, diff::ParamSet& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (size != static_cast<std::size_t>(params.flat_size()) * 8) {
    throw DataError(path.string() + ": expected " + std::to_string(params.flat_size()) +
                    " float64 values, file holds " + std::to_string(size) + " bytes");
  }
  Vector& flat = params.flat();
  for (Index i = 0; i < flat.size(); ++i) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    flat(i) = std::bit_cast<double>(bits);
  }
  if (!in) throw DataError("read failed for '" + path.string() + "'");
  if (!params.all_finite()) throw DataError(path.string() + ": non-finite parameter");
}

void save_chain(const std::filesystem::path& dir, const CheckpointChain& chain) {
  std::filesystem::create_directories(dir);
  KeyValues kv;
  const auto& arch = chain.flow;
  kv["format"] = "flowfill-chain";
  kv["version"] = std::to_string(kChainFormatVersion);
  kv["dim"] = std::to_string(arch.dim);
  kv["flow.hidden_width"] = std::to_string(arch.hidden_width);
  kv["flow.coupling_layers"] = std::to_string(arch.partitions.size());
  kv["flow.mlp_layers"] = "4";
  for (std::size_t k = 0; k < arch.partitions.size(); ++k) {
    std::string bits;
    for (bool b : arch.partitions[k]) bits += b ? '1' : '0';
    kv["flow.partition." + std::to_string(k)] = bits;
  }
  kv["latent.layers"] = std::to_string(kLatentLayers);
  kv["latent.width"] = std::to_string(arch.dim);
  kv["scale.mode"] = chain.scale.mode == ScaleMode::kImage ? "image" : "tabular";
  kv["scale.min"] = join_reals(chain.scale.min);
  kv["scale.max"] = join_reals(chain.scale.max);
  kv["grid"] = chain.grid ? std::to_string(chain.grid->rows) + "x" +
                                std::to_string(chain.grid->cols) + "x" +
                                std::to_string(chain.grid->channels)
                          : "none";
  kv["init.method"] = to_string(chain.init.method);
  kv["init.seed"] = std::to_string(chain.init.seed);
  kv["rng"] = std::string(RngStream::kAlgorithm);

  const TrainConfig& c = chain.config;
  kv["config.learning_rate"] = format_real(c.learning_rate);
  kv["config.batch_size"] = std::to_string(c.batch_size);
  kv["config.epochs"] = std::to_string(c.epochs);
  kv["config.lambda"] = format_real(c.lambda);
  kv["config.seed"] = std::to_string(c.seed);
  kv["config.schedule"] = to_string(c.schedule);
  kv["config.high_missing_lr_switch"] = c.high_missing_lr_switch ? "true" : "false";
  kv["config.init"] = to_string(c.init);
  kv["config.latent_init"] = to_string(c.latent_init);

  std::string epochs;
  for (std::size_t k = 0; k < chain.snapshots.size(); ++k) {
    const Snapshot& s = chain.snapshots[k];
    if (k) epochs += ',';
    epochs += std::to_string(s.epoch);
    const std::string key = "snapshot." + std::to_string(k);
    for (auto [net, params] : {std::pair{"flow", &s.flow_params},
                               std::pair{"latent", &s.latent_params}}) {
      const std::string file = snapshot_file(k, net);
      write_params(dir / file, *params);
      kv[key + "." + net] = file;
      kv[key + "." + net + ".sha256"] = sha256_file(dir / file);
    }
  }
  kv["snapshots"] = std::to_string(chain.snapshots.size());
  kv["snapshot_epochs"] = epochs;
  write_key_values(dir / kChainManifestName, kv);
}

CheckpointChain load_chain(const std::filesystem::path& dir) {
  const auto manifest_path = dir / kChainManifestName;
  ManifestReader m(read_key_values(manifest_path), manifest_path);
  if (m.get("format") != "flowfill-chain") throw DataError(manifest_path.string() + ": not a chain");
  if (m.number<int>("version") != kChainFormatVersion) {
    throw DataError(manifest_path.string() + ": unsupported version " + m.get("version"));
  }

  CheckpointChain chain;
  auto& arch = chain.flow;
  arch.dim = m.number<Index>("dim");
  arch.hidden_width = m.number<Index>("flow.hidden_width");
  const auto layers = m.number<std::size_t>("flow.coupling_layers");
  for (std::size_t k = 0; k < layers; ++k) {
    const std::string& bits = m.get("flow.partition." + std::to_string(k));
    if (static_cast<Index>(bits.size()) != arch.dim) {
      throw DataError(manifest_path.string() + ": partition " + std::to_string(k) +
                      " has the wrong length");
    }
    Partition d;
    for (char ch : bits) d.push_back(ch == '1');
    arch.partitions.push_back(std::move(d));
  }
  if (m.number<std::size_t>("latent.layers") != kLatentLayers ||
      m.number<Index>("latent.width") != arch.dim) {
    throw DataError(manifest_path.string() + ": unsupported latent network shape");
  }

  chain.scale.mode = m.get("scale.mode") == "image" ? ScaleMode::kImage : ScaleMode::kTabular;
  chain.scale.min = m.reals("scale.min", arch.dim);
  chain.scale.max = m.reals("scale.max", arch.dim);
  if (const std::string& g = m.get("grid"); g != "none") {
    auto parts = split(g, 'x');
    if (parts.size() != 3) throw DataError(manifest_path.string() + ": bad grid '" + g + "'");
    chain.grid = GridShape{std::stol(parts[0]), std::stol(parts[1]), std::stol(parts[2])};
  }
  chain.init.method = parse_init_method(m.get("init.method"));
  chain.init.seed = m.number<std::uint64_t>("init.seed");

  TrainConfig& c = chain.config;
  c.learning_rate = m.number<double>("config.learning_rate");
  c.batch_size = m.number<Index>("config.batch_size");
  c.epochs = m.number<int>("config.epochs");
  c.lambda = m.number<double>("config.lambda");
  c.seed = m.number<std::uint64_t>("config.seed");
  c.schedule = parse_schedule_mode(m.get("config.schedule"));
  c.high_missing_lr_switch = m.get("config.high_missing_lr_switch") == "true";
  c.init = parse_init_method(m.get("config.init"));
  c.latent_init = parse_latent_init(m.get("config.latent_init"));
  c.flow.layers = layers;
  c.flow.hidden_width = arch.hidden_width;

  const FlowModel flow_shape(arch);
  const LatentNet latent_shape(arch.dim);
  const auto count = m.number<std::size_t>("snapshots");
  auto epochs = split(m.get("snapshot_epochs"), ',');
  if (epochs.size() != count) throw DataError(manifest_path.string() + ": snapshot count mismatch");
  for (std::size_t k = 0; k < count; ++k) {
    Snapshot s;
    s.epoch = std::stoi(epochs[k]);
    s.flow_params = flow_shape.params();
    s.latent_params = latent_shape.params();
    const std::string key = "snapshot." + std::to_string(k);
    for (auto [net, params] : {std::pair{"flow", &s.flow_params},
                               std::pair{"latent", &s.latent_params}}) {
      const std::string& file = m.get(key + "." + net);
      const auto path = dir / file;
      if (sha256_file(path) != m.get(key + "." + net + ".sha256")) {
        throw DataError("digest mismatch for '" + path.string() + "'");
      }
      read_params(path, *params);
    }
    if (!chain.snapshots.empty() && s.epoch <= chain.snapshots.back().epoch) {
      throw DataError(manifest_path.string() + ": snapshot epochs are not increasing");
    }
    chain.snapshots.push_back(std::move(s));
  }
  return chain;
}

}  // namespace flowfill
