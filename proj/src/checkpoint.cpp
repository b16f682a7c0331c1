// Copyright 2026 The kwsfilm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kws/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "kws/errors.hpp"

namespace kws {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written in host order, which must be little-endian");

namespace {

constexpr char kMagic[8] = {'K', 'W', 'S', 'T', 'E', 'N', 'S', '\0'};

std::uint64_t fnv1a(const std::uint8_t* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > b_.size() - pos_) throw CorruptFileError("tensor file truncated");
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* TensorFile::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const Tensor& TensorFile::get(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw ShapeMismatchError("tensor file has no tensor named '" + name + "'");
}

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kTensorFileVersion);
  const std::string header = file.header.dump();
  w.put<std::uint64_t>(header.size());
  w.put_bytes(header.data(), header.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(offset);
    offset += t.size() * sizeof(double);
  }
  for (const auto& [name, t] : file.tensors) w.put_bytes(t.data(), t.size() * sizeof(double));
  auto& bytes = w.bytes();
  const std::uint64_t sum = fnv1a(bytes.data(), bytes.size());
  w.put<std::uint64_t>(sum);
  return std::move(w.bytes());
}

TensorFile decode_tensor_file(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CorruptFileError("not a tensor file (bad magic)");
  Reader r(bytes);
  r.take(sizeof(kMagic));
  const auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion)
    throw VersionMismatchError("tensor file version " + std::to_string(version) +
                               ", this build reads version " + std::to_string(kTensorFileVersion));
  // Verify the trailer before trusting any length field further on.
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored)
    throw CorruptFileError("tensor file checksum mismatch (truncated or modified)");
  const auto body = bytes.first(bytes.size() - 8);
  Reader rb(body);
  rb.take(sizeof(kMagic) + 4);

  TensorFile file;
  const auto header_len = rb.get<std::uint64_t>();
  const auto header = rb.take(header_len);
  try {
    file.header = nlohmann::json::parse(header.begin(), header.end());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFileError(std::string("tensor file header is not JSON: ") + e.what());
  }
  const auto count = rb.get<std::uint32_t>();
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    const auto len = rb.get<std::uint32_t>();
    const auto name = rb.take(len);
    e.name.assign(name.begin(), name.end());
    const auto rank = rb.get<std::uint32_t>();
    if (rank > 8) throw CorruptFileError("tensor '" + e.name + "' has implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(rb.get<std::uint64_t>());
    e.offset = rb.get<std::uint64_t>();
    dir.push_back(std::move(e));
  }
  const std::size_t data_start = rb.pos();
  for (auto& e : dir) {
    const std::size_t n = shape_size(e.shape);
    const std::size_t begin = data_start + e.offset;
    if (e.offset > body.size() || n > (body.size() - begin) / sizeof(double))
      throw CorruptFileError("tensor '" + e.name + "' extends past end of file");
    std::vector<double> values(n);
    std::memcpy(values.data(), body.data() + begin, n * sizeof(double));
    try {
      file.tensors.emplace_back(e.name, Tensor(e.shape, std::move(values)));
    } catch (const DimensionError& err) {
      throw CorruptFileError("tensor '" + e.name + "': " + err.what());
    }
  }
  return file;
}

void write_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  const auto bytes = encode_tensor_file(file);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor_file(bytes);
  } catch (const CorruptFileError& e) {
    throw CorruptFileError(path.string() + ": " + e.what());
  }
}

// ---- model config JSON -------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError(std::string(what) + ": unknown key '" + k + "'");
}

}  // namespace

nlohmann::json model_config_to_json(const KwsModelConfig& c) {
  nlohmann::json j;
  j["input_dim"] = c.input_dim;
  j["num_classes"] = c.num_classes;
  j["encoder"] = nlohmann::json::array();
  for (const auto& s : c.encoder)
    j["encoder"].push_back({{"nodes", s.nodes}, {"memory", s.memory}, {"bottleneck", s.bottleneck}});
  j["decoder"] = nlohmann::json::array();
  for (const auto& s : c.decoder) j["decoder"].push_back({{"nodes", s.nodes}, {"memory", s.memory}});
  j["conditioning"] = c.film_embedding_dim
                          ? nlohmann::json{{"type", "film"}, {"embedding_dim", *c.film_embedding_dim}}
                          : nlohmann::json{{"type", "none"}};
  return j;
}

KwsModelConfig model_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"input_dim", "num_classes", "encoder", "decoder", "conditioning"}, "model");
  KwsModelConfig c;
  try {
    c.input_dim = j.value("input_dim", c.input_dim);
    c.num_classes = j.value("num_classes", c.num_classes);
    if (j.contains("encoder")) {
      c.encoder.clear();
      for (const auto& s : j.at("encoder")) {
        reject_unknown(s, {"nodes", "memory", "bottleneck"}, "model.encoder[]");
        c.encoder.push_back({s.at("nodes").get<std::size_t>(), s.at("memory").get<std::size_t>(),
                             s.at("bottleneck").get<std::size_t>()});
      }
    }
    if (j.contains("decoder")) {
      c.decoder.clear();
      for (const auto& s : j.at("decoder")) {
        reject_unknown(s, {"nodes", "memory"}, "model.decoder[]");
        c.decoder.push_back({s.at("nodes").get<std::size_t>(), s.at("memory").get<std::size_t>()});
      }
    }
    if (j.contains("conditioning")) {
      const auto& cond = j.at("conditioning");
      reject_unknown(cond, {"type", "embedding_dim"}, "model.conditioning");
      const auto type = cond.at("type").get<std::string>();
      if (type == "film")
        c.film_embedding_dim = cond.at("embedding_dim").get<std::size_t>();
      else if (type != "none")
        throw ConfigError("model.conditioning.type must be 'none' or 'film', got '" + type + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---- model checkpoints ------------------------------------------------------------

TensorFile model_to_tensor_file(const KwsModel& m, const CheckpointInfo& info) {
  TensorFile f;
  f.header = {{"kind", "kws-model"},
              {"config", model_config_to_json(m.config)},
              {"step", info.step},
              {"seed", info.seed},
              {"extra", info.extra}};
  for_each_param(m.weights, [&f](const std::string& name, const Tensor& t) {
    f.tensors.emplace_back(name, t);
  });
  return f;
}

KwsModel model_from_tensor_file(const TensorFile& f, CheckpointInfo* info) {
  if (f.header.value("kind", std::string()) != "kws-model")
    throw CorruptFileError("tensor file does not hold a model checkpoint");
  KwsModelConfig config = model_config_from_json(f.header.at("config"));
  // Build the skeleton for shapes, then overwrite every tensor.
  KwsModel m = build_model(config, 0);
  for_each_param(m.weights, [&f](const std::string& name, Tensor& t) {
    const Tensor& stored = f.get(name);
    if (stored.shape() != t.shape())
      throw ShapeMismatchError("checkpoint tensor '" + name + "' has shape " +
                               shape_str(stored.shape()) + ", config implies " + shape_str(t.shape()));
    t = stored;
  });
  if (info) {
    info->step = f.header.value("step", std::uint64_t{0});
    info->seed = f.header.value("seed", std::uint64_t{0});
    info->extra = f.header.value("extra", nlohmann::json::object());
  }
  return m;
}

void save_model(const KwsModel& m, const std::filesystem::path& path, const CheckpointInfo& info) {
  write_tensor_file(path, model_to_tensor_file(m, info));
}

KwsModel load_model(const std::filesystem::path& path, CheckpointInfo* info) {
  return model_from_tensor_file(read_tensor_file(path), info);
}

KwsModel load_model(const std::filesystem::path& path, const KwsModelConfig& expected,
                    CheckpointInfo* info) {
  KwsModel m = load_model(path, info);
  if (!(m.config == expected))
    throw ShapeMismatchError("checkpoint configuration " + model_config_to_json(m.config).dump() +
                             " does not match expected " + model_config_to_json(expected).dump());
  return m;
}

}  // namespace kws
