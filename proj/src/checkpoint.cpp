#include "latgeo/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "latgeo/error.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

namespace {

constexpr char kMagic[4] = {'L', 'A', 'T', 'G'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i]))
         << (8 * i);
  }
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i]))
         << (8 * i);
  }
  return v;
}

void append_matrix(std::string& out, const Matrix& m) {
  static_assert(sizeof(double) == 8, "payload format assumes 8-byte doubles");
  const auto bytes = static_cast<std::size_t>(m.size()) * 8;
  const char* raw = reinterpret_cast<const char*>(m.data());
  if constexpr (std::endian::native == std::endian::little) {
    out.append(raw, bytes);
  } else {
    for (std::size_t i = 0; i < bytes; i += 8) {
      char buf[8];
      std::memcpy(buf, raw + i, 8);
      std::reverse(buf, buf + 8);
      out.append(buf, 8);
    }
  }
}

Matrix read_matrix(const std::string& payload, std::size_t offset,
                   Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  const auto bytes = static_cast<std::size_t>(m.size()) * 8;
  char* raw = reinterpret_cast<char*>(m.data());
  std::memcpy(raw, payload.data() + offset, bytes);
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < bytes; i += 8) {
      std::reverse(raw + i, raw + i + 8);
    }
  }
  return m;
}

}  // namespace

Checkpoint Checkpoint::capture(const Model& model, Adam& adam,
                               const RngHub& rngs) {
  Checkpoint c;
  c.config = model.config();
  c.vocab = model.vocab().to_json();
  for (const auto& [name, tensor] : model.params().items()) {
    c.params.emplace_back(name, tensor.value());
  }
  c.adam_t = adam.t();
  for (const auto& [name, tensor] : model.params().items()) {
    auto mi = adam.m().find(name);
    auto vi = adam.v().find(name);
    if (mi == adam.m().end() || vi == adam.v().end()) continue;
    c.adam_m.emplace_back(name, mi->second);
    c.adam_v.emplace_back(name, vi->second);
  }
  c.rng_data = rng_to_string(rngs.data);
  c.rng_init = rng_to_string(rngs.init);
  c.rng_dropout = rng_to_string(rngs.dropout);
  c.rng_sampling = rng_to_string(rngs.sampling);
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::string payload;
  nlohmann::json manifest = nlohmann::json::array();
  auto emit = [&](const std::vector<std::pair<std::string, Matrix>>& group,
                  const std::string& prefix) {
    for (const auto& [n, m] : group) {
      manifest.push_back({{"name", prefix + n},
                          {"rows", m.rows()},
                          {"cols", m.cols()},
                          {"offset", payload.size()}});
      append_matrix(payload, m);
    }
  };
  emit(c.params, "");
  emit(c.adam_m, "adam.m.");
  emit(c.adam_v, "adam.v.");

  nlohmann::json meta{{"config", config_to_json(c.config)},
                      {"vocab", c.vocab},
                      {"adam_t", c.adam_t},
                      {"rng",
                       {{"data", c.rng_data},
                        {"init", c.rng_init},
                        {"dropout", c.rng_dropout},
                        {"sampling", c.rng_sampling}}},
                      {"best_cider", c.best_cider},
                      {"best_epoch", c.best_epoch},
                      {"epoch", c.epoch},
                      {"phase", c.phase},
                      {"manifest", manifest}};
  const std::string meta_str = meta.dump();

  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, kCheckpointVersion);
  put_u64(blob, meta_str.size());
  blob += meta_str;
  blob += payload;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot move '" + tmp + "' into place at '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  if (blob.size() < 16) {
    throw ParseError("checkpoint '" + path + "' truncated: " +
                     std::to_string(blob.size()) + " bytes");
  }
  if (std::memcmp(blob.data(), kMagic, 4) != 0) {
    throw ParseError("'" + path + "' is not a checkpoint (bad magic bytes)");
  }
  const std::uint32_t version = get_u32(blob, 4);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint version " + std::to_string(version) +
                     " unsupported (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t meta_len = get_u64(blob, 8);
  if (16 + meta_len > blob.size()) {
    throw ParseError("checkpoint '" + path + "' truncated inside metadata");
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob.substr(16, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint metadata unreadable: " + std::string(e.what()));
  }
  const std::string payload = blob.substr(16 + static_cast<std::size_t>(meta_len));

  Checkpoint c;
  try {
    c.config = config_from_json(meta.at("config"));
    c.vocab = meta.at("vocab");
    c.adam_t = meta.at("adam_t").get<std::int64_t>();
    c.rng_data = meta.at("rng").at("data").get<std::string>();
    c.rng_init = meta.at("rng").at("init").get<std::string>();
    c.rng_dropout = meta.at("rng").at("dropout").get<std::string>();
    c.rng_sampling = meta.at("rng").at("sampling").get<std::string>();
    c.best_cider = meta.at("best_cider").get<double>();
    c.best_epoch = meta.at("best_epoch").get<int>();
    c.epoch = meta.at("epoch").get<int>();
    c.phase = meta.at("phase").get<std::string>();

    for (const auto& entry : meta.at("manifest")) {
      const std::string name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0) {
        throw ParseError("tensor '" + name + "' has negative shape");
      }
      const auto bytes = static_cast<std::uint64_t>(rows) *
                         static_cast<std::uint64_t>(cols) * 8;
      if (offset + bytes > payload.size()) {
        throw ParseError("checkpoint '" + path + "' truncated: tensor '" +
                         name + "' overruns the payload");
      }
      Matrix m = read_matrix(payload, offset, rows, cols);
      if (name.rfind("adam.m.", 0) == 0) {
        c.adam_m.emplace_back(name.substr(7), std::move(m));
      } else if (name.rfind("adam.v.", 0) == 0) {
        c.adam_v.emplace_back(name.substr(7), std::move(m));
      } else {
        c.params.emplace_back(name, std::move(m));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint metadata malformed: " + std::string(e.what()));
  }
  return c;
}

void restore_checkpoint(const Checkpoint& c, Model& model, Adam* adam,
                        RngHub* rngs) {
  std::unordered_map<std::string, Matrix> by_name;
  for (const auto& [name, m] : c.params) by_name.emplace(name, m);

  std::string problems;
  for (const auto& [name, tensor] : model.params().items()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems += "\n  missing tensor '" + name + "'";
      continue;
    }
    if (it->second.rows() != tensor.rows() ||
        it->second.cols() != tensor.cols()) {
      problems += "\n  '" + name + "' is " + shape_str(it->second) +
                  ", model expects " + shape_str(tensor.rows(), tensor.cols());
    }
  }
  if (c.params.size() != model.params().items().size()) {
    for (const auto& [name, m] : c.params) {
      (void)m;
      if (!model.params().has(name)) {
        problems += "\n  unexpected tensor '" + name + "'";
      }
    }
  }
  if (!problems.empty()) {
    throw DimensionError("checkpoint does not fit the model:" + problems);
  }

  for (const auto& [name, tensor] : model.params().items()) {
    tensor.mutable_value() = by_name.at(name);
  }
  if (adam != nullptr) {
    adam->set_t(c.adam_t);
    adam->m().clear();
    adam->v().clear();
    for (const auto& [name, m] : c.adam_m) adam->m()[name] = m;
    for (const auto& [name, m] : c.adam_v) adam->v()[name] = m;
  }
  if (rngs != nullptr) {
    rngs->data = rng_from_string(c.rng_data);
    rngs->init = rng_from_string(c.rng_init);
    rngs->dropout = rng_from_string(c.rng_dropout);
    rngs->sampling = rng_from_string(c.rng_sampling);
  }
}

}  // namespace latgeo
