#pragma once

// Binary parameter container:
//   8 bytes  magic "RSELCKPT"
//   u32      format version
//   u64      header length in bytes
//   header   UTF-8 JSON: {"version", "meta": {...}, "arrays": [{"name","rows","cols"}...]}
//   payload  raw little-endian f64 arrays in header order

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "routesel/autodiff.hpp"
#include "routesel/errors.hpp"
#include "routesel/selection_model.hpp"

namespace routesel {

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Container {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, ad::Tensor>> arrays;
};

inline std::string encode_container(const Container& c) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& [name, t] : c.arrays) header["arrays"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t len = h.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += h;
  for (const auto& [name, t] : c.arrays) {
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  return out;
}

inline Container decode_container(const std::string& bytes) {
  constexpr std::size_t kPrefix = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw UnsupportedFormatError("not a routesel checkpoint");
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  std::memcpy(&len, bytes.data() + 12, sizeof len);
  if (version != kCheckpointVersion) {
    throw UnsupportedFormatError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  if (bytes.size() < kPrefix + len) throw ParseError("checkpoint header truncated", 0);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPrefix, len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what(), 0);
  }
  Container c;
  c.meta = header.value("meta", nlohmann::json::object());
  std::size_t off = kPrefix + len;
  for (const auto& a : header.at("arrays")) {
    const std::size_t rows = a.at("rows").get<std::size_t>();
    const std::size_t cols = a.at("cols").get<std::size_t>();
    const std::size_t n = rows * cols * sizeof(double);
    if (off + n > bytes.size()) throw ParseError("checkpoint payload truncated at " + a.at("name").get<std::string>(), 0);
    ad::Tensor t(rows, cols);
    std::memcpy(t.data().data(), bytes.data() + off, n);
    off += n;
    c.arrays.emplace_back(a.at("name").get<std::string>(), std::move(t));
  }
  if (off != bytes.size()) throw ParseError("trailing bytes after checkpoint payload", 0);
  return c;
}

inline void write_container(const std::string& path, const Container& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const std::string bytes = encode_container(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},     {"heads", c.heads},
          {"ff_hidden", c.ff_hidden},     {"flat_layers", c.flat_layers},
          {"hier_blocks", c.hier_blocks}, {"layers_per_block", c.layers_per_block},
          {"pool_ratio", c.pool_ratio},   {"mode", to_string(c.mode)}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.ff_hidden = j.at("ff_hidden").get<std::size_t>();
  c.flat_layers = j.at("flat_layers").get<std::size_t>();
  c.hier_blocks = j.at("hier_blocks").get<std::size_t>();
  c.layers_per_block = j.at("layers_per_block").get<std::size_t>();
  c.pool_ratio = j.at("pool_ratio").get<double>();
  c.mode = parse_encoder_mode(j.at("mode").get<std::string>());
  return c;
}

inline void load_parameters(ad::ParameterSet& params, const std::vector<std::pair<std::string, ad::Tensor>>& arrays) {
  if (arrays.size() != params.size()) {
    throw ParseError("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model expects " +
                         std::to_string(params.size()),
                     0);
  }
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].first != params.name(i) || !arrays[i].second.same_shape(params.value(i))) {
      throw ParseError("checkpoint array " + arrays[i].first + " does not match parameter " + params.name(i), 0);
    }
    params.value(i) = arrays[i].second;
  }
}

inline Container model_container(const SelectionModel& m) {
  Container c;
  c.meta["type"] = "selection-model";
  c.meta["kind"] = to_string(m.kind());
  c.meta["solver_ids"] = m.solver_ids();
  c.meta["encoder"] = encoder_config_to_json(m.encoder_config());
  c.meta["head_hidden"] = m.head_hidden();
  if (m.scaler().fitted()) c.meta["scaler"] = {{"mean", m.scaler().mean}, {"stddev", m.scaler().stddev}};
  for (std::size_t i = 0; i < m.params().size(); ++i) c.arrays.emplace_back(m.params().name(i), m.params().value(i));
  return c;
}

inline SelectionModel model_from_container(const Container& c) {
  if (c.meta.value("type", std::string()) != "selection-model") {
    throw UnsupportedFormatError("checkpoint does not hold a selection model");
  }
  SelectionModel m = SelectionModel::create(parse_problem_kind(c.meta.at("kind").get<std::string>()),
                                            encoder_config_from_json(c.meta.at("encoder")),
                                            c.meta.at("solver_ids").get<std::vector<std::string>>(), 0,
                                            c.meta.at("head_hidden").get<std::size_t>());
  if (c.meta.contains("scaler")) {
    m.scaler().mean = c.meta["scaler"].at("mean").get<std::vector<double>>();
    m.scaler().stddev = c.meta["scaler"].at("stddev").get<std::vector<double>>();
  }
  load_parameters(m.params(), c.arrays);
  return m;
}

inline void save_model(const SelectionModel& m, const std::string& path) { write_container(path, model_container(m)); }

inline SelectionModel load_model(const std::string& path) { return model_from_container(read_container(path)); }

}  // namespace routesel
