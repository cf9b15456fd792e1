// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file: u64 little-endian header length, a JSON header (format,
// version, config hash, seed, parameter manifest), then every parameter as
// little-endian f64 in manifest order.

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stt/config.hpp"
#include "stt/nn.hpp"

namespace stt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointFormat = "stt-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of everything that determines the parameter layout: the model
/// section plus the input geometry and class count.
inline std::string config_hash(const ExperimentConfig& c) {
  const ModelSpec m = model_spec(c);
  nlohmann::json j = {{"model", model_json(c.model)},
                      {"input", {m.height, m.width, m.channels}},
                      {"classes", m.classes}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

struct Checkpoint {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<Tensor> params;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model,
                            std::span<const Tensor> params, const ExperimentConfig& config) {
  if (params.size() != model.layout().size())
    throw CheckpointError("checkpoint: parameter count does not match the model");
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != model.layout()[k].shape)
      throw CheckpointError("checkpoint: parameter " + model.layout()[k].name +
                            " has the wrong shape");
    manifest.push_back({{"name", model.layout()[k].name}, {"shape", params[k].shape()}});
  }
  const nlohmann::json header = {{"format", kCheckpointFormat},
                                 {"version", kCheckpointVersion},
                                 {"config_hash", config_hash(config)},
                                 {"seed", config.training.seed},
                                 {"params", manifest}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot write " + path);
  detail::put_u64(out, text.size());
  out.write(text.data(), std::streamsize(text.size()));
  for (const Tensor& t : params)
    for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  const std::uint64_t len = detail::get_u64(in);
  if (len > (1u << 26)) throw CheckpointError("checkpoint: implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), std::streamsize(len)))
    throw CheckpointError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    if (header.at("format") != kCheckpointFormat)
      throw CheckpointError("checkpoint: not an stt checkpoint");
    if (header.at("version") != kCheckpointVersion)
      throw CheckpointError("checkpoint: unsupported version");
    Checkpoint ck;
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& p : header.at("params")) {
      ck.names.push_back(p.at("name").get<std::string>());
      Tensor t(p.at("shape").get<Shape>());
      for (double& v : t.data()) v = std::bit_cast<double>(detail::get_u64(in));
      ck.params.push_back(std::move(t));
    }
    if (in.peek() != std::char_traits<char>::eof())
      throw CheckpointError("checkpoint: trailing bytes after parameters");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint: bad parameter shape: ") + e.what());
  }
}

/// Checks that a checkpoint was written for this config and model.
inline void check_compatible(const Checkpoint& ck, const Model& model,
                             const ExperimentConfig& config) {
  if (ck.config_hash != config_hash(config))
    throw CheckpointError("checkpoint: config hash " + ck.config_hash +
                          " does not match the given config (" + config_hash(config) + ")");
  if (ck.params.size() != model.layout().size())
    throw CheckpointError("checkpoint: holds " + std::to_string(ck.params.size()) +
                          " parameters, model has " + std::to_string(model.layout().size()));
  for (std::size_t k = 0; k < ck.params.size(); ++k)
    if (ck.names[k] != model.layout()[k].name || ck.params[k].shape() != model.layout()[k].shape)
      throw CheckpointError("checkpoint: parameter " + std::to_string(k) + " (" + ck.names[k] +
                            ") does not match model parameter " + model.layout()[k].name);
}

}  // namespace stt
