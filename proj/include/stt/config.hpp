// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON document with model, data, training
// and evaluation sections. Every key is optional and defaults as below;
// unknown keys are errors.

#pragma once

#include <array>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stt/attention.hpp"
#include "stt/data.hpp"
#include "stt/nn.hpp"
#include "stt/perturb.hpp"

namespace stt {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model-zoo tags and the attention they put after conv2. SD and STT both
/// map to the tensor dense synthesizer.
struct ZooEntry {
  std::string_view tag;
  std::optional<SynthKind> kind;
  std::string_view description;
};

inline constexpr std::array kModelZoo = {
    ZooEntry{"None", std::nullopt, "two-layer CNN"},
    ZooEntry{"CT", SynthKind::DotProduct, "CNN + dot-product attention"},
    ZooEntry{"SD", SynthKind::Dense, "CNN + dense synthesizer"},
    ZooEntry{"STT", SynthKind::Dense, "CNN + tensor dense synthesizer"},
    ZooEntry{"SR", SynthKind::Random, "CNN + random synthesizer"},
    ZooEntry{"FSR", SynthKind::FactoredRandom, "CNN + factored random synthesizer"},
    ZooEntry{"FSD", SynthKind::FactoredDense, "CNN + factored dense synthesizer"},
    ZooEntry{"MS", SynthKind::Mixture, "CNN + mixture of synthesizers"},
    ZooEntry{"STTH", SynthKind::AxisH, "CNN + height-axis synthesizer"},
    ZooEntry{"STTW", SynthKind::AxisW, "CNN + width-axis synthesizer"},
};

inline const ZooEntry* find_zoo_entry(std::string_view tag) {
  for (const ZooEntry& e : kModelZoo)
    if (e.tag == tag) return &e;
  return nullptr;
}

struct AttentionSection {
  std::size_t dim = 8;
  std::size_t factors = 2;
  bool trainable = true;
  bool identity_projection = false;
  std::vector<SynthKind> components{SynthKind::FactoredRandom, SynthKind::Dense};
  bool operator==(const AttentionSection&) const = default;
};

struct ModelSection {
  std::string tag = "None";
  ConvSpec conv1;
  ConvSpec conv2;
  std::size_t pool = 2;
  bool residual = true;
  AttentionSection attention;
  bool operator==(const ModelSection&) const = default;
};

struct DataSection {
  enum class Source { Synthetic, Cifar10 };
  Source source = Source::Synthetic;
  SyntheticSpec synthetic;
  std::vector<std::string> train_files;  ///< CIFAR-10 batches
  std::vector<std::string> test_files;
  std::size_t train_limit = 0;  ///< 0 keeps everything
  std::size_t test_limit = 0;
  bool operator==(const DataSection&) const = default;
};

struct TrainingSection {
  std::size_t epochs = 30;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool operator==(const TrainingSection&) const = default;
};

struct EvaluationSection {
  std::vector<double> noise{0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.1};
  std::vector<double> rotations{30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330};
  std::vector<FlipMode> flips{FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both};
  std::uint64_t seed = 0;
  bool operator==(const EvaluationSection&) const = default;
};

struct ExperimentConfig {
  ModelSection model;
  DataSection data;
  TrainingSection training;
  EvaluationSection evaluation;
  bool operator==(const ExperimentConfig&) const = default;
};

namespace detail {

using nlohmann::json;

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  /// Rejects keys that were never read. Call after all gets.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError(path_ + ": unknown key \"" + it.key() + "\"");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key) const { return path_ + "." + key; }

  template <std::unsigned_integral T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned())
        throw ConfigError(where(key) + ": expected a non-negative integer");
      out = v->get<T>();
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <class T, class Fn>
  void get_list(const std::string& key, std::vector<T>& out, Fn convert) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + ": expected an array");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        out.push_back(convert((*v)[i], where(key) + "[" + std::to_string(i) + "]"));
    }
  }
  /// Nested object reader, empty when the key is absent.
  std::optional<Reader> child(const std::string& key) {
    if (const json* v = find(key)) return Reader(*v, where(key));
    return std::nullopt;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a string");
  return v.get<std::string>();
}

inline void read_conv(Reader& r, ConvSpec& c) {
  r.get("channels", c.channels);
  r.get("kernel", c.kernel);
  r.get("stride", c.stride);
  r.finish();
}

inline json conv_json(const ConvSpec& c) {
  return {{"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride}};
}

}  // namespace detail

/// Checks ranges and cross-field constraints; throws ConfigError.
inline void validate(const ExperimentConfig& c) {
  if (!find_zoo_entry(c.model.tag)) {
    std::string tags;
    for (const ZooEntry& e : kModelZoo) tags += (tags.empty() ? "" : ", ") + std::string(e.tag);
    throw ConfigError("model.tag: unknown tag \"" + c.model.tag + "\" (expected one of " +
                      tags + ")");
  }
  for (const ConvSpec* cv : {&c.model.conv1, &c.model.conv2}) {
    const char* name = cv == &c.model.conv1 ? "model.conv1" : "model.conv2";
    if (cv->channels == 0) throw ConfigError(std::string(name) + ".channels must be positive");
    if (cv->kernel % 2 == 0) throw ConfigError(std::string(name) + ".kernel must be odd");
    if (cv->stride == 0) throw ConfigError(std::string(name) + ".stride must be positive");
  }
  if (c.model.pool == 0) throw ConfigError("model.pool must be positive");
  if (c.model.attention.dim == 0) throw ConfigError("model.attention.dim must be positive");
  if (c.model.attention.factors == 0)
    throw ConfigError("model.attention.factors must be positive");
  if (c.model.attention.components.empty())
    throw ConfigError("model.attention.components must not be empty");
  for (SynthKind k : c.model.attention.components)
    if (k == SynthKind::Mixture)
      throw ConfigError("model.attention.components cannot contain Mixture");

  if (c.data.source == DataSection::Source::Synthetic) {
    const auto& s = c.data.synthetic;
    if (s.classes < 2) throw ConfigError("data.classes must be at least 2");
    if (s.height == 0 || s.width == 0 || s.channels == 0)
      throw ConfigError("data image dimensions must be positive");
    if (!(s.noise >= 0.0)) throw ConfigError("data.noise must be >= 0");
  } else if (c.data.train_files.empty()) {
    throw ConfigError("data.train_files must list at least one CIFAR-10 batch");
  }

  if (!(c.training.lr > 0.0)) throw ConfigError("training.lr must be positive");
  if (!(c.training.momentum >= 0.0 && c.training.momentum < 1.0))
    throw ConfigError("training.momentum must lie in [0, 1)");
  if (c.training.batch_size == 0) throw ConfigError("training.batch_size must be positive");

  for (double s : c.evaluation.noise)
    if (!(s >= 0.0)) throw ConfigError("evaluation.noise entries must be >= 0");
  for (double d : c.evaluation.rotations)
    if (!(d >= 0.0 && d < 360.0))
      throw ConfigError("evaluation.rotations entries must lie in [0, 360)");
}

inline Model build_model(const ExperimentConfig& c);

/// Parses and fully validates, including the model's shape chain.
inline ExperimentConfig parse_config_json(const nlohmann::json& j) {
  using detail::Reader;
  ExperimentConfig c;
  Reader root(j, "config");

  if (auto m = root.child("model")) {
    m->get("tag", c.model.tag);
    if (auto r = m->child("conv1")) detail::read_conv(*r, c.model.conv1);
    if (auto r = m->child("conv2")) detail::read_conv(*r, c.model.conv2);
    m->get("pool", c.model.pool);
    m->get("residual", c.model.residual);
    if (auto a = m->child("attention")) {
      auto& at = c.model.attention;
      a->get("dim", at.dim);
      a->get("factors", at.factors);
      a->get("trainable", at.trainable);
      a->get("identity_projection", at.identity_projection);
      a->get_list("components", at.components, [](const nlohmann::json& v, const std::string& w) {
        const auto k = kind_from_name(detail::as_string(v, w));
        if (!k) throw ConfigError(w + ": unknown synthesizer kind");
        return *k;
      });
      a->finish();
    }
    m->finish();
  }

  if (auto d = root.child("data")) {
    std::string source = "synthetic";
    d->get("source", source);
    if (source == "synthetic") {
      c.data.source = DataSection::Source::Synthetic;
    } else if (source == "cifar10") {
      c.data.source = DataSection::Source::Cifar10;
    } else {
      throw ConfigError("config.data.source: expected \"synthetic\" or \"cifar10\"");
    }
    auto& s = c.data.synthetic;
    d->get("classes", s.classes);
    d->get("height", s.height);
    d->get("width", s.width);
    d->get("channels", s.channels);
    d->get("train_per_class", s.train_per_class);
    d->get("test_per_class", s.test_per_class);
    d->get("noise", s.noise);
    d->get("seed", s.seed);
    auto files = [](const nlohmann::json& v, const std::string& w) { return detail::as_string(v, w); };
    d->get_list("train_files", c.data.train_files, files);
    d->get_list("test_files", c.data.test_files, files);
    d->get("train_limit", c.data.train_limit);
    d->get("test_limit", c.data.test_limit);
    d->finish();
  }

  if (auto t = root.child("training")) {
    t->get("epochs", c.training.epochs);
    t->get("lr", c.training.lr);
    t->get("momentum", c.training.momentum);
    t->get("batch_size", c.training.batch_size);
    t->get("seed", c.training.seed);
    t->finish();
  }

  if (auto e = root.child("evaluation")) {
    e->get_list("noise", c.evaluation.noise, detail::as_number);
    e->get_list("rotations", c.evaluation.rotations, detail::as_number);
    e->get_list("flips", c.evaluation.flips, [](const nlohmann::json& v, const std::string& w) {
      const auto m = flip_from_name(detail::as_string(v, w));
      if (!m) throw ConfigError(w + ": expected horizontal, vertical or both");
      return *m;
    });
    e->get("seed", c.evaluation.seed);
    e->finish();
  }
  root.finish();
  validate(c);
  (void)build_model(c);
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline nlohmann::json model_json(const ModelSection& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (SynthKind k : m.attention.components) comps.push_back(std::string(kind_name(k)));
  return {{"tag", m.tag},
          {"conv1", detail::conv_json(m.conv1)},
          {"conv2", detail::conv_json(m.conv2)},
          {"pool", m.pool},
          {"residual", m.residual},
          {"attention",
           {{"dim", m.attention.dim},
            {"factors", m.attention.factors},
            {"trainable", m.attention.trainable},
            {"identity_projection", m.attention.identity_projection},
            {"components", comps}}}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json flips = nlohmann::json::array();
  for (FlipMode f : c.evaluation.flips) flips.push_back(std::string(flip_name(f)));
  const auto& s = c.data.synthetic;
  return {
      {"model", model_json(c.model)},
      {"data",
       {{"source", c.data.source == DataSection::Source::Synthetic ? "synthetic" : "cifar10"},
        {"classes", s.classes},
        {"height", s.height},
        {"width", s.width},
        {"channels", s.channels},
        {"train_per_class", s.train_per_class},
        {"test_per_class", s.test_per_class},
        {"noise", s.noise},
        {"seed", s.seed},
        {"train_files", c.data.train_files},
        {"test_files", c.data.test_files},
        {"train_limit", c.data.train_limit},
        {"test_limit", c.data.test_limit}}},
      {"training",
       {{"epochs", c.training.epochs},
        {"lr", c.training.lr},
        {"momentum", c.training.momentum},
        {"batch_size", c.training.batch_size},
        {"seed", c.training.seed}}},
      {"evaluation",
       {{"noise", c.evaluation.noise},
        {"rotations", c.evaluation.rotations},
        {"flips", flips},
        {"seed", c.evaluation.seed}}},
  };
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

/// Input geometry implied by the data section.
inline ModelSpec model_spec(const ExperimentConfig& c) {
  ModelSpec m;
  if (c.data.source == DataSection::Source::Synthetic) {
    m.height = c.data.synthetic.height;
    m.width = c.data.synthetic.width;
    m.channels = c.data.synthetic.channels;
    m.classes = c.data.synthetic.classes;
  } else {
    m.height = m.width = kCifarSide;
    m.channels = 3;
    m.classes = 10;
  }
  m.conv1 = c.model.conv1;
  m.conv2 = c.model.conv2;
  m.pool = c.model.pool;
  m.residual = c.model.residual;
  const ZooEntry* e = find_zoo_entry(c.model.tag);
  if (!e) throw ConfigError("model.tag: unknown tag \"" + c.model.tag + "\"");
  if (e->kind) {
    SynthesizerSpec a;
    a.kind = *e->kind;
    a.dim = c.model.attention.dim;
    a.factors = c.model.attention.factors;
    a.trainable = c.model.attention.trainable;
    a.identity_projection = c.model.attention.identity_projection;
    a.components = c.model.attention.components;
    m.attention = a;
  }
  return m;
}

/// Builds the model, turning shape-chain errors into configuration errors.
inline Model build_model(const ExperimentConfig& c) {
  try {
    return Model(model_spec(c));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

}  // namespace stt
