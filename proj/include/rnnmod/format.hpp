// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Portable JSON representation of models, modules and datasets.
//
// Every document is a JSON object with "format_version": 1 and a "kind" of
// "model", "module" or "dataset". Floating point values are written as
// shortest round-trip decimals, so save -> load is bit-exact.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rnnmod/error.hpp"
#include "rnnmod/model.hpp"

namespace rnnmod {

using json = nlohmann::json;

namespace format_detail {

template <typename E, std::size_t N>
struct EnumNames {
  std::array<std::pair<E, std::string_view>, N> entries;

  std::string_view name(E e) const {
    for (const auto& [v, n] : entries)
      if (v == e) return n;
    return "?";
  }
  E parse(const std::string& s, std::string_view what) const {
    for (const auto& [v, n] : entries)
      if (n == s) return v;
    throw ParseError("unknown " + std::string(what) + " '" + s + "'");
  }
};

inline constexpr EnumNames<LayerKind, 9> kLayerKinds{{{
    {LayerKind::Embedding, "Embedding"},
    {LayerKind::Masking, "Masking"},
    {LayerKind::SimpleRNN, "SimpleRNN"},
    {LayerKind::LSTM, "LSTM"},
    {LayerKind::GRU, "GRU"},
    {LayerKind::Dense, "Dense"},
    {LayerKind::TimeDistributedDense, "TimeDistributedDense"},
    {LayerKind::RepeatVector, "RepeatVector"},
    {LayerKind::Flatten, "Flatten"},
}}};

inline constexpr EnumNames<Activation, 5> kActivations{{{
    {Activation::Tanh, "tanh"},
    {Activation::Sigmoid, "sigmoid"},
    {Activation::ReLU, "relu"},
    {Activation::Softmax, "softmax"},
    {Activation::Linear, "linear"},
}}};

inline constexpr EnumNames<IoType, 5> kIoTypes{{{
    {IoType::OneToOne, "OneToOne"},
    {IoType::ManyToOne, "ManyToOne"},
    {IoType::OneToMany, "OneToMany"},
    {IoType::ManyToMany, "ManyToMany"},
    {IoType::EncoderDecoder, "EncoderDecoder"},
}}};

inline constexpr EnumNames<Role, 3> kRoles{{{
    {Role::Main, "main"},
    {Role::Encoder, "encoder"},
    {Role::Decoder, "decoder"},
}}};

inline constexpr EnumNames<Mode, 2> kModes{{{
    {Mode::Rolled, "rolled"},
    {Mode::Unrolled, "unrolled"},
}}};

inline constexpr EnumNames<LabelMode, 3> kLabelModes{{{
    {LabelMode::Single, "Single"},
    {LabelMode::PerTimestep, "PerTimestep"},
    {LabelMode::TargetSequence, "TargetSequence"},
}}};

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(json(std::vector<double>(row.begin(), row.end())));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array()) throw ParseError("matrix must be an array of rows");
  if (j.empty()) return {};
  const std::size_t cols = j.at(0).size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols) throw ParseError("ragged matrix rows");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw ParseError("matrix entries must be numbers");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

inline json weights_to_json(const WeightSet& w) {
  json j = json::object();
  if (w.W.rows() > 0) j["W"] = matrix_to_json(w.W);
  if (w.U.rows() > 0) j["U"] = matrix_to_json(w.U);
  if (!w.b.empty()) j["b"] = w.b;
  if (!w.retained.empty()) j["retained"] = w.retained;
  return j;
}

inline WeightSet weights_from_json(const json& j) {
  WeightSet w;
  if (j.contains("W")) w.W = matrix_from_json(j["W"]);
  if (j.contains("U")) w.U = matrix_from_json(j["U"]);
  if (j.contains("b")) w.b = j["b"].get<Vector>();
  if (j.contains("retained")) {
    w.retained = j["retained"].get<std::vector<std::uint8_t>>();
    for (auto v : w.retained)
      if (v > 1) throw ParseError("retention mask entries must be 0 or 1");
  }
  return w;
}

inline void check_version(const json& j, std::string_view kind) {
  if (!j.is_object()) throw ParseError("document must be a JSON object");
  if (!j.contains("format_version")) throw ParseError("missing format_version");
  const int v = j["format_version"].get<int>();
  if (v != kFormatVersion) throw VersionError("unsupported format_version " + std::to_string(v));
  if (j.value("kind", std::string(kind)) != kind)
    throw ParseError("expected a " + std::string(kind) + " document");
}

template <typename F>
auto guarded(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ParseError(e.what());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());
  }
}

}  // namespace format_detail

inline std::string_view to_string(Activation a) { return format_detail::kActivations.name(a); }
inline std::string_view to_string(IoType t) { return format_detail::kIoTypes.name(t); }
inline std::string_view to_string(Mode m) { return format_detail::kModes.name(m); }
inline std::string_view to_string(LabelMode m) { return format_detail::kLabelModes.name(m); }

inline IoType parse_io_type(const std::string& s) { return format_detail::kIoTypes.parse(s, "io_type"); }
inline Mode parse_mode(const std::string& s) { return format_detail::kModes.parse(s, "mode"); }

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

inline json layer_to_json(const LayerSpec& l) {
  using namespace format_detail;
  json j = json::object();
  j["kind"] = kLayerKinds.name(l.kind);
  if (l.units) j["units"] = l.units;
  if (l.role != Role::Main) j["role"] = kRoles.name(l.role);
  if (is_trainable(l.kind) && l.kind != LayerKind::Embedding)
    j["activation"] = kActivations.name(l.activation);
  if (l.recurrent()) j["return_sequences"] = l.return_sequences;
  if (l.kind == LayerKind::Embedding) j["mask_zero"] = l.mask_zero;
  if (l.kind == LayerKind::RepeatVector) j["repeat_count"] = l.repeat_count;
  if (!gate_layout(l.kind).empty()) j["gate_layout"] = gate_layout(l.kind);
  json w = weights_to_json(l.params);
  for (auto it = w.begin(); it != w.end(); ++it) j[it.key()] = it.value();
  if (!l.per_timestep.empty()) {
    json steps = json::array();
    for (const auto& ws : l.per_timestep) steps.push_back(weights_to_json(ws));
    j["per_timestep"] = std::move(steps);
  }
  return j;
}

inline LayerSpec layer_from_json(const json& j) {
  using namespace format_detail;
  LayerSpec l;
  l.kind = kLayerKinds.parse(j.at("kind").get<std::string>(), "layer kind");
  l.units = j.value("units", std::size_t{0});
  if (j.contains("role")) l.role = kRoles.parse(j["role"].get<std::string>(), "role");
  l.activation = j.contains("activation")
                     ? kActivations.parse(j["activation"].get<std::string>(), "activation")
                     : (l.recurrent() ? Activation::Tanh : Activation::Linear);
  l.return_sequences = j.value("return_sequences", false);
  l.mask_zero = j.value("mask_zero", false);
  l.repeat_count = j.value("repeat_count", std::size_t{0});
  if (!gate_layout(l.kind).empty()) {
    const std::string layout = j.value("gate_layout", std::string(gate_layout(l.kind)));
    if (layout != gate_layout(l.kind))
      throw ParseError("unsupported gate layout '" + layout + "' for " +
                       std::string(to_string(l.kind)));
  }
  l.params = weights_from_json(j);
  if (j.contains("per_timestep"))
    for (const auto& s : j["per_timestep"]) l.per_timestep.push_back(weights_from_json(s));
  return l;
}

inline json model_to_json(const ModelSpec& m) {
  using namespace format_detail;
  json j = json::object();
  j["format_version"] = m.format_version;
  j["kind"] = "model";
  j["io_type"] = kIoTypes.name(m.io_type);
  j["timesteps_in"] = m.timesteps_in;
  j["timesteps_out"] = m.timesteps_out;
  j["num_classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["metadata"] = m.metadata;
  if (!m.vocab.empty()) j["vocab"] = m.vocab;
  if (m.io_type == IoType::EncoderDecoder) {
    j["target_vocab"] = m.target_vocab;
    j["start_tokens"] = m.start_tokens;
    j["end_token"] = m.end_token;
  }
  json layers = json::array();
  for (const auto& l : m.layers) layers.push_back(layer_to_json(l));
  j["layers"] = std::move(layers);
  return j;
}

/// Decodes a model document without shape validation.
inline ModelSpec model_from_json_unchecked(const json& j) {
  using namespace format_detail;
  return guarded([&] {
    check_version(j, "model");
    ModelSpec m;
    m.format_version = j["format_version"].get<int>();
    m.io_type = kIoTypes.parse(j.at("io_type").get<std::string>(), "io_type");
    m.timesteps_in = j.at("timesteps_in").get<std::size_t>();
    m.timesteps_out = j.at("timesteps_out").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.metadata = j.value("metadata", std::map<std::string, std::string>{});
    m.vocab = j.value("vocab", std::vector<std::string>{});
    m.target_vocab = j.value("target_vocab", std::vector<std::string>{});
    m.start_tokens = j.value("start_tokens", std::vector<int>{});
    m.end_token = j.value("end_token", -1);
    for (const auto& lj : j.at("layers")) m.layers.push_back(layer_from_json(lj));
    return m;
  });
}

inline ModelSpec model_from_json(const json& j) {
  ModelSpec m = model_from_json_unchecked(j);
  validate_model(m);
  return m;
}

inline std::string dump(const json& j) { return j.dump(1); }

/// Writes `text` to `path` atomically (temporary file + rename).
inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline json load_json(const std::filesystem::path& path) {
  return format_detail::parse_text(format_detail::read_file(path));
}

inline ModelSpec load_model(const std::filesystem::path& path) { return model_from_json(load_json(path)); }

inline void save_model(const ModelSpec& m, const std::filesystem::path& path) {
  validate_model(m);
  write_text_file(path, dump(model_to_json(m)));
}

/// Stable identifier (FNV-1a 64 of the canonical serialization).
inline std::string model_id(const ModelSpec& m) {
  const std::string text = model_to_json(m).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Modules
// ---------------------------------------------------------------------------

inline json module_to_json(const ModuleSpec& mod) {
  using namespace format_detail;
  json j = json::object();
  j["format_version"] = kFormatVersion;
  j["kind"] = "module";
  j["mode"] = kModes.name(mod.mode);
  j["dominant_class"] = mod.dominant_class;
  j["channeled"] = mod.channeled;
  j["removal_fraction"] = mod.removal_fraction;
  j["parent_model_id"] = mod.parent_model_id;
  j["base"] = model_to_json(mod.base);
  return j;
}

inline ModuleSpec module_from_json(const json& j) {
  using namespace format_detail;
  ModuleSpec mod = guarded([&] {
    check_version(j, "module");
    ModuleSpec m;
    m.mode = kModes.parse(j.at("mode").get<std::string>(), "mode");
    m.dominant_class = j.at("dominant_class").get<std::size_t>();
    m.channeled = j.at("channeled").get<bool>();
    m.removal_fraction = j.at("removal_fraction").get<double>();
    m.parent_model_id = j.value("parent_model_id", std::string{});
    m.base = model_from_json_unchecked(j.at("base"));
    return m;
  });
  validate_module(mod);
  return mod;
}

inline ModuleSpec load_module(const std::filesystem::path& path) {
  return module_from_json(load_json(path));
}

inline void save_module(const ModuleSpec& mod, const std::filesystem::path& path) {
  validate_module(mod);
  write_text_file(path, dump(module_to_json(mod)));
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// Checks the dataset invariants; violations are reported as ParseError.
inline void validate_dataset(const Dataset& d) {
  if (d.vocab.empty()) throw ParseError("dataset vocab is empty");
  if (d.class_names.empty()) throw ParseError("dataset needs at least one class");
  const auto k = static_cast<int>(d.num_classes());
  const auto vocab = static_cast<int>(d.vocab.size());
  if (d.label_mode == LabelMode::TargetSequence) {
    if (d.target_vocab.empty()) throw ParseError("TargetSequence dataset needs target_vocab");
    if (d.start_tokens.size() != d.num_classes())
      throw ParseError("one start token per target language is required");
    const auto tv = static_cast<int>(d.target_vocab.size());
    for (int t : d.start_tokens)
      if (t < 0 || t >= tv) throw ParseError("start token out of range");
    if (d.end_token < 0 || d.end_token >= tv) throw ParseError("end token out of range");
  }
  for (std::size_t s = 0; s < d.samples.size(); ++s) {
    const Sample& x = d.samples[s];
    const std::string tag = "sample " + std::to_string(s);
    if (x.tokens.size() != d.timesteps_in)
      throw ParseError(tag + ": expected " + std::to_string(d.timesteps_in) + " tokens");
    for (int t : x.tokens)
      if (t < 0 || t >= vocab) throw ParseError(tag + ": token id out of range");
    switch (d.label_mode) {
      case LabelMode::Single:
        if (x.label < 0 || x.label >= k) throw ParseError(tag + ": class index out of range");
        break;
      case LabelMode::PerTimestep:
        if (x.labels.size() != d.timesteps_out)
          throw ParseError(tag + ": expected " + std::to_string(d.timesteps_out) + " labels");
        for (int l : x.labels)
          if (l < -1 || l >= k) throw ParseError(tag + ": class index out of range");
        break;
      case LabelMode::TargetSequence: {
        if (x.label < 0 || x.label >= k) throw ParseError(tag + ": language index out of range");
        if (x.target.size() != d.timesteps_out)
          throw ParseError(tag + ": expected " + std::to_string(d.timesteps_out) + " target tokens");
        const auto tv = static_cast<int>(d.target_vocab.size());
        for (int t : x.target)
          if (t < 0 || t >= tv) throw ParseError(tag + ": target token out of range");
        break;
      }
    }
  }
}

inline json dataset_to_json(const Dataset& d) {
  using namespace format_detail;
  json j = json::object();
  j["format_version"] = kFormatVersion;
  j["kind"] = "dataset";
  j["label_mode"] = kLabelModes.name(d.label_mode);
  j["timesteps_in"] = d.timesteps_in;
  j["timesteps_out"] = d.timesteps_out;
  j["vocab"] = d.vocab;
  j["class_names"] = d.class_names;
  if (d.label_mode == LabelMode::TargetSequence) {
    j["target_vocab"] = d.target_vocab;
    j["start_tokens"] = d.start_tokens;
    j["end_token"] = d.end_token;
  }
  json samples = json::array();
  for (const auto& s : d.samples) {
    json sj = json::object();
    sj["tokens"] = s.tokens;
    switch (d.label_mode) {
      case LabelMode::Single: sj["label"] = s.label; break;
      case LabelMode::PerTimestep: sj["labels"] = s.labels; break;
      case LabelMode::TargetSequence:
        sj["label"] = s.label;
        sj["target"] = s.target;
        break;
    }
    samples.push_back(std::move(sj));
  }
  j["samples"] = std::move(samples);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  using namespace format_detail;
  Dataset d = guarded([&] {
    check_version(j, "dataset");
    Dataset out;
    out.label_mode = kLabelModes.parse(j.at("label_mode").get<std::string>(), "label_mode");
    out.timesteps_in = j.at("timesteps_in").get<std::size_t>();
    out.timesteps_out = j.value("timesteps_out", std::size_t{1});
    out.vocab = j.at("vocab").get<std::vector<std::string>>();
    out.class_names = j.at("class_names").get<std::vector<std::string>>();
    out.target_vocab = j.value("target_vocab", std::vector<std::string>{});
    out.start_tokens = j.value("start_tokens", std::vector<int>{});
    out.end_token = j.value("end_token", -1);
    for (const auto& sj : j.at("samples")) {
      Sample s;
      s.tokens = sj.at("tokens").get<std::vector<int>>();
      switch (out.label_mode) {
        case LabelMode::Single: s.label = sj.at("label").get<int>(); break;
        case LabelMode::PerTimestep: s.labels = sj.at("labels").get<std::vector<int>>(); break;
        case LabelMode::TargetSequence:
          s.label = sj.at("label").get<int>();
          s.target = sj.at("target").get<std::vector<int>>();
          break;
      }
      out.samples.push_back(std::move(s));
    }
    return out;
  });
  validate_dataset(d);
  return d;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_json(load_json(path));
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  validate_dataset(d);
  write_text_file(path, dump(dataset_to_json(d)));
}

}  // namespace rnnmod
