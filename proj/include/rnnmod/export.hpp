// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Export manifests written by the framework bridge
// (tests/fixtures/make_oracle_fixtures.py): the layer mapping table, the
// tolerance, and recorded reference outputs that the runtime replays.

#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rnnmod/format.hpp"
#include "rnnmod/runtime.hpp"

namespace rnnmod {

/// One framework layer and the LayerSpec kind it becomes.
struct LayerMapping {
  std::size_t index = 0;
  std::string source_class;
  LayerKind kind = LayerKind::Dense;
  std::string gate_layout;  // recurrent layers only
  bool sequence_input = false;  // a Dense applied to every timestep

  friend bool operator==(const LayerMapping&, const LayerMapping&) = default;
};

struct ExportManifest {
  std::string source;
  std::string framework;
  std::string model_id;
  double tolerance = 1e-5;
  std::vector<LayerMapping> layers;
  /// Oracle file (relative to the manifest) holding the recorded outputs.
  std::string oracle;
  /// Largest |framework weight - file weight| seen when the export was made.
  double weight_deviation = 0.0;

  friend bool operator==(const ExportManifest&, const ExportManifest&) = default;
};

/// The mapping table: framework class name -> LayerSpec kind. GRU must use
/// the reset-before variant (`reset_after` false). A Dense fed a sequence acts
/// per timestep and maps like TimeDistributed(Dense).
inline LayerKind map_source_layer(const std::string& source_class, bool reset_after = false,
                                  bool sequence_input = false) {
  static const std::vector<std::pair<std::string, LayerKind>> table = {
      {"Embedding", LayerKind::Embedding},
      {"Masking", LayerKind::Masking},
      {"SimpleRNN", LayerKind::SimpleRNN},
      {"LSTM", LayerKind::LSTM},
      {"GRU", LayerKind::GRU},
      {"Dense", LayerKind::Dense},
      {"TimeDistributed(Dense)", LayerKind::TimeDistributedDense},
      {"RepeatVector", LayerKind::RepeatVector},
      {"Flatten", LayerKind::Flatten},
  };
  for (const auto& [name, kind] : table) {
    if (name != source_class) continue;
    if (kind == LayerKind::GRU && reset_after)
      throw UnsupportedLayer("GRU with reset_after=True is not supported; export the reset-before variant");
    if (kind == LayerKind::Dense && sequence_input) return LayerKind::TimeDistributedDense;
    return kind;
  }
  throw UnsupportedLayer("no LayerSpec kind for framework layer '" + source_class + "'");
}

inline json export_manifest_to_json(const ExportManifest& m) {
  json layers = json::array();
  for (const LayerMapping& l : m.layers) {
    json j = {{"index", l.index}, {"source_class", l.source_class}, {"kind", to_string(l.kind)}};
    if (!l.gate_layout.empty()) j["gate_layout"] = l.gate_layout;
    if (l.sequence_input) j["sequence_input"] = true;
    layers.push_back(std::move(j));
  }
  return {{"format_version", kFormatVersion}, {"kind", "export"},      {"source", m.source},
          {"framework", m.framework},        {"model_id", m.model_id}, {"tolerance", m.tolerance},
          {"oracle", m.oracle},              {"weight_deviation", m.weight_deviation}, {"layers", layers}};
}

/// Parses and checks a manifest: every entry maps to exactly the kind the
/// mapping table gives, and recurrent entries record the runtime gate order.
inline ExportManifest export_manifest_from_json(const json& j) {
  using namespace format_detail;
  return guarded([&] {
    check_version(j, "export");
    ExportManifest m;
    m.source = j.at("source").get<std::string>();
    m.framework = j.value("framework", std::string{});
    m.model_id = j.value("model_id", std::string{});
    m.tolerance = j.at("tolerance").get<double>();
    m.oracle = j.value("oracle", std::string{});
    m.weight_deviation = j.value("weight_deviation", 0.0);
    if (!(m.tolerance > 0.0)) throw ParseError("export tolerance must be positive");
    for (const json& lj : j.at("layers")) {
      LayerMapping l;
      l.index = lj.at("index").get<std::size_t>();
      l.source_class = lj.at("source_class").get<std::string>();
      l.kind = kLayerKinds.parse(lj.at("kind").get<std::string>(), "layer kind");
      l.gate_layout = lj.value("gate_layout", std::string{});
      l.sequence_input = lj.value("sequence_input", false);
      if (map_source_layer(l.source_class, false, l.sequence_input) != l.kind)
        throw ParseError("layer " + std::to_string(l.index) + ": '" + l.source_class + "' does not map to " +
                         std::string(to_string(l.kind)));
      if (l.gate_layout != gate_layout(l.kind))
        throw ParseError("layer " + std::to_string(l.index) + ": gate order '" + l.gate_layout +
                         "' differs from '" + std::string(gate_layout(l.kind)) + "'");
      if (l.index != m.layers.size()) throw ParseError("layer mapping must list layers in order");
      m.layers.push_back(std::move(l));
    }
    return m;
  });
}

inline ExportManifest load_export_manifest(const std::filesystem::path& path) {
  return export_manifest_from_json(load_json(path));
}

inline void save_export_manifest(const ExportManifest& m, const std::filesystem::path& path) {
  write_text_file(path, dump(export_manifest_to_json(m)) + "\n");
}

/// Checks that `model` is the one the manifest describes, layer for layer.
inline void check_export(const ExportManifest& m, const ModelSpec& model) {
  if (m.layers.size() != model.layers.size())
    throw ShapeError("export lists " + std::to_string(m.layers.size()) + " layers, model has " +
                     std::to_string(model.layers.size()));
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].kind != model.layers[i].kind)
      throw ShapeError(detail::layer_tag(i, model.layers[i]) + " does not match the export mapping");
  if (!m.model_id.empty() && m.model_id != model_id(model))
    throw StateError("model id " + model_id(model) + " differs from the exported " + m.model_id);
}

/// Largest deviation between recorded per-layer outputs and the runtime.
/// `samples` holds {"tokens", "layers": {"<index>": rows}} records (plus
/// "label"/"target" for encoder-decoder models). Rows are per timestep, or a
/// single row for a layer that returns only its final state; the output
/// layer is compared on its scores.
inline double replay_deviation(const ModelSpec& m, const json& samples) {
  double err = 0.0;
  auto diff = [&](std::span<const double> got, const Vector& want) {
    if (got.size() != want.size()) throw ShapeError("recorded row width differs from the runtime output");
    err = std::max(err, max_abs_diff(got, want));
  };
  for (const json& s : samples) {
    Sample sample;
    sample.tokens = s.at("tokens").get<std::vector<int>>();
    if (s.contains("target")) {
      sample.label = s.at("label");
      sample.target = s.at("target").get<std::vector<int>>();
    }
    std::vector<LayerTrace> trace;
    const Output out = forward_traced(m, sample, trace);
    for (auto it = s.at("layers").begin(); it != s.at("layers").end(); ++it) {
      const std::size_t li = std::stoul(it.key());
      if (li >= m.layers.size()) throw ShapeError("recorded layer " + it.key() + " does not exist");
      const json& rows = it.value();
      for (std::size_t t = 0; t < rows.size(); ++t) {
        const Vector want = rows[t].get<Vector>();
        if (li + 1 == m.layers.size()) {
          if (t >= out.scores.rows()) throw ShapeError("more recorded rows than output timesteps");
          diff(out.scores.row(t), want);
          continue;
        }
        const LayerTrace& lt = trace.at(li);
        if (rows.size() == 1 && lt.steps.size() > 1) {
          std::size_t last = lt.steps.size();
          while (last > 0 && !lt.valid[last - 1]) --last;
          if (last > 0) diff(lt.steps[last - 1], want);
        } else if (lt.valid.at(t)) {
          diff(lt.steps.at(t), want);
        }
      }
    }
  }
  return err;
}

}  // namespace rnnmod
