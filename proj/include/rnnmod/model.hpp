// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rnnmod/error.hpp"
#include "rnnmod/tensor.hpp"

namespace rnnmod {

inline constexpr int kFormatVersion = 1;
inline constexpr int kPadId = 0;

enum class LayerKind {
  Embedding,
  Masking,
  SimpleRNN,
  LSTM,
  GRU,
  Dense,
  TimeDistributedDense,
  RepeatVector,
  Flatten,
};

enum class Activation { Tanh, Sigmoid, ReLU, Softmax, Linear };

enum class IoType { OneToOne, ManyToOne, OneToMany, ManyToMany, EncoderDecoder };

/// Segment membership of a layer. Only encoder-decoder models use
/// Encoder/Decoder; everything else is Main.
enum class Role { Main, Encoder, Decoder };

enum class Mode { Rolled, Unrolled };

enum class LabelMode { Single, PerTimestep, TargetSequence };

inline bool is_recurrent(LayerKind k) {
  return k == LayerKind::SimpleRNN || k == LayerKind::LSTM || k == LayerKind::GRU;
}

inline bool is_dense(LayerKind k) {
  return k == LayerKind::Dense || k == LayerKind::TimeDistributedDense;
}

inline bool is_trainable(LayerKind k) {
  return is_recurrent(k) || is_dense(k) || k == LayerKind::Embedding;
}

/// Gate multiplier G: the number of h-wide column blocks in W, U and b.
inline std::size_t gate_count(LayerKind k) {
  switch (k) {
    case LayerKind::LSTM: return 4;
    case LayerKind::GRU: return 3;
    default: return 1;
  }
}

/// Column block order recorded in files for self-description.
inline std::string_view gate_layout(LayerKind k) {
  switch (k) {
    case LayerKind::LSTM: return "ifgo";
    case LayerKind::GRU: return "zrh";
    default: return "";
  }
}

/// One set of trainable parameters. `retained` is the per-node retention
/// mask (empty means every node is retained).
struct WeightSet {
  Matrix W;
  Matrix U;
  Vector b;
  std::vector<std::uint8_t> retained;

  bool node_retained(std::size_t node) const {
    return retained.empty() || retained[node] != 0;
  }

  friend bool operator==(const WeightSet&, const WeightSet&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t units = 0;
  bool return_sequences = false;
  Activation activation = Activation::Linear;
  bool mask_zero = false;
  std::size_t repeat_count = 0;
  Role role = Role::Main;
  WeightSet params;
  /// Unrolled modules only: one weight set per timestep the layer runs.
  std::vector<WeightSet> per_timestep;

  std::size_t gates() const { return gate_count(kind); }
  std::size_t input_dim() const { return params.W.rows(); }
  bool recurrent() const { return is_recurrent(kind); }

  /// Weights used at timestep `t`. Steps past the last unrolled copy reuse it.
  const WeightSet& weights_at(std::size_t t) const {
    if (per_timestep.empty()) return params;
    return per_timestep[std::min(t, per_timestep.size() - 1)];
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  int format_version = kFormatVersion;
  std::vector<LayerSpec> layers;
  IoType io_type = IoType::ManyToOne;
  std::size_t timesteps_in = 1;
  std::size_t timesteps_out = 1;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::map<std::string, std::string> metadata;
  /// Input vocabulary (index = token id). Optional; used to reconcile
  /// modules from different parents.
  std::vector<std::string> vocab;
  // Encoder-decoder models: classes are target languages.
  std::vector<std::string> target_vocab;
  std::vector<int> start_tokens;
  int end_token = -1;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct ModuleSpec {
  ModelSpec base;
  Mode mode = Mode::Rolled;
  std::size_t dominant_class = 0;
  bool channeled = false;
  double removal_fraction = 0.0;
  std::string parent_model_id;

  friend bool operator==(const ModuleSpec&, const ModuleSpec&) = default;
};

struct Sample {
  std::vector<int> tokens;
  /// Single: the class. TargetSequence: the target language.
  int label = -1;
  /// PerTimestep labels; -1 marks an ignored (padded) position.
  std::vector<int> labels;
  /// TargetSequence: target token ids, padded with kPadId.
  std::vector<int> target;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  LabelMode label_mode = LabelMode::Single;
  std::size_t timesteps_in = 1;
  std::size_t timesteps_out = 1;
  std::vector<std::string> vocab;
  std::vector<std::string> class_names;
  std::vector<std::string> target_vocab;
  std::vector<int> start_tokens;
  int end_token = -1;
  std::vector<Sample> samples;

  std::size_t num_classes() const { return class_names.size(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// ---------------------------------------------------------------------------
// Shape inference and validation
// ---------------------------------------------------------------------------

/// Activation shape flowing between layers: a sequence of `steps` vectors
/// or a single flat vector (seq == false, steps == 1).
struct Shape {
  bool seq = true;
  std::size_t steps = 1;
  std::size_t dim = 0;
  bool tokens = false;  // raw token ids (before Embedding)
};

struct LayerShape {
  Shape in;
  Shape out;
};

inline bool io_has_many_outputs(IoType io) {
  return io == IoType::OneToMany || io == IoType::ManyToMany || io == IoType::EncoderDecoder;
}

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Embedding: return "Embedding";
    case LayerKind::Masking: return "Masking";
    case LayerKind::SimpleRNN: return "SimpleRNN";
    case LayerKind::LSTM: return "LSTM";
    case LayerKind::GRU: return "GRU";
    case LayerKind::Dense: return "Dense";
    case LayerKind::TimeDistributedDense: return "TimeDistributedDense";
    case LayerKind::RepeatVector: return "RepeatVector";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

namespace detail {

inline std::string layer_tag(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
}

inline void check_weightset_shape(const LayerSpec& l, const WeightSet& w, std::size_t in_dim,
                                  const std::string& tag) {
  const std::size_t gh = l.gates() * l.units;
  if (w.W.rows() != in_dim || w.W.cols() != gh)
    throw ShapeError(tag + ": W must be " + std::to_string(in_dim) + "x" + std::to_string(gh) +
                     ", got " + std::to_string(w.W.rows()) + "x" + std::to_string(w.W.cols()));
  if (l.recurrent()) {
    if (w.U.rows() != l.units || w.U.cols() != gh)
      throw ShapeError(tag + ": U must be " + std::to_string(l.units) + "x" + std::to_string(gh));
  } else if (!w.U.empty() || w.U.rows() != 0) {
    throw ShapeError(tag + ": U is not allowed on a non-recurrent layer");
  }
  if (w.b.size() != gh) throw ShapeError(tag + ": b must have " + std::to_string(gh) + " entries");
  if (!w.retained.empty() && w.retained.size() != l.units)
    throw ShapeError(tag + ": retention mask must have one entry per node");
}

}  // namespace detail

/// Infers the input/output shape of every layer, checking that dimensions
/// chain. Throws ShapeError on any inconsistency. `output_width` overrides
/// the expected width of the final layer (channeled modules use 2).
inline std::vector<LayerShape> infer_shapes(const ModelSpec& m,
                                            std::optional<std::size_t> output_width = {}) {
  if (m.layers.empty()) throw ShapeError("model has no layers");
  const bool ed = m.io_type == IoType::EncoderDecoder;
  std::vector<LayerShape> shapes(m.layers.size());
  Shape cur{true, m.timesteps_in, 0, true};
  Role segment = ed ? Role::Encoder : Role::Main;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    const std::string tag = detail::layer_tag(i, l);
    if (!ed && l.role != Role::Main) throw ShapeError(tag + ": segment roles require EncoderDecoder");
    if (ed) {
      if (l.role == Role::Main) throw ShapeError(tag + ": encoder-decoder layers need a role");
      if (l.role == Role::Decoder && segment == Role::Encoder) {
        segment = Role::Decoder;
        cur = Shape{true, m.timesteps_out, 0, true};
      } else if (l.role != segment) {
        throw ShapeError(tag + ": encoder layers must precede decoder layers");
      }
    }
    if (cur.tokens && l.kind != LayerKind::Embedding)
      throw ShapeError(tag + ": token input must feed an Embedding layer");
    if (!is_trainable(l.kind) &&
        (!l.params.W.empty() || !l.params.U.empty() || !l.params.b.empty()))
      throw ShapeError(tag + ": layer carries no weights");
    if (!l.per_timestep.empty() && !l.recurrent())
      throw ShapeError(tag + ": per-timestep weights only exist for recurrent layers");
    shapes[i].in = cur;
    switch (l.kind) {
      case LayerKind::Embedding: {
        if (!cur.tokens) throw ShapeError(tag + ": Embedding must consume token ids");
        if (l.params.W.cols() != l.units || l.params.W.rows() == 0 || l.units == 0)
          throw ShapeError(tag + ": W must be vocab x units");
        if (!l.params.U.empty() || !l.params.b.empty())
          throw ShapeError(tag + ": Embedding has no U or b");
        cur = Shape{true, cur.steps, l.units, false};
        break;
      }
      case LayerKind::Masking:
        if (!cur.seq) throw ShapeError(tag + ": Masking needs a sequence input");
        break;
      case LayerKind::SimpleRNN:
      case LayerKind::LSTM:
      case LayerKind::GRU: {
        if (!cur.seq) throw ShapeError(tag + ": recurrent layer needs a sequence input");
        if (l.units == 0) throw ShapeError(tag + ": units must be positive");
        if ((l.kind == LayerKind::LSTM || l.kind == LayerKind::GRU) &&
            l.activation != Activation::Tanh)
          throw ShapeError(tag + ": gated cells use tanh candidates");
        if (l.activation == Activation::Softmax) throw ShapeError(tag + ": invalid activation");
        detail::check_weightset_shape(l, l.params, cur.dim, tag);
        if (!l.per_timestep.empty() && l.per_timestep.size() != cur.steps)
          throw ShapeError(tag + ": unrolled copies must match the " + std::to_string(cur.steps) +
                           " timesteps the layer runs");
        for (const auto& w : l.per_timestep) detail::check_weightset_shape(l, w, cur.dim, tag);
        cur = l.return_sequences ? Shape{true, cur.steps, l.units, false}
                                 : Shape{false, 1, l.units, false};
        break;
      }
      case LayerKind::Dense:
      case LayerKind::TimeDistributedDense: {
        if (l.kind == LayerKind::Dense && cur.seq)
          throw ShapeError(tag + ": Dense needs a flat input (use TimeDistributedDense)");
        if (l.kind == LayerKind::TimeDistributedDense && !cur.seq)
          throw ShapeError(tag + ": TimeDistributedDense needs a sequence input");
        if (l.units == 0) throw ShapeError(tag + ": units must be positive");
        detail::check_weightset_shape(l, l.params, cur.dim, tag);
        cur.dim = l.units;
        break;
      }
      case LayerKind::RepeatVector:
        if (cur.seq) throw ShapeError(tag + ": RepeatVector needs a flat input");
        if (l.repeat_count == 0) throw ShapeError(tag + ": repeat_count must be positive");
        cur = Shape{true, l.repeat_count, cur.dim, false};
        break;
      case LayerKind::Flatten:
        if (!cur.seq) throw ShapeError(tag + ": Flatten needs a sequence input");
        cur = Shape{false, 1, cur.steps * cur.dim, false};
        break;
    }
    shapes[i].out = cur;
    if (l.activation == Activation::Softmax && i + 1 != m.layers.size())
      throw ShapeError(tag + ": Softmax is only valid on the output layer");
  }

  const LayerSpec& out = m.layers.back();
  const Shape& o = shapes.back().out;
  if (!is_dense(out.kind)) throw ShapeError("final layer must be Dense or TimeDistributedDense");
  if (out.activation != Activation::Softmax && out.activation != Activation::Sigmoid)
    throw ShapeError("output layer activation must be Softmax or Sigmoid");
  const std::size_t want =
      output_width ? *output_width : (ed ? m.target_vocab.size() : m.num_classes);
  if (o.dim != want)
    throw ShapeError("output layer width " + std::to_string(o.dim) + " != expected " +
                     std::to_string(want));

  switch (m.io_type) {
    case IoType::OneToOne:
      if (m.timesteps_in != 1 || m.timesteps_out != 1 || o.seq)
        throw ShapeError("OneToOne requires one input and one output timestep");
      break;
    case IoType::ManyToOne:
      if (m.timesteps_out != 1 || o.seq) throw ShapeError("ManyToOne requires a single output");
      break;
    case IoType::OneToMany:
      if (m.timesteps_in != 1) throw ShapeError("OneToMany requires one input timestep");
      [[fallthrough]];
    case IoType::ManyToMany:
      if (!o.seq || o.steps != m.timesteps_out)
        throw ShapeError("many-output model must emit timesteps_out output steps");
      break;
    case IoType::EncoderDecoder: {
      if (segment != Role::Decoder) throw ShapeError("encoder-decoder model needs decoder layers");
      if (!o.seq || o.steps != m.timesteps_out)
        throw ShapeError("decoder must emit timesteps_out steps");
      const LayerSpec* enc = nullptr;
      const LayerSpec* dec = nullptr;
      for (const auto& l : m.layers) {
        if (!l.recurrent()) continue;
        if (l.role == Role::Encoder) enc = &l;
        if (l.role == Role::Decoder && dec == nullptr) dec = &l;
      }
      if (enc == nullptr || dec == nullptr)
        throw ShapeError("encoder and decoder each need a recurrent layer");
      if (enc->return_sequences) throw ShapeError("last encoder recurrent layer must emit its final state");
      if (enc->kind != dec->kind || enc->units != dec->units)
        throw ShapeError("encoder state must match the first decoder recurrent layer");
      if (m.start_tokens.size() != m.num_classes)
        throw ShapeError("one start token per target language is required");
      for (int t : m.start_tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= m.target_vocab.size())
          throw ShapeError("start token out of range");
      if (m.end_token < 0 || static_cast<std::size_t>(m.end_token) >= m.target_vocab.size())
        throw ShapeError("end token out of range");
      break;
    }
  }
  return shapes;
}

/// Full structural validation of a monolithic model.
inline void validate_model(const ModelSpec& m) {
  if (m.num_classes == 0) throw ShapeError("num_classes must be positive");
  if (m.timesteps_in == 0 || m.timesteps_out == 0) throw ShapeError("timesteps must be positive");
  if (!m.class_names.empty() && m.class_names.size() != m.num_classes)
    throw ShapeError("class_names must have num_classes entries");
  for (const auto& l : m.layers)
    if (!l.per_timestep.empty()) throw ShapeError("a model cannot carry per-timestep weights");
  infer_shapes(m);
}

/// A layer whose hidden nodes may be removed: recurrent layers and hidden
/// (non-output) Dense/TimeDistributedDense layers.
inline bool is_prunable(const ModelSpec& m, std::size_t i) {
  const LayerKind k = m.layers[i].kind;
  if (is_recurrent(k)) return true;
  return is_dense(k) && i + 1 != m.layers.size();
}

/// Number of timesteps layer `i` runs (1 for flat layers).
inline std::size_t layer_steps(const std::vector<LayerShape>& shapes, std::size_t i) {
  return shapes[i].in.seq ? shapes[i].in.steps : 1;
}

inline void validate_module(const ModuleSpec& mod) {
  const ModelSpec& m = mod.base;
  if (m.num_classes == 0) throw ShapeError("num_classes must be positive");
  if (mod.removal_fraction < 0.0 || mod.removal_fraction > 1.0)
    throw ShapeError("removal_fraction must lie in [0,1]");
  if (mod.dominant_class >= m.num_classes) throw ShapeError("dominant_class out of range");
  if (mod.channeled && m.io_type == IoType::EncoderDecoder)
    throw ShapeError("encoder-decoder modules are never channeled");
  const auto shapes = infer_shapes(m, mod.channeled ? std::optional<std::size_t>(2) : std::nullopt);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    if (mod.mode == Mode::Rolled && !l.per_timestep.empty())
      throw ShapeError("rolled modules keep a single weight copy");
    if (mod.mode == Mode::Unrolled && l.recurrent() && l.per_timestep.size() != layer_steps(shapes, i))
      throw ShapeError(detail::layer_tag(i, l) + ": unrolled module needs one copy per timestep");
  }
}

}  // namespace rnnmod
