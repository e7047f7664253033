// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward execution for every supported layer kind and I/O architecture,
// plus the hidden-value monitor used by concern identification.

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rnnmod/error.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/tensor.hpp"

namespace rnnmod {

/// Recurrent state. `c` is only used by LSTM layers.
struct CellState {
  Vector h;
  Vector c;

  static CellState zeros(std::size_t units, bool with_cell) {
    return {Vector(units, 0.0), with_cell ? Vector(units, 0.0) : Vector{}};
  }
};

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Linear:
    case Activation::Softmax: return x;
  }
  return x;
}

/// Derivative of the activation expressed through its output y = act(x).
inline double activate_grad_from_output(Activation a, double y) {
  switch (a) {
    case Activation::Tanh: return 1.0 - y * y;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::ReLU: return y > 0.0 ? 1.0 : 0.0;
    case Activation::Linear:
    case Activation::Softmax: return 1.0;
  }
  return 1.0;
}

namespace runtime_detail {

inline void check_cell_input(const LayerSpec& layer, const WeightSet& w,
                             std::span<const double> x, const CellState& s) {
  if (x.size() != w.W.rows())
    throw ShapeError("cell input width " + std::to_string(x.size()) + " != " +
                     std::to_string(w.W.rows()));
  if (s.h.size() != layer.units) throw ShapeError("hidden state width mismatch");
  if (layer.kind == LayerKind::LSTM && s.c.size() != layer.units)
    throw ShapeError("cell state width mismatch");
  if (w.W.cols() != layer.gates() * layer.units || w.U.rows() != layer.units ||
      w.b.size() != layer.gates() * layer.units)
    throw ShapeError("cell weights do not match gate layout");
}

/// s = x·W + h·U + b over all gate blocks.
inline Vector preactivation(const WeightSet& w, std::span<const double> x, std::span<const double> h) {
  Vector s = w.b;
  add_vec_mat(x, w.W, s);
  add_vec_mat(h, w.U, s);
  return s;
}

}  // namespace runtime_detail

/// LSTM step, gate blocks ordered [i | f | g | o]. If `gates` is non-null it
/// receives the activated gate values in the same layout.
inline CellState lstm_op(const LayerSpec& layer, const WeightSet& w, std::span<const double> x,
                         const CellState& prev, Vector* gates = nullptr) {
  if (layer.kind != LayerKind::LSTM) throw ShapeError("lstm_op on a non-LSTM layer");
  runtime_detail::check_cell_input(layer, w, x, prev);
  const std::size_t n = layer.units;
  Vector s = runtime_detail::preactivation(w, x, prev.h);
  CellState next{Vector(n), Vector(n)};
  for (std::size_t k = 0; k < n; ++k) {
    const double i = sigmoid(s[k]);
    const double f = sigmoid(s[n + k]);
    const double g = std::tanh(s[2 * n + k]);
    const double o = sigmoid(s[3 * n + k]);
    next.c[k] = i * g + f * prev.c[k];
    next.h[k] = o * std::tanh(next.c[k]);
    s[k] = i;
    s[n + k] = f;
    s[2 * n + k] = g;
    s[3 * n + k] = o;
  }
  if (gates) *gates = std::move(s);
  return next;
}

inline CellState lstm_op(const LayerSpec& layer, std::span<const double> x, const CellState& prev) {
  return lstm_op(layer, layer.params, x, prev);
}

/// GRU step (reset applied before the recurrent product), blocks [z | r | h~]:
///   h_t = z * h_{t-1} + (1 - z) * tanh(x·W_h + (r * h_{t-1})·U_h + b_h)
inline CellState gru_op(const LayerSpec& layer, const WeightSet& w, std::span<const double> x,
                        const CellState& prev, Vector* gates = nullptr) {
  if (layer.kind != LayerKind::GRU) throw ShapeError("gru_op on a non-GRU layer");
  runtime_detail::check_cell_input(layer, w, x, prev);
  const std::size_t n = layer.units;
  const std::size_t gh = 3 * n;
  Vector s = w.b;
  add_vec_mat(x, w.W, s);
  // z and r blocks use h_{t-1}; the candidate block uses r * h_{t-1}.
  for (std::size_t i = 0; i < n; ++i) {
    const double hi = prev.h[i];
    if (hi == 0.0) continue;
    const auto r = w.U.row(i);
    for (std::size_t j = 0; j < 2 * n; ++j) s[j] += hi * r[j];
  }
  Vector z(n), rg(n);
  for (std::size_t k = 0; k < n; ++k) {
    z[k] = sigmoid(s[k]);
    rg[k] = sigmoid(s[n + k]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double rh = rg[i] * prev.h[i];
    if (rh == 0.0) continue;
    const auto r = w.U.row(i);
    for (std::size_t j = 2 * n; j < gh; ++j) s[j] += rh * r[j];
  }
  CellState next{Vector(n), {}};
  for (std::size_t k = 0; k < n; ++k) {
    const double cand = std::tanh(s[2 * n + k]);
    next.h[k] = z[k] * prev.h[k] + (1.0 - z[k]) * cand;
    s[k] = z[k];
    s[n + k] = rg[k];
    s[2 * n + k] = cand;
  }
  if (gates) *gates = std::move(s);
  return next;
}

inline CellState gru_op(const LayerSpec& layer, std::span<const double> x, const CellState& prev) {
  return gru_op(layer, layer.params, x, prev);
}

/// Vanilla recurrent step: h_t = act(x·W + h_{t-1}·U + b).
inline CellState rnn_op(const LayerSpec& layer, const WeightSet& w, std::span<const double> x,
                        const CellState& prev) {
  if (layer.kind != LayerKind::SimpleRNN) throw ShapeError("rnn_op on a non-SimpleRNN layer");
  runtime_detail::check_cell_input(layer, w, x, prev);
  Vector s = runtime_detail::preactivation(w, x, prev.h);
  for (double& v : s) v = activate(layer.activation, v);
  return {std::move(s), {}};
}

inline CellState rnn_op(const LayerSpec& layer, std::span<const double> x, const CellState& prev) {
  return rnn_op(layer, layer.params, x, prev);
}

inline CellState cell_step(const LayerSpec& layer, const WeightSet& w, std::span<const double> x,
                           const CellState& prev, Vector* gates = nullptr) {
  CellState next;
  switch (layer.kind) {
    case LayerKind::LSTM: next = lstm_op(layer, w, x, prev, gates); break;
    case LayerKind::GRU: next = gru_op(layer, w, x, prev, gates); break;
    case LayerKind::SimpleRNN:
      next = rnn_op(layer, w, x, prev);
      if (gates) *gates = next.h;
      break;
    default: throw ShapeError("cell_step on a non-recurrent layer");
  }
  // A removed node emits nothing and keeps no memory.
  if (!w.retained.empty()) {
    for (std::size_t k = 0; k < layer.units; ++k) {
      if (w.retained[k]) continue;
      next.h[k] = 0.0;
      if (!next.c.empty()) next.c[k] = 0.0;
    }
  }
  return next;
}

/// y = act(x·W + b) for one Dense application, honoring the retention mask.
/// With `raw` the activation is skipped (output heads return logits).
inline Vector dense_op(const LayerSpec& layer, const WeightSet& w, std::span<const double> x,
                       bool raw = false) {
  if (x.size() != w.W.rows())
    throw ShapeError("dense input width " + std::to_string(x.size()) + " != " +
                     std::to_string(w.W.rows()));
  Vector y = w.b;
  add_vec_mat(x, w.W, y);
  if (!raw && layer.activation != Activation::Softmax)
    for (double& v : y) v = activate(layer.activation, v);
  if (!w.retained.empty())
    for (std::size_t k = 0; k < y.size(); ++k)
      if (!w.retained[k]) y[k] = 0.0;
  return y;
}

// ---------------------------------------------------------------------------
// Whole-model execution
// ---------------------------------------------------------------------------

/// Values flowing between layers. Flat values are one step with seq == false.
struct Activations {
  std::vector<Vector> steps;
  std::vector<std::uint8_t> valid;  // 0 marks a masked timestep
  bool seq = true;
};

/// Output of the final layer. One row per output timestep; `logits` are the
/// pre-activation values, `scores` the Softmax/Sigmoid outputs.
struct Output {
  Matrix logits;
  Matrix scores;
  std::vector<std::uint8_t> valid;
};

struct LayerTrace {
  std::vector<Vector> steps;         // hidden values per timestep
  std::vector<std::uint8_t> valid;   // 0 = masked, value not recorded
  bool recorded() const { return !steps.empty(); }
};

/// Hidden values recorded by the monitor, indexed by (sample, layer,
/// timestep, node). Masked timesteps are excluded.
struct ActivationTrace {
  std::vector<std::vector<LayerTrace>> samples;

  std::size_t value_count() const {
    std::size_t n = 0;
    for (const auto& s : samples)
      for (const auto& l : s)
        for (std::size_t t = 0; t < l.steps.size(); ++t)
          if (l.valid[t]) n += l.steps[t].size();
    return n;
  }

  std::optional<double> at(std::size_t sample, std::size_t layer, std::size_t ts,
                           std::size_t node) const {
    const LayerTrace& l = samples.at(sample).at(layer);
    if (ts >= l.steps.size() || !l.valid[ts]) return std::nullopt;
    return l.steps[ts].at(node);
  }

  /// Merges traces recorded over disjoint sample batches, in order.
  void append(ActivationTrace other) {
    for (auto& s : other.samples) samples.push_back(std::move(s));
  }
};

namespace runtime_detail {

inline std::size_t first_decoder_layer(const ModelSpec& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].role == Role::Decoder) return i;
  return m.layers.size();
}

/// Executes layers [begin, end) on `tokens`. `init` seeds the first
/// recurrent layer; the final state of the last recurrent layer is written
/// to `final_state`. Hidden layers are recorded into `trace` when given.
inline Activations run_segment(const ModelSpec& m, std::size_t begin, std::size_t end,
                               std::span<const int> tokens, const CellState* init,
                               CellState* final_state, std::vector<LayerTrace>* trace) {
  Activations cur;
  bool first_recurrent = true;
  for (std::size_t li = begin; li < end; ++li) {
    const LayerSpec& layer = m.layers[li];
    const bool output_layer = li + 1 == m.layers.size();
    LayerTrace* tr = trace ? &(*trace)[li] : nullptr;
    switch (layer.kind) {
      case LayerKind::Embedding: {
        const Matrix& E = layer.params.W;
        cur.seq = true;
        cur.steps.assign(tokens.size(), Vector{});
        cur.valid.assign(tokens.size(), 1);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          const int tok = tokens[t];
          if (tok < 0 || static_cast<std::size_t>(tok) >= E.rows())
            throw ShapeError("token id " + std::to_string(tok) + " outside the embedding vocabulary");
          const auto r = E.row(static_cast<std::size_t>(tok));
          cur.steps[t].assign(r.begin(), r.end());
          if (layer.mask_zero && tok == kPadId) cur.valid[t] = 0;
        }
        break;
      }
      case LayerKind::Masking:
        for (std::size_t t = 0; t < cur.steps.size(); ++t) {
          bool all_zero = true;
          for (double v : cur.steps[t]) all_zero = all_zero && v == 0.0;
          if (all_zero) cur.valid[t] = 0;
        }
        break;
      case LayerKind::SimpleRNN:
      case LayerKind::LSTM:
      case LayerKind::GRU: {
        if (!cur.seq) throw ShapeError("recurrent layer received a flat input");
        CellState state = (first_recurrent && init) ? *init
                                                    : CellState::zeros(layer.units, layer.kind == LayerKind::LSTM);
        first_recurrent = false;
        Activations out;
        out.seq = true;
        out.steps.resize(cur.steps.size());
        out.valid = cur.valid;
        if (tr) {
          tr->steps.assign(cur.steps.size(), Vector{});
          tr->valid = cur.valid;
        }
        for (std::size_t t = 0; t < cur.steps.size(); ++t) {
          if (cur.valid[t]) {
            state = cell_step(layer, layer.weights_at(t), cur.steps[t], state);
            if (tr) tr->steps[t] = state.h;
          }
          // Masked steps carry the previous output forward.
          out.steps[t] = state.h;
        }
        if (final_state) *final_state = state;
        if (!layer.return_sequences) {
          out.steps = {state.h};
          out.valid = {1};
          out.seq = false;
        }
        cur = std::move(out);
        break;
      }
      case LayerKind::Dense:
      case LayerKind::TimeDistributedDense: {
        if ((layer.kind == LayerKind::Dense) == cur.seq)
          throw ShapeError(std::string(to_string(layer.kind)) + " received the wrong input rank");
        if (tr && !output_layer) {
          tr->steps.assign(cur.steps.size(), Vector{});
          tr->valid = cur.valid;
        }
        for (std::size_t t = 0; t < cur.steps.size(); ++t) {
          cur.steps[t] = dense_op(layer, layer.params, cur.steps[t], output_layer);
          if (tr && !output_layer && cur.valid[t]) tr->steps[t] = cur.steps[t];
        }
        break;
      }
      case LayerKind::RepeatVector: {
        if (cur.seq) throw ShapeError("RepeatVector received a sequence input");
        Vector v = cur.steps.at(0);
        cur.steps.assign(layer.repeat_count, v);
        cur.valid.assign(layer.repeat_count, 1);
        cur.seq = true;
        break;
      }
      case LayerKind::Flatten: {
        if (!cur.seq) throw ShapeError("Flatten received a flat input");
        Vector flat;
        for (const auto& s : cur.steps) flat.insert(flat.end(), s.begin(), s.end());
        cur.steps = {std::move(flat)};
        cur.valid = {1};
        cur.seq = false;
        break;
      }
    }
  }
  return cur;
}

/// Teacher-forced decoder input: the language start token followed by the
/// target shifted right by one.
inline std::vector<int> decoder_inputs(const ModelSpec& m, const Sample& s) {
  if (s.label < 0 || static_cast<std::size_t>(s.label) >= m.start_tokens.size())
    throw ShapeError("sample language outside the model's start tokens");
  std::vector<int> in;
  in.reserve(s.target.size());
  in.push_back(m.start_tokens[static_cast<std::size_t>(s.label)]);
  for (std::size_t t = 0; t + 1 < s.target.size(); ++t) in.push_back(s.target[t]);
  return in;
}

inline Output execute(const ModelSpec& m, const Sample& sample, std::vector<LayerTrace>* trace) {
  if (sample.tokens.empty()) throw ShapeError("sample has no tokens");
  if (trace) trace->assign(m.layers.size(), LayerTrace{});
  Activations last;
  if (m.io_type == IoType::EncoderDecoder) {
    if (sample.target.empty()) throw ShapeError("encoder-decoder forward needs a target sequence");
    const std::size_t split = first_decoder_layer(m);
    CellState enc_state;
    run_segment(m, 0, split, sample.tokens, nullptr, &enc_state, trace);
    const std::vector<int> dec_in = decoder_inputs(m, sample);
    last = run_segment(m, split, m.layers.size(), dec_in, &enc_state, nullptr, trace);
  } else {
    last = run_segment(m, 0, m.layers.size(), sample.tokens, nullptr, nullptr, trace);
  }
  const LayerSpec& head = m.layers.back();
  const std::size_t rows = last.steps.size();
  const std::size_t cols = head.units;
  Output out{Matrix(rows, cols), Matrix(rows, cols), last.valid};
  for (std::size_t t = 0; t < rows; ++t) {
    const Vector& z = last.steps[t];
    const Vector p = head.activation == Activation::Softmax ? softmax(z) : Vector{};
    for (std::size_t k = 0; k < cols; ++k) {
      out.logits(t, k) = z[k];
      out.scores(t, k) = head.activation == Activation::Softmax ? p[k] : sigmoid(z[k]);
    }
  }
  return out;
}

}  // namespace runtime_detail

inline Output forward(const ModelSpec& model, const Sample& sample) {
  return runtime_detail::execute(model, sample, nullptr);
}

/// Same as forward; Unrolled modules use their t-th weight copy at step t.
inline Output forward_module(const ModuleSpec& module, const Sample& sample) {
  return runtime_detail::execute(module.base, sample, nullptr);
}

/// Forward pass that also returns the per-layer hidden values of one sample.
inline Output forward_traced(const ModelSpec& model, const Sample& sample,
                             std::vector<LayerTrace>& trace) {
  return runtime_detail::execute(model, sample, &trace);
}

/// Records hidden values of every recurrent layer (each unmasked timestep)
/// and every hidden Dense/TimeDistributedDense layer for each sample.
inline ActivationTrace monitor(std::span<const Sample> samples, const ModelSpec& model) {
  ActivationTrace trace;
  trace.samples.reserve(samples.size());
  for (const Sample& s : samples) {
    std::vector<LayerTrace> layers;
    runtime_detail::execute(model, s, &layers);
    trace.samples.push_back(std::move(layers));
  }
  return trace;
}

/// Per-output-step argmax of a monolithic model (softmax heads).
inline std::vector<std::size_t> predict_classes(const ModelSpec& model, const Sample& sample) {
  const Output out = forward(model, sample);
  std::vector<std::size_t> cls(out.logits.rows());
  for (std::size_t t = 0; t < cls.size(); ++t) cls[t] = argmax(out.logits.row(t));
  return cls;
}

/// Greedy decoding for encoder-decoder models: the encoder consumes `src`,
/// the decoder emits argmax tokens fed back step by step until `end_token`
/// or `max_len` tokens. The end token is not included in the result.
inline std::vector<int> decode_greedy(const ModelSpec& m, std::span<const int> src, int start_token,
                                      int end_token, std::size_t max_len) {
  if (m.io_type != IoType::EncoderDecoder) throw ShapeError("decode_greedy needs an encoder-decoder model");
  if (src.empty()) throw ShapeError("empty source sequence");
  const std::size_t split = runtime_detail::first_decoder_layer(m);
  CellState enc_state;
  runtime_detail::run_segment(m, 0, split, src, nullptr, &enc_state, nullptr);

  // Per-layer recurrent state of the decoder stack, advanced one step at a time.
  std::vector<CellState> states(m.layers.size());
  bool seeded = false;
  for (std::size_t li = split; li < m.layers.size(); ++li) {
    const LayerSpec& l = m.layers[li];
    if (!l.recurrent()) continue;
    states[li] = seeded ? CellState::zeros(l.units, l.kind == LayerKind::LSTM) : enc_state;
    seeded = true;
  }

  std::vector<int> out;
  int token = start_token;
  for (std::size_t t = 0; t < max_len; ++t) {
    Vector x;
    bool valid = true;
    for (std::size_t li = split; li < m.layers.size(); ++li) {
      const LayerSpec& l = m.layers[li];
      switch (l.kind) {
        case LayerKind::Embedding: {
          if (token < 0 || static_cast<std::size_t>(token) >= l.params.W.rows())
            throw ShapeError("decoder token outside the embedding vocabulary");
          const auto r = l.params.W.row(static_cast<std::size_t>(token));
          x.assign(r.begin(), r.end());
          if (l.mask_zero && token == kPadId) valid = false;
          break;
        }
        case LayerKind::Masking: {
          bool all_zero = true;
          for (double v : x) all_zero = all_zero && v == 0.0;
          if (all_zero) valid = false;
          break;
        }
        case LayerKind::SimpleRNN:
        case LayerKind::LSTM:
        case LayerKind::GRU:
          if (valid) states[li] = cell_step(l, l.weights_at(t), x, states[li]);
          x = states[li].h;
          break;
        case LayerKind::Dense:
        case LayerKind::TimeDistributedDense:
          x = dense_op(l, l.params, x, li + 1 == m.layers.size());
          break;
        default: throw ShapeError("layer kind not supported in a step-wise decoder");
      }
    }
    const int next = static_cast<int>(argmax(x));
    if (next == end_token) break;
    out.push_back(next);
    token = next;
  }
  return out;
}

}  // namespace rnnmod
