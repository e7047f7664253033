// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small backpropagation-through-time trainer and synthetic task generators
// used to produce desk-scale fixture models.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rnnmod/error.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/runtime.hpp"

namespace rnnmod {

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

enum class TaskKind { SeqClass, Tagging, OneToOne, OneToMany, ToyTranslate };

struct TaskParams {
  std::size_t samples = 1000;
  std::size_t timesteps = 8;   // input length (ToyTranslate: longest source)
  std::size_t classes = 3;     // classes, or target languages (ToyTranslate uses 3)
  std::size_t vocab = 12;      // content tokens, excluding padding and markers
  /// Tagging: labels shift with the timestep (label = (token + t) mod K).
  bool positional = true;
  /// Tagging: probability that the token at step t is drawn from class
  /// t mod K, so the label distribution depends on position.
  double skew = 0.6;
};

namespace train_detail {

inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t draw(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

inline std::vector<std::string> letter_names(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i)
    names.push_back(i < 26 ? std::string(1, static_cast<char>('A' + i)) : "C" + std::to_string(i));
  return names;
}

inline std::vector<std::string> word_vocab(std::size_t content) {
  std::vector<std::string> v{"<pad>"};
  for (std::size_t i = 1; i <= content; ++i) v.push_back("w" + std::to_string(i));
  return v;
}

}  // namespace train_detail

inline constexpr std::size_t kToyLanguages = 3;
inline const std::vector<std::string>& toy_languages() {
  static const std::vector<std::string> names{"copy", "reverse", "shift"};
  return names;
}

/// Target-vocabulary layout of ToyTranslate: pad, end, one start token per
/// language, then one lexicon per language. Content word k of language l has
/// target id 4 + l * vocab + k.
inline constexpr int kToyEnd = 1;
inline constexpr int kToyContentOffset = 1 + static_cast<int>(kToyLanguages);

inline int toy_target_id(std::size_t language, int word, std::size_t vocab) {
  return kToyContentOffset + static_cast<int>(language * vocab) + word;
}

/// The rewriting rule of a ToyTranslate language, in content ids 1..vocab.
inline std::vector<int> toy_translate(std::size_t language, const std::vector<int>& src, std::size_t vocab) {
  std::vector<int> out;
  for (int t : src)
    if (t != kPadId) out.push_back(t);
  switch (language) {
    case 0: break;
    case 1: std::reverse(out.begin(), out.end()); break;
    case 2:
      for (int& t : out) t = static_cast<int>((static_cast<std::size_t>(t) % vocab) + 1);
      break;
    default: throw IndexError("unknown toy language " + std::to_string(language));
  }
  return out;
}

/// Inverse of toy_translate.
inline std::vector<int> toy_untranslate(std::size_t language, const std::vector<int>& tgt, std::size_t vocab) {
  std::vector<int> out = tgt;
  switch (language) {
    case 0: break;
    case 1: std::reverse(out.begin(), out.end()); break;
    case 2:
      for (int& t : out) t = static_cast<int>(((static_cast<std::size_t>(t) + vocab - 2) % vocab) + 1);
      break;
    default: throw IndexError("unknown toy language " + std::to_string(language));
  }
  return out;
}

/// Deterministic synthetic datasets.
///  SeqClass:     exactly one marker token among fillers; the marker names the
///                class. Variable length, post-padded. (ManyToOne)
///  Tagging:      per-token labels (token mod K, shifted by the timestep when
///                `positional`). (ManyToMany)
///  OneToOne:     a single token; class = token mod K.
///  OneToMany:    a single token x; label at step t = (x + t) mod K.
///  ToyTranslate: source words rewritten into 3 target languages (copy,
///                reverse, shift), each with its own lexicon, followed by an
///                end token. (EncoderDecoder)
inline Dataset gen_task(TaskKind kind, const TaskParams& p, std::uint64_t seed) {
  using namespace train_detail;
  if (p.samples == 0 || p.timesteps == 0 || p.vocab == 0) throw UsageError("task sizes must be positive");
  std::mt19937_64 rng(seed);
  Dataset d;
  const std::size_t k = kind == TaskKind::ToyTranslate ? kToyLanguages : p.classes;
  if (k < 2) throw UsageError("tasks need at least two classes");
  d.class_names = letter_names(k);
  d.vocab = word_vocab(p.vocab);
  auto content = [&] { return static_cast<int>(1 + draw(rng, p.vocab)); };

  switch (kind) {
    case TaskKind::SeqClass: {
      d.label_mode = LabelMode::Single;
      d.timesteps_in = p.timesteps;
      // Fillers are w1..w_vocab; markers follow.
      for (std::size_t c = 0; c < k; ++c) d.vocab.push_back("m" + std::to_string(c));
      const std::size_t lo = std::max<std::size_t>(1, (p.timesteps + 1) / 2);
      for (std::size_t i = 0; i < p.samples; ++i) {
        Sample s;
        s.label = static_cast<int>(draw(rng, k));
        const std::size_t len = lo + draw(rng, p.timesteps - lo + 1);
        const std::size_t pos = draw(rng, len);
        s.tokens.assign(p.timesteps, kPadId);
        for (std::size_t t = 0; t < len; ++t)
          s.tokens[t] = t == pos ? static_cast<int>(p.vocab + 1 + static_cast<std::size_t>(s.label)) : content();
        d.samples.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::Tagging: {
      d.label_mode = LabelMode::PerTimestep;
      d.timesteps_in = d.timesteps_out = p.timesteps;
      for (std::size_t i = 0; i < p.samples; ++i) {
        Sample s;
        for (std::size_t t = 0; t < p.timesteps; ++t) {
          const std::size_t shift = p.positional ? t : 0;
          int tok = content();
          if (uniform01(rng) < p.skew) {
            // Favor a token whose label at this step is class t mod K.
            const std::size_t want = t % k;
            do tok = content();
            while ((static_cast<std::size_t>(tok) + shift) % k != want);
          }
          s.tokens.push_back(tok);
          s.labels.push_back(static_cast<int>((static_cast<std::size_t>(tok) + shift) % k));
        }
        d.samples.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::OneToOne: {
      d.label_mode = LabelMode::Single;
      d.timesteps_in = d.timesteps_out = 1;
      for (std::size_t i = 0; i < p.samples; ++i) {
        Sample s;
        const int tok = content();
        s.tokens = {tok};
        s.label = static_cast<int>(static_cast<std::size_t>(tok) % k);
        d.samples.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::OneToMany: {
      d.label_mode = LabelMode::PerTimestep;
      d.timesteps_in = 1;
      d.timesteps_out = p.timesteps;
      for (std::size_t i = 0; i < p.samples; ++i) {
        Sample s;
        const int tok = content();
        s.tokens = {tok};
        for (std::size_t t = 0; t < p.timesteps; ++t)
          s.labels.push_back(static_cast<int>((static_cast<std::size_t>(tok) + t) % k));
        d.samples.push_back(std::move(s));
      }
      break;
    }
    case TaskKind::ToyTranslate: {
      d.label_mode = LabelMode::TargetSequence;
      d.class_names = toy_languages();
      d.timesteps_in = p.timesteps;
      d.timesteps_out = p.timesteps + 1;
      d.target_vocab = {"<pad>", "<end>"};
      for (const auto& lang : toy_languages()) d.target_vocab.push_back("<s:" + lang + ">");
      for (const auto& lang : toy_languages())
        for (std::size_t i = 1; i <= p.vocab; ++i) d.target_vocab.push_back(lang + ":w" + std::to_string(i));
      for (std::size_t l = 0; l < kToyLanguages; ++l) d.start_tokens.push_back(2 + static_cast<int>(l));
      d.end_token = kToyEnd;
      const std::size_t lo = std::max<std::size_t>(1, (p.timesteps + 1) / 2);
      for (std::size_t i = 0; i < p.samples; ++i) {
        Sample s;
        s.label = static_cast<int>(draw(rng, kToyLanguages));
        const std::size_t len = lo + draw(rng, p.timesteps - lo + 1);
        s.tokens.assign(p.timesteps, kPadId);
        for (std::size_t t = 0; t < len; ++t) s.tokens[t] = content();
        const auto lang = static_cast<std::size_t>(s.label);
        for (int t : toy_translate(lang, s.tokens, p.vocab)) s.target.push_back(toy_target_id(lang, t, p.vocab));
        s.target.push_back(kToyEnd);
        s.target.resize(d.timesteps_out, kPadId);
        d.samples.push_back(std::move(s));
      }
      break;
    }
  }
  return d;
}

/// Splits off the last `fraction` of samples as a held-out set.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& d, double fraction) {
  Dataset a = d, b = d;
  const auto n_test = static_cast<std::size_t>(std::round(fraction * static_cast<double>(d.samples.size())));
  const std::size_t n_train = d.samples.size() - std::min(n_test, d.samples.size());
  a.samples.assign(d.samples.begin(), d.samples.begin() + static_cast<std::ptrdiff_t>(n_train));
  b.samples.assign(d.samples.begin() + static_cast<std::ptrdiff_t>(n_train), d.samples.end());
  return {a, b};
}

// ---------------------------------------------------------------------------
// Model skeletons
// ---------------------------------------------------------------------------

struct ArchConfig {
  LayerKind cell = LayerKind::LSTM;
  std::size_t units = 16;
  std::size_t embed_dim = 16;
  std::size_t depth = 1;                          // stacked recurrent layers (encoder side for ED)
  Activation cell_activation = Activation::Tanh;  // SimpleRNN only
  std::size_t dense_units = 0;                    // optional hidden Dense/TimeDistributedDense
  Activation dense_activation = Activation::Tanh;
  Activation head = Activation::Softmax;
};

namespace train_detail {

inline LayerSpec make_layer(LayerKind kind, std::size_t units, std::size_t in_dim, Activation act,
                            Role role = Role::Main) {
  LayerSpec l;
  l.kind = kind;
  l.units = units;
  l.activation = act;
  l.role = role;
  if (kind == LayerKind::Embedding) {
    l.params.W = Matrix(in_dim, units);
    l.mask_zero = true;
    return l;
  }
  const std::size_t gh = gate_count(kind) * units;
  l.params.W = Matrix(in_dim, gh);
  if (is_recurrent(kind)) l.params.U = Matrix(units, gh);
  l.params.b.assign(gh, 0.0);
  return l;
}

}  // namespace train_detail

/// Uniform [-scale, scale] weights and zero biases, deterministic per seed.
inline void initialize(ModelSpec& m, std::uint64_t seed, double scale = 0.08) {
  std::mt19937_64 rng(seed);
  auto fill = [&](Matrix& x) {
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = (2.0 * train_detail::uniform01(rng) - 1.0) * scale;
  };
  for (auto& l : m.layers) {
    if (!is_trainable(l.kind)) continue;
    fill(l.params.W);
    fill(l.params.U);
    std::fill(l.params.b.begin(), l.params.b.end(), 0.0);
  }
}

/// Initialized model for `data`; the I/O architecture follows from the label
/// mode and the timestep counts.
inline ModelSpec build_model(const ArchConfig& a, const Dataset& data, std::uint64_t seed) {
  using train_detail::make_layer;
  if (a.units == 0 || a.embed_dim == 0 || a.depth == 0) throw UsageError("layer sizes must be positive");
  ModelSpec m;
  m.timesteps_in = data.timesteps_in;
  m.timesteps_out = data.timesteps_out;
  m.class_names = data.class_names;
  m.num_classes = data.num_classes();
  m.vocab = data.vocab;
  const Activation cell_act = a.cell == LayerKind::SimpleRNN ? a.cell_activation : Activation::Tanh;
  auto add_stack = [&](std::size_t in_dim, bool last_sequences, Role role) {
    for (std::size_t d = 0; d < a.depth; ++d) {
      LayerSpec l = make_layer(a.cell, a.units, d == 0 ? in_dim : a.units, cell_act, role);
      l.return_sequences = d + 1 < a.depth || last_sequences;
      m.layers.push_back(std::move(l));
    }
  };
  auto add_head = [&](LayerKind dense, std::size_t width, Role role) {
    std::size_t in = a.units;
    if (a.dense_units) {
      m.layers.push_back(make_layer(dense, a.dense_units, in, a.dense_activation, role));
      in = a.dense_units;
    }
    m.layers.push_back(make_layer(dense, width, in, a.head, role));
  };
  const std::size_t vocab = data.vocab.size();

  switch (data.label_mode) {
    case LabelMode::Single:
      m.io_type = data.timesteps_in == 1 ? IoType::OneToOne : IoType::ManyToOne;
      m.timesteps_out = 1;
      m.layers.push_back(make_layer(LayerKind::Embedding, a.embed_dim, vocab, Activation::Linear));
      add_stack(a.embed_dim, false, Role::Main);
      add_head(LayerKind::Dense, m.num_classes, Role::Main);
      break;
    case LabelMode::PerTimestep:
      if (data.timesteps_in == 1 && data.timesteps_out > 1) {
        m.io_type = IoType::OneToMany;
        m.layers.push_back(make_layer(LayerKind::Embedding, a.embed_dim, vocab, Activation::Linear));
        LayerSpec flat;
        flat.kind = LayerKind::Flatten;
        m.layers.push_back(flat);
        LayerSpec rep;
        rep.kind = LayerKind::RepeatVector;
        rep.repeat_count = data.timesteps_out;
        m.layers.push_back(rep);
      } else {
        if (data.timesteps_in != data.timesteps_out)
          throw UsageError("per-timestep labels need equal input and output lengths");
        m.io_type = IoType::ManyToMany;
        m.layers.push_back(make_layer(LayerKind::Embedding, a.embed_dim, vocab, Activation::Linear));
      }
      add_stack(a.embed_dim, true, Role::Main);
      add_head(LayerKind::TimeDistributedDense, m.num_classes, Role::Main);
      break;
    case LabelMode::TargetSequence: {
      m.io_type = IoType::EncoderDecoder;
      m.target_vocab = data.target_vocab;
      m.start_tokens = data.start_tokens;
      m.end_token = data.end_token;
      LayerSpec enc_emb = make_layer(LayerKind::Embedding, a.embed_dim, vocab, Activation::Linear, Role::Encoder);
      m.layers.push_back(enc_emb);
      add_stack(a.embed_dim, false, Role::Encoder);
      LayerSpec dec_emb =
          make_layer(LayerKind::Embedding, a.embed_dim, data.target_vocab.size(), Activation::Linear, Role::Decoder);
      m.layers.push_back(dec_emb);
      LayerSpec dec = make_layer(a.cell, a.units, a.embed_dim, cell_act, Role::Decoder);
      dec.return_sequences = true;
      m.layers.push_back(dec);
      add_head(LayerKind::TimeDistributedDense, data.target_vocab.size(), Role::Decoder);
      break;
    }
  }
  if (m.io_type == IoType::OneToOne) m.layers.front().mask_zero = false;
  initialize(m, seed);
  validate_model(m);
  return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class Optimizer { SGD, Adam };
enum class Loss { CrossEntropy, BinaryCrossEntropy };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  Loss loss = Loss::CrossEntropy;
  double clip_norm = 5.0;
};

struct TrainLog {
  std::vector<double> epoch_loss;
};

/// The loss matching the model's output head.
inline Loss default_loss(const ModelSpec& m) {
  return m.layers.back().activation == Activation::Sigmoid ? Loss::BinaryCrossEntropy : Loss::CrossEntropy;
}

/// Gradients shaped like the model's trainable parameters (W, U, b per layer).
using Gradients = std::vector<WeightSet>;

namespace train_detail {

struct RecStep {
  Vector x, h_prev, c_prev, gates, h, c;
  bool valid = false;
};

struct LayerCache {
  Activations in;
  Activations out;
  std::vector<int> tokens;
  std::vector<RecStep> steps;
  bool seeded = false;
};

inline Gradients zero_gradients(const ModelSpec& m) {
  Gradients g(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const WeightSet& p = m.layers[i].params;
    g[i].W = Matrix(p.W.rows(), p.W.cols());
    g[i].U = Matrix(p.U.rows(), p.U.cols());
    g[i].b.assign(p.b.size(), 0.0);
  }
  return g;
}

template <typename Fn>
void for_each_param(WeightSet& a, WeightSet& b, Fn&& fn) {
  for (std::size_t i = 0; i < a.W.size(); ++i) fn(a.W.data()[i], b.W.data()[i]);
  for (std::size_t i = 0; i < a.U.size(); ++i) fn(a.U.data()[i], b.U.data()[i]);
  for (std::size_t i = 0; i < a.b.size(); ++i) fn(a.b[i], b.b[i]);
}

/// Training forward pass over layers [begin, end), keeping what the
/// backward pass needs. Mirrors the runtime exactly.
inline Activations forward_segment(const ModelSpec& m, std::size_t begin, std::size_t end,
                                   std::span<const int> tokens, const CellState* init,
                                   std::vector<LayerCache>& cache, CellState* final_state) {
  Activations cur;
  bool first_recurrent = true;
  for (std::size_t li = begin; li < end; ++li) {
    const LayerSpec& layer = m.layers[li];
    LayerCache& lc = cache[li];
    lc.in = cur;
    const bool output_layer = li + 1 == m.layers.size();
    switch (layer.kind) {
      case LayerKind::Embedding: {
        lc.tokens.assign(tokens.begin(), tokens.end());
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
        const bool lstm = layer.kind == LayerKind::LSTM;
        CellState state = (first_recurrent && init) ? *init : CellState::zeros(layer.units, lstm);
        lc.seeded = first_recurrent && init;
        first_recurrent = false;
        if (lstm && state.c.empty()) state.c.assign(layer.units, 0.0);
        lc.steps.assign(cur.steps.size(), RecStep{});
        Activations out;
        out.seq = true;
        out.steps.resize(cur.steps.size());
        out.valid = cur.valid;
        for (std::size_t t = 0; t < cur.steps.size(); ++t) {
          RecStep& st = lc.steps[t];
          st.valid = cur.valid[t] != 0;
          if (st.valid) {
            st.x = cur.steps[t];
            st.h_prev = state.h;
            st.c_prev = state.c;
            state = cell_step(layer, layer.params, st.x, state, &st.gates);
            st.h = state.h;
            st.c = state.c;
          }
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
      case LayerKind::TimeDistributedDense:
        for (auto& s : cur.steps) s = dense_op(layer, layer.params, s, output_layer);
        break;
      case LayerKind::RepeatVector: {
        Vector v = cur.steps.at(0);
        cur.steps.assign(layer.repeat_count, v);
        cur.valid.assign(layer.repeat_count, 1);
        cur.seq = true;
        break;
      }
      case LayerKind::Flatten: {
        Vector flat;
        for (const auto& s : cur.steps) flat.insert(flat.end(), s.begin(), s.end());
        cur.steps = {std::move(flat)};
        cur.valid = {1};
        cur.seq = false;
        break;
      }
    }
    lc.out = cur;
  }
  return cur;
}

/// One cell's backward step. `dh`, `dc` are gradients w.r.t. the state after
/// the step; on return they hold the gradients w.r.t. the previous state.
inline void cell_backward(const LayerSpec& layer, const RecStep& st, Vector& dh, Vector& dc, WeightSet& g,
                          Vector& dx) {
  const std::size_t n = layer.units;
  const WeightSet& w = layer.params;
  const std::size_t gh = layer.gates() * n;
  Vector ds(gh, 0.0);
  Vector dh_prev(n, 0.0), dc_prev;
  switch (layer.kind) {
    case LayerKind::LSTM: {
      dc_prev.assign(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double i = st.gates[k], f = st.gates[n + k], gg = st.gates[2 * n + k], o = st.gates[3 * n + k];
        const double tc = std::tanh(st.c[k]);
        const double dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
        ds[k] = dct * gg * i * (1.0 - i);
        ds[n + k] = dct * st.c_prev[k] * f * (1.0 - f);
        ds[2 * n + k] = dct * i * (1.0 - gg * gg);
        ds[3 * n + k] = dh[k] * tc * o * (1.0 - o);
        dc_prev[k] = dct * f;
      }
      add_mat_vec(w.U, ds, dh_prev);
      add_outer(st.h_prev, ds, g.U);
      break;
    }
    case LayerKind::GRU: {
      Vector drh(n, 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double z = st.gates[k], cand = st.gates[2 * n + k];
        ds[k] = dh[k] * (st.h_prev[k] - cand) * z * (1.0 - z);
        ds[2 * n + k] = dh[k] * (1.0 - z) * (1.0 - cand * cand);
        dh_prev[k] = dh[k] * z;
      }
      // Candidate block: input r * h_{t-1}.
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = w.U.row(i);
        double acc = 0.0;
        for (std::size_t j = 2 * n; j < gh; ++j) acc += row[j] * ds[j];
        drh[i] = acc;
      }
      for (std::size_t k = 0; k < n; ++k) {
        const double r = st.gates[n + k];
        ds[n + k] = drh[k] * st.h_prev[k] * r * (1.0 - r);
        dh_prev[k] += drh[k] * r;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = w.U.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < 2 * n; ++j) acc += row[j] * ds[j];
        dh_prev[i] += acc;
        const double hp = st.h_prev[i], rh = st.gates[n + i] * st.h_prev[i];
        for (std::size_t j = 0; j < 2 * n; ++j) g.U(i, j) += hp * ds[j];
        for (std::size_t j = 2 * n; j < gh; ++j) g.U(i, j) += rh * ds[j];
      }
      break;
    }
    case LayerKind::SimpleRNN: {
      for (std::size_t k = 0; k < n; ++k) ds[k] = dh[k] * activate_grad_from_output(layer.activation, st.h[k]);
      add_mat_vec(w.U, ds, dh_prev);
      add_outer(st.h_prev, ds, g.U);
      break;
    }
    default: throw ShapeError("cell_backward on a non-recurrent layer");
  }
  add_outer(st.x, ds, g.W);
  for (std::size_t j = 0; j < gh; ++j) g.b[j] += ds[j];
  dx.assign(w.W.rows(), 0.0);
  add_mat_vec(w.W, ds, dx);
  dh = std::move(dh_prev);
  if (layer.kind == LayerKind::LSTM) dc = std::move(dc_prev);
}

/// Backward pass over layers [begin, end). `d_out` is the gradient of the
/// segment output; `d_final` the gradient of the last recurrent layer's final
/// state. Writes the gradient of a seeded initial state to `d_init`.
inline void backward_segment(const ModelSpec& m, std::size_t begin, std::size_t end,
                             const std::vector<LayerCache>& cache, std::vector<Vector> d,
                             const CellState* d_final, CellState* d_init, Gradients& g) {
  std::size_t last_rec = end;
  for (std::size_t li = begin; li < end; ++li)
    if (m.layers[li].recurrent()) last_rec = li;
  for (std::size_t li = end; li-- > begin;) {
    const LayerSpec& layer = m.layers[li];
    const LayerCache& lc = cache[li];
    const bool output_layer = li + 1 == m.layers.size();
    switch (layer.kind) {
      case LayerKind::Embedding:
        for (std::size_t t = 0; t < lc.tokens.size() && t < d.size(); ++t) {
          auto row = g[li].W.row(static_cast<std::size_t>(lc.tokens[t]));
          for (std::size_t k = 0; k < row.size(); ++k) row[k] += d[t][k];
        }
        return;
      case LayerKind::Masking: break;
      case LayerKind::SimpleRNN:
      case LayerKind::LSTM:
      case LayerKind::GRU: {
        const std::size_t n = layer.units;
        const bool lstm = layer.kind == LayerKind::LSTM;
        Vector dh(n, 0.0), dc(lstm ? n : 0, 0.0);
        if (li == last_rec && d_final) {
          for (std::size_t k = 0; k < n; ++k) dh[k] += d_final->h[k];
          if (lstm && !d_final->c.empty())
            for (std::size_t k = 0; k < n; ++k) dc[k] += d_final->c[k];
        }
        if (!layer.return_sequences)
          for (std::size_t k = 0; k < n; ++k) dh[k] += d[0][k];
        const std::size_t steps = lc.steps.size();
        std::vector<Vector> dx(steps, Vector(lc.in.steps.empty() ? 0 : lc.in.steps[0].size(), 0.0));
        for (std::size_t t = steps; t-- > 0;) {
          if (layer.return_sequences)
            for (std::size_t k = 0; k < n; ++k) dh[k] += d[t][k];
          if (lc.steps[t].valid) cell_backward(layer, lc.steps[t], dh, dc, g[li], dx[t]);
        }
        if (lc.seeded && d_init) *d_init = CellState{dh, dc};
        d = std::move(dx);
        break;
      }
      case LayerKind::Dense:
      case LayerKind::TimeDistributedDense: {
        std::vector<Vector> dx(d.size());
        for (std::size_t t = 0; t < d.size(); ++t) {
          Vector ds = d[t];
          if (!output_layer)
            for (std::size_t k = 0; k < ds.size(); ++k)
              ds[k] *= activate_grad_from_output(layer.activation, lc.out.steps[t][k]);
          add_outer(lc.in.steps[t], ds, g[li].W);
          for (std::size_t k = 0; k < ds.size(); ++k) g[li].b[k] += ds[k];
          dx[t].assign(layer.params.W.rows(), 0.0);
          add_mat_vec(layer.params.W, ds, dx[t]);
        }
        d = std::move(dx);
        break;
      }
      case LayerKind::RepeatVector: {
        Vector sum(d.empty() ? 0 : d[0].size(), 0.0);
        for (const auto& v : d)
          for (std::size_t k = 0; k < v.size(); ++k) sum[k] += v[k];
        d = {std::move(sum)};
        break;
      }
      case LayerKind::Flatten: {
        const std::size_t steps = lc.in.steps.size();
        const std::size_t dim = steps ? lc.in.steps[0].size() : 0;
        std::vector<Vector> dx(steps);
        for (std::size_t t = 0; t < steps; ++t)
          dx[t].assign(d[0].begin() + static_cast<std::ptrdiff_t>(t * dim),
                       d[0].begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
        d = std::move(dx);
        break;
      }
    }
  }
}

/// Loss over the output rows and its gradient w.r.t. the logits. Each sample
/// contributes the mean over its labeled positions.
inline double head_loss(const Matrix& logits, const std::vector<int>& targets, Loss loss,
                        std::vector<Vector>* d_logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::size_t count = 0;
  for (std::size_t t = 0; t < rows && t < targets.size(); ++t) count += targets[t] >= 0;
  if (d_logits) d_logits->assign(rows, Vector(cols, 0.0));
  if (count == 0) return 0.0;
  const double scale = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t t = 0; t < rows && t < targets.size(); ++t) {
    const int y = targets[t];
    if (y < 0) continue;
    if (static_cast<std::size_t>(y) >= cols) throw ShapeError("label outside the output head");
    const auto z = logits.row(t);
    if (loss == Loss::CrossEntropy) {
      double mx = z[0];
      for (double v : z) mx = std::max(mx, v);
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - mx);
      const double lse = mx + std::log(sum);
      total += lse - z[static_cast<std::size_t>(y)];
      if (d_logits)
        for (std::size_t k = 0; k < cols; ++k)
          (*d_logits)[t][k] = scale * (std::exp(z[k] - lse) - (k == static_cast<std::size_t>(y) ? 1.0 : 0.0));
    } else {
      const double per = 1.0 / static_cast<double>(cols);
      for (std::size_t k = 0; k < cols; ++k) {
        const double target = k == static_cast<std::size_t>(y) ? 1.0 : 0.0;
        // log(1 + e^z) - target * z, computed stably.
        const double sp = z[k] > 0 ? z[k] + std::log1p(std::exp(-z[k])) : std::log1p(std::exp(z[k]));
        total += per * (sp - target * z[k]);
        if (d_logits) (*d_logits)[t][k] = scale * per * (sigmoid(z[k]) - target);
      }
    }
  }
  return total * scale;
}

inline std::vector<int> row_targets(const ModelSpec& m, const Sample& s) {
  switch (m.io_type) {
    case IoType::OneToOne:
    case IoType::ManyToOne: return {s.label};
    case IoType::OneToMany:
    case IoType::ManyToMany: return s.labels;
    case IoType::EncoderDecoder: {
      std::vector<int> t = s.target;
      for (int& v : t)
        if (v == kPadId) v = -1;
      return t;
    }
  }
  return {};
}

inline Matrix to_matrix(const std::vector<Vector>& rows) {
  Matrix out(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) out(r, c) = rows[r][c];
  return out;
}

}  // namespace train_detail

/// Loss of one sample; adds its parameter gradients to `grads` when given.
inline double sample_loss(const ModelSpec& m, const Sample& s, Loss loss, Gradients* grads = nullptr) {
  using namespace train_detail;
  std::vector<LayerCache> cache(m.layers.size());
  const std::vector<int> targets = row_targets(m, s);
  std::vector<Vector> d_logits;
  if (m.io_type == IoType::EncoderDecoder) {
    const std::size_t split = runtime_detail::first_decoder_layer(m);
    CellState enc;
    forward_segment(m, 0, split, s.tokens, nullptr, cache, &enc);
    const std::vector<int> dec_in = runtime_detail::decoder_inputs(m, s);
    const Activations out = forward_segment(m, split, m.layers.size(), dec_in, &enc, cache, nullptr);
    const double l = head_loss(to_matrix(out.steps), targets, loss, grads ? &d_logits : nullptr);
    if (grads) {
      CellState d_enc;
      backward_segment(m, split, m.layers.size(), cache, std::move(d_logits), nullptr, &d_enc, *grads);
      const Activations& enc_out = cache[split - 1].out;
      std::vector<Vector> zeros(enc_out.steps.size());
      for (std::size_t t = 0; t < zeros.size(); ++t) zeros[t].assign(enc_out.steps[t].size(), 0.0);
      if (!d_enc.h.empty()) backward_segment(m, 0, split, cache, std::move(zeros), &d_enc, nullptr, *grads);
    }
    return l;
  }
  const Activations out = forward_segment(m, 0, m.layers.size(), s.tokens, nullptr, cache, nullptr);
  const double l = head_loss(to_matrix(out.steps), targets, loss, grads ? &d_logits : nullptr);
  if (grads) backward_segment(m, 0, m.layers.size(), cache, std::move(d_logits), nullptr, nullptr, *grads);
  return l;
}

/// Mean loss over a dataset.
inline double dataset_loss(const ModelSpec& m, const Dataset& d, Loss loss) {
  double total = 0.0;
  for (const Sample& s : d.samples) total += sample_loss(m, s, loss);
  return d.samples.empty() ? 0.0 : total / static_cast<double>(d.samples.size());
}

/// Mini-batch training with BPTT. Deterministic per seed; a zero learning
/// rate leaves the weights unchanged.
inline ModelSpec train(ModelSpec model, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr) {
  using namespace train_detail;
  validate_model(model);
  if (cfg.learning_rate < 0.0) throw UsageError("learning rate must be non-negative");
  if (cfg.batch_size == 0) throw UsageError("batch size must be positive");
  if (data.samples.empty()) throw UsageError("training needs samples");
  const Activation head = model.layers.back().activation;
  if ((cfg.loss == Loss::CrossEntropy) != (head == Activation::Softmax))
    throw UsageError("cross-entropy needs a Softmax head and binary cross-entropy a Sigmoid head");

  std::mt19937_64 rng(cfg.seed);
  Gradients m1 = zero_gradients(model), m2 = zero_gradients(model);
  std::size_t step = 0;
  std::vector<std::size_t> order(data.samples.size());
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[draw(rng, i)]);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      Gradients g = zero_gradients(model);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) batch_loss += sample_loss(model, data.samples[order[i]], cfg.loss, &g);
      if (!std::isfinite(batch_loss)) throw DivergenceError("loss became non-finite in epoch " + std::to_string(e));
      epoch_loss += batch_loss;
      const double inv = 1.0 / static_cast<double>(stop - start);
      double norm2 = 0.0;
      for (std::size_t li = 0; li < g.size(); ++li)
        for_each_param(g[li], g[li], [&](double& v, double&) {
          v *= inv;
          norm2 += v * v;
        });
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw DivergenceError("gradient became non-finite in epoch " + std::to_string(e));
      const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
      if (cfg.learning_rate == 0.0) continue;
      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t li = 0; li < g.size(); ++li) {
        if (!is_trainable(model.layers[li].kind)) continue;
        WeightSet& p = model.layers[li].params;
        std::size_t idx = 0;
        for_each_param(p, g[li], [&](double& w, double& grad) {
          const double gv = grad * clip;
          if (cfg.optimizer == Optimizer::SGD) {
            w -= cfg.learning_rate * gv;
          } else {
            double* mv = nullptr;
            double* vv = nullptr;
            // Moments are stored in the same W, U, b layout.
            const std::size_t nw = p.W.size(), nu = p.U.size();
            if (idx < nw) {
              mv = &m1[li].W.data()[idx];
              vv = &m2[li].W.data()[idx];
            } else if (idx < nw + nu) {
              mv = &m1[li].U.data()[idx - nw];
              vv = &m2[li].U.data()[idx - nw];
            } else {
              mv = &m1[li].b[idx - nw - nu];
              vv = &m2[li].b[idx - nw - nu];
            }
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
            w -= cfg.learning_rate * (*mv / bc1) / (std::sqrt(*vv / bc2) + cfg.epsilon);
          }
          ++idx;
        });
      }
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!std::isfinite(epoch_loss)) throw DivergenceError("loss became non-finite in epoch " + std::to_string(e));
    if (log) log->epoch_loss.push_back(epoch_loss);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic BPTT gradients with central differences on `count`
/// randomly chosen parameters. Relative error |a - n| / max(|a| + |n|, floor).
/// The default floor sits at the resolution of double-precision differences
/// of an O(1) loss: gradients below it are compared absolutely.
inline GradCheckResult grad_check(const ModelSpec& model, const Sample& sample, double epsilon = 1e-4,
                                  std::size_t count = 64, std::uint64_t seed = 0, double floor = 1e-6) {
  using namespace train_detail;
  const Loss loss = default_loss(model);
  Gradients g = zero_gradients(model);
  sample_loss(model, sample, loss, &g);

  struct Ref {
    std::size_t layer, part, index;
  };
  std::vector<Ref> all;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const WeightSet& p = model.layers[li].params;
    for (std::size_t i = 0; i < p.W.size(); ++i) all.push_back({li, 0, i});
    for (std::size_t i = 0; i < p.U.size(); ++i) all.push_back({li, 1, i});
    for (std::size_t i = 0; i < p.b.size(); ++i) all.push_back({li, 2, i});
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = all.size(); i > 1; --i) std::swap(all[i - 1], all[draw(rng, i)]);
  all.resize(std::min(count, all.size()));

  auto ref = [](WeightSet& w, const Ref& r) -> double& {
    if (r.part == 0) return w.W.data()[r.index];
    if (r.part == 1) return w.U.data()[r.index];
    return w.b[r.index];
  };
  GradCheckResult res;
  ModelSpec probe = model;
  for (const Ref& r : all) {
    double& w = ref(probe.layers[r.layer].params, r);
    const double orig = w;
    w = orig + epsilon;
    const double lp = sample_loss(probe, sample, loss);
    w = orig - epsilon;
    const double lm = sample_loss(probe, sample, loss);
    w = orig;
    const double numeric = (lp - lm) / (2.0 * epsilon);
    const double analytic = ref(g[r.layer], r);
    const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
    res.max_rel_error = std::max(res.max_rel_error, rel);
    ++res.checked;
  }
  return res;
}

}  // namespace rnnmod
