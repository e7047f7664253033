// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decomposition of a trained recurrent model into one module per output
// class: concern identification (CI), tangling identification (TI) and
// concern modularization (output channeling).

#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "rnnmod/edges.hpp"
#include "rnnmod/error.hpp"
#include "rnnmod/format.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/runtime.hpp"

namespace rnnmod {

enum class ActivationKind { Logistic, ReLU };

struct DecompositionConfig {
  std::size_t sample_size = 100;   // M positives per concern
  double threshold = 0.20;         // removal budget as a fraction of candidate nodes
  Mode mode = Mode::Rolled;
  ActivationKind activation = ActivationKind::Logistic;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  double outlier_k = 1.5;          // Tukey fence multiplier
  std::size_t min_outlier_obs = 4; // fewer observations: no outlier removal
};

/// Logistic unless every prunable layer is ReLU-activated.
inline ActivationKind infer_activation_kind(const ModelSpec& m) {
  bool any = false;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (!is_prunable(m, i)) continue;
    any = true;
    if (m.layers[i].activation != Activation::ReLU || m.layers[i].kind == LayerKind::LSTM ||
        m.layers[i].kind == LayerKind::GRU)
      return ActivationKind::Logistic;
  }
  return any ? ActivationKind::ReLU : ActivationKind::Logistic;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct ConcernSample {
  std::vector<Sample> positives;
  std::vector<Sample> negatives;
};

namespace decomposer_detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed ^ (a * 0x9E3779B97F4A7C15ull) ^ (b * 0xC2B2AE3D27D4EB4Full);
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 29;
  return x;
}

/// Fisher-Yates with an explicitly specified index draw, so the order only
/// depends on the mt19937_64 stream.
inline void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

inline int label_at(const Dataset& d, const Sample& s, std::optional<std::size_t> ts) {
  if (d.label_mode == LabelMode::PerTimestep) {
    if (!ts) throw ModeError("per-timestep labels need an output timestep");
    return *ts < s.labels.size() ? s.labels[*ts] : -1;
  }
  return s.label;
}

}  // namespace decomposer_detail

/// Positive samples: up to M labeled `cls` (at `ts` for per-timestep labels,
/// regardless of other timesteps). Negatives: up to floor(M / (K-1)) from
/// every other class (at least one each).
inline ConcernSample sample_concern(const Dataset& d, std::size_t cls, std::optional<std::size_t> ts,
                                    std::size_t m, std::uint64_t seed) {
  using namespace decomposer_detail;
  const std::size_t k = d.num_classes();
  if (cls >= k) throw IndexError("class " + std::to_string(cls) + " does not exist");
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const int l = label_at(d, d.samples[i], ts);
    if (l >= 0 && static_cast<std::size_t>(l) < k) by_class[static_cast<std::size_t>(l)].push_back(i);
  }
  if (by_class[cls].empty())
    throw EmptyClassError("no sample labeled class " + std::to_string(cls) +
                          (ts ? " at timestep " + std::to_string(*ts) : std::string{}));
  std::mt19937_64 rng(seed);
  ConcernSample out;
  const std::size_t quota = std::max<std::size_t>(1, k > 1 ? m / (k - 1) : m);
  for (std::size_t c = 0; c < k; ++c) {
    auto idx = by_class[c];
    shuffle_indices(idx, rng);
    const std::size_t take = std::min(idx.size(), c == cls ? m : quota);
    auto& dst = c == cls ? out.positives : out.negatives;
    for (std::size_t i = 0; i < take; ++i) dst.push_back(d.samples[idx[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Observations and statistics
// ---------------------------------------------------------------------------

/// Per-node observation lists: values[layer][node] (empty for layers that
/// contribute no observations).
struct Observations {
  std::vector<std::vector<Vector>> values;

  std::size_t count(std::size_t layer, std::size_t node) const {
    return layer < values.size() && node < values[layer].size() ? values[layer][node].size() : 0;
  }

  /// Appends `other` as additional observations of the same nodes.
  void concat(const Observations& other) {
    if (values.size() < other.values.size()) values.resize(other.values.size());
    for (std::size_t l = 0; l < other.values.size(); ++l) {
      if (values[l].size() < other.values[l].size()) values[l].resize(other.values[l].size());
      for (std::size_t n = 0; n < other.values[l].size(); ++n)
        values[l][n].insert(values[l][n].end(), other.values[l][n].begin(), other.values[l][n].end());
    }
  }

  /// Drops every layer for which `keep(layer)` is false.
  template <typename Pred>
  void retain_layers(Pred keep) {
    for (std::size_t l = 0; l < values.size(); ++l)
      if (!keep(l)) values[l].clear();
  }
};

namespace decomposer_detail {

inline void collect(const ActivationTrace& trace, std::optional<std::size_t> only_ts, Observations& out) {
  for (const auto& sample : trace.samples) {
    if (out.values.size() < sample.size()) out.values.resize(sample.size());
    for (std::size_t l = 0; l < sample.size(); ++l) {
      const LayerTrace& lt = sample[l];
      for (std::size_t t = 0; t < lt.steps.size(); ++t) {
        if (!lt.valid[t] || (only_ts && t != *only_ts)) continue;
        const Vector& h = lt.steps[t];
        if (out.values[l].size() < h.size()) out.values[l].resize(h.size());
        for (std::size_t n = 0; n < h.size(); ++n) out.values[l][n].push_back(h[n]);
      }
    }
  }
}

}  // namespace decomposer_detail

/// Every timestep's value is a distinct observation: S samples x T steps
/// yield S*T observations per node.
inline Observations flatten_obs(const ActivationTrace& trace) {
  Observations o;
  decomposer_detail::collect(trace, std::nullopt, o);
  return o;
}

/// Only the observations recorded at timestep `ts`.
inline Observations obs_at(const ActivationTrace& trace, std::size_t ts) {
  Observations o;
  decomposer_detail::collect(trace, ts, o);
  return o;
}

struct NodeKey {
  std::size_t layer = 0;
  std::size_t node = 0;
  auto operator<=>(const NodeKey&) const = default;
};

/// Central tendencies of one node over positive and negative samples.
struct NodeStat {
  NodeKey key;
  double pos = 0.0;
  double neg = 0.0;
  double d() const { return pos - neg; }
};

using ConcernStats = std::vector<NodeStat>;

struct NodeRate {
  NodeKey key;
  double rate = 0.0;  // percent of observations with value > 0
};

/// Mean of absolute values after discarding points outside the Tukey-hinge
/// fences [Q1 - k*IQR, Q3 + k*IQR]. Fewer than `min_obs` observations are
/// averaged without trimming.
inline double central_tendency(std::span<const double> obs, double k = 1.5, std::size_t min_obs = 4) {
  if (obs.empty()) return 0.0;
  std::vector<double> a(obs.size());
  std::transform(obs.begin(), obs.end(), a.begin(), [](double v) { return std::abs(v); });
  const double mean_all = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  if (a.size() < min_obs) return mean_all;
  std::vector<double> s = a;
  std::sort(s.begin(), s.end());
  auto median = [](std::span<const double> v) {
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  // Tukey hinges: medians of the lower and upper halves, each including the
  // overall median when the count is odd.
  const std::size_t n = s.size();
  const std::size_t half = (n + 1) / 2;
  const double q1 = median(std::span<const double>(s.data(), half));
  const double q3 = median(std::span<const double>(s.data() + (n - half), half));
  const double iqr = q3 - q1;
  const double lo = q1 - k * iqr;
  const double hi = q3 + k * iqr;
  double sum = 0.0;
  std::size_t kept = 0;
  for (double v : a) {
    if (v < lo || v > hi) continue;
    sum += v;
    ++kept;
  }
  return kept ? sum / static_cast<double>(kept) : mean_all;
}

/// Per-node central tendencies for every node observed on both sides.
inline ConcernStats concern_stats(const Observations& pos, const Observations& neg,
                                  double k = 1.5, std::size_t min_obs = 4) {
  ConcernStats stats;
  const std::size_t layers = std::min(pos.values.size(), neg.values.size());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t nodes = std::min(pos.values[l].size(), neg.values[l].size());
    for (std::size_t n = 0; n < nodes; ++n) {
      if (pos.values[l][n].empty() || neg.values[l][n].empty()) continue;
      stats.push_back({{l, n},
                       central_tendency(pos.values[l][n], k, min_obs),
                       central_tendency(neg.values[l][n], k, min_obs)});
    }
  }
  return stats;
}

/// Percentage of observations where each node is active (value > 0).
inline std::vector<NodeRate> active_rate(const Observations& obs) {
  std::vector<NodeRate> rates;
  for (std::size_t l = 0; l < obs.values.size(); ++l) {
    for (std::size_t n = 0; n < obs.values[l].size(); ++n) {
      const Vector& v = obs.values[l][n];
      if (v.empty()) continue;
      const auto active = std::count_if(v.begin(), v.end(), [](double x) { return x > 0.0; });
      rates.push_back({{l, n}, 100.0 * static_cast<double>(active) / static_cast<double>(v.size())});
    }
  }
  return rates;
}

// ---------------------------------------------------------------------------
// Concerns
// ---------------------------------------------------------------------------

/// A concern under construction: node retention masks over a parent model
/// plus the weights they imply. In Unrolled mode every recurrent layer keeps
/// one mask and weight copy per timestep it runs.
class Concern {
 public:
  Concern(const ModelSpec& parent, Mode mode)
      : parent_(&parent), mode_(mode), shapes_(infer_shapes(parent)) {
    const std::size_t n = parent.layers.size();
    masks_.resize(n);
    weights_.resize(n);
    consumers_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (prunable(i)) {
        const std::size_t copies = (mode_ == Mode::Unrolled) ? layer_steps(shapes_, i) : 1;
        masks_[i].assign(copies, std::vector<std::uint8_t>(parent.layers[i].units, 1));
      }
      if (is_trainable(parent.layers[i].kind))
        weights_[i].assign(std::max<std::size_t>(1, masks_[i].size()), parent.layers[i].params);
      const Feeder f = feeder_of(parent, i);
      if (f.layer && is_trainable(parent.layers[i].kind)) consumers_[*f.layer].push_back(i);
    }
  }

  const ModelSpec& parent() const { return *parent_; }
  Mode mode() const { return mode_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }

  /// Recurrent layers always; hidden Dense layers only in Rolled mode.
  bool prunable(std::size_t layer) const {
    if (layer >= parent_->layers.size() || !is_prunable(*parent_, layer)) return false;
    return mode_ == Mode::Rolled || parent_->layers[layer].recurrent();
  }

  std::size_t copies(std::size_t layer) const { return masks_.at(layer).size(); }

  bool retained(std::size_t layer, std::size_t node, std::size_t copy = 0) const {
    check_index(layer, node, copy);
    return masks_[layer][copy][node] != 0;
  }

  /// Removes `node` from every gate of `layer` (only at timestep `ts` for
  /// unrolled copies; all copies when `ts` is empty): its incoming W and U
  /// columns, its biases, its outgoing U row and the rows it feeds downstream.
  void remove_node(std::size_t layer, std::size_t node, std::optional<std::size_t> ts = {}) {
    set_node(layer, node, ts, 0);
  }

  /// Restores a removed node: every edge whose endpoints are both retained
  /// again carries the parent value.
  void restore_node(std::size_t layer, std::size_t node, std::optional<std::size_t> ts = {}) {
    set_node(layer, node, ts, 1);
  }

  /// Replaces the timestep-`ts` slot of every unrolled layer with the
  /// (single-copy) masks identified by `step`.
  void merge(const Concern& step, std::size_t ts) {
    if (step.parent_ != parent_ || step.mode_ != Mode::Rolled)
      throw StateError("merge requires a rolled concern over the same parent");
    for (std::size_t i = 0; i < masks_.size(); ++i) {
      if (masks_[i].empty() || ts >= masks_[i].size() || step.masks_[i].empty()) continue;
      masks_[i][ts] = step.masks_[i][0];
      refresh(i);
    }
  }

  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& l : masks_)
      for (const auto& c : l) n += c.size();
    return n;
  }

  std::size_t removed_count() const {
    std::size_t n = 0;
    for (const auto& l : masks_)
      for (const auto& c : l) n += static_cast<std::size_t>(std::count(c.begin(), c.end(), 0));
    return n;
  }

  double removed_fraction() const {
    const std::size_t total = node_count();
    return total ? static_cast<double>(removed_count()) / static_cast<double>(total) : 0.0;
  }

  const WeightSet& weights(std::size_t layer, std::size_t copy = 0) const {
    return weights_.at(layer).at(copy);
  }

  const NodeMasks& masks() const { return masks_; }

  /// The module-shaped model: pruned weights with retention masks; unrolled
  /// recurrent layers carry their per-timestep copies.
  ModelSpec materialize() const {
    ModelSpec m = *parent_;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      LayerSpec& l = m.layers[i];
      if (!is_trainable(l.kind) || l.kind == LayerKind::Embedding) continue;
      if (masks_[i].size() > 1 || (mode_ == Mode::Unrolled && l.recurrent())) {
        l.per_timestep = weights_[i];
        for (std::size_t t = 0; t < l.per_timestep.size(); ++t) l.per_timestep[t].retained = masks_[i][t];
      } else {
        l.params = weights_[i][0];
        if (!masks_[i].empty()) l.params.retained = masks_[i][0];
      }
    }
    return m;
  }

 private:
  void check_index(std::size_t layer, std::size_t node, std::size_t copy) const {
    if (layer >= masks_.size() || masks_[layer].empty())
      throw IndexError("layer " + std::to_string(layer) + " is not prunable");
    if (copy >= masks_[layer].size())
      throw IndexError("timestep " + std::to_string(copy) + " out of range");
    if (node >= masks_[layer][copy].size())
      throw IndexError("node " + std::to_string(node) + " out of range");
  }

  void set_node(std::size_t layer, std::size_t node, std::optional<std::size_t> ts, std::uint8_t v) {
    check_index(layer, node, ts.value_or(0));
    if (ts && masks_[layer].size() == 1 && *ts != 0)
      throw IndexError("rolled layers have a single timestep copy");
    if (ts) {
      masks_[layer][*ts][node] = v;
    } else {
      for (auto& c : masks_[layer]) c[node] = v;
    }
    refresh(layer);
  }

  void refresh(std::size_t layer) {
    rebuild(layer);
    for (std::size_t c : consumers_[layer]) rebuild(c);
  }

  void rebuild(std::size_t layer) {
    const LayerSpec& l = parent_->layers[layer];
    if (l.kind == LayerKind::Embedding) return;
    for (std::size_t c = 0; c < weights_[layer].size(); ++c)
      weights_[layer][c] = apply_edge_mask(l.params, edge_mask(*parent_, masks_, layer, c));
  }

  const ModelSpec* parent_;
  Mode mode_;
  std::vector<LayerShape> shapes_;
  NodeMasks masks_;
  std::vector<std::vector<WeightSet>> weights_;
  std::vector<std::vector<std::size_t>> consumers_;
};

// ---------------------------------------------------------------------------
// Concern identification / tangling identification
// ---------------------------------------------------------------------------

namespace decomposer_detail {

inline std::size_t removed_among(const Concern& c, std::span<const NodeKey> keys, std::optional<std::size_t> ts) {
  std::size_t n = 0;
  for (const NodeKey& k : keys)
    if (!c.retained(k.layer, k.node, ts.value_or(0))) ++n;
  return n;
}

inline bool budget_spent(std::size_t removed, std::size_t candidates, double threshold) {
  return candidates == 0 ||
         static_cast<double>(removed) / static_cast<double>(candidates) >= threshold;
}

}  // namespace decomposer_detail

/// Logistic CI: nodes sorted ascending by d = ct_pos - ct_neg (ties by layer,
/// node) are removed from every gate while d < 0, stopping once the removed
/// fraction of candidate nodes reaches `threshold`.
inline void ci_logistic(const ConcernStats& stats, Concern& concern, double threshold,
                        std::optional<std::size_t> ts = {}) {
  std::vector<NodeStat> order;
  for (const NodeStat& s : stats)
    if (concern.prunable(s.key.layer)) order.push_back(s);
  std::sort(order.begin(), order.end(), [](const NodeStat& a, const NodeStat& b) { return a.key < b.key; });
  std::stable_sort(order.begin(), order.end(), [](const NodeStat& a, const NodeStat& b) { return a.d() < b.d(); });
  std::vector<NodeKey> keys;
  for (const auto& s : order) keys.push_back(s.key);
  std::size_t removed = decomposer_detail::removed_among(concern, keys, ts);
  for (const NodeStat& s : order) {
    if (s.d() >= 0.0) break;
    if (decomposer_detail::budget_spent(removed, keys.size(), threshold)) break;
    if (!concern.retained(s.key.layer, s.key.node, ts.value_or(0))) continue;
    concern.remove_node(s.key.layer, s.key.node, ts);
    ++removed;
  }
}

/// ReLU CI: removes nodes never active on positive samples, in (layer, node)
/// order, within the removal budget.
inline void ci_relu(const std::vector<NodeRate>& rates_pos, Concern& concern, double threshold,
                    std::optional<std::size_t> ts = {}) {
  std::vector<NodeRate> order;
  for (const NodeRate& r : rates_pos)
    if (concern.prunable(r.key.layer)) order.push_back(r);
  std::sort(order.begin(), order.end(), [](const NodeRate& a, const NodeRate& b) { return a.key < b.key; });
  std::vector<NodeKey> keys;
  for (const auto& r : order) keys.push_back(r.key);
  std::size_t removed = decomposer_detail::removed_among(concern, keys, ts);
  for (const NodeRate& r : order) {
    if (r.rate != 0.0) continue;
    if (decomposer_detail::budget_spent(removed, keys.size(), threshold)) break;
    if (!concern.retained(r.key.layer, r.key.node, ts.value_or(0))) continue;
    concern.remove_node(r.key.layer, r.key.node, ts);
    ++removed;
  }
}

/// ReLU TI: restores every removed node that is active on some negative sample.
inline void ti_relu(const std::vector<NodeRate>& rates_neg, Concern& concern,
                    std::optional<std::size_t> ts = {}) {
  for (const NodeRate& r : rates_neg) {
    if (!concern.prunable(r.key.layer) || r.rate <= 0.0) continue;
    if (!concern.retained(r.key.layer, r.key.node, ts.value_or(0)))
      concern.restore_node(r.key.layer, r.key.node, ts);
  }
}

inline void update_concern(Concern& concern, const Observations& pos, const Observations& neg,
                           const DecompositionConfig& cfg, std::optional<std::size_t> ts = {}) {
  if (cfg.activation == ActivationKind::Logistic) {
    ci_logistic(concern_stats(pos, neg, cfg.outlier_k, cfg.min_outlier_obs), concern, cfg.threshold, ts);
  } else {
    ci_relu(active_rate(pos), concern, cfg.threshold, ts);
    ti_relu(active_rate(neg), concern, ts);
  }
}

// ---------------------------------------------------------------------------
// Concern modularization
// ---------------------------------------------------------------------------

/// Channels the N-way output head into (dominant, non-dominant) columns: D is
/// the dominant class column, ND the mean of all other columns (weights and
/// bias alike). Many-output heads are shared across timesteps, so the same
/// channeled head serves every step.
inline ModuleSpec channel(ModuleSpec mod) {
  if (mod.channeled) throw StateError("module is already channeled");
  ModelSpec& m = mod.base;
  if (m.io_type == IoType::EncoderDecoder) throw StateError("encoder-decoder modules keep their full head");
  LayerSpec& head = m.layers.back();
  if (!is_dense(head.kind)) throw ShapeError("output head must be Dense or TimeDistributedDense");
  const std::size_t n = head.units;
  if (n < 2) throw ShapeError("channeling needs at least two output classes");
  const std::size_t c = mod.dominant_class;
  if (c >= n) throw IndexError("dominant class outside the output head");
  const Matrix& W = head.params.W;
  Matrix cw(W.rows(), 2);
  for (std::size_t r = 0; r < W.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != c) sum += W(r, j);
    cw(r, 0) = W(r, c);
    cw(r, 1) = sum / static_cast<double>(n - 1);
  }
  double bsum = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    if (j != c) bsum += head.params.b[j];
  head.params.b = {head.params.b[c], bsum / static_cast<double>(n - 1)};
  head.params.W = std::move(cw);
  head.units = 2;
  mod.channeled = true;
  return mod;
}

/// Unchanneled module from a finished concern.
inline ModuleSpec to_module(const Concern& concern, std::size_t dominant) {
  ModuleSpec mod;
  mod.base = concern.materialize();
  mod.mode = concern.mode();
  mod.dominant_class = dominant;
  mod.channeled = false;
  mod.removal_fraction = concern.removed_fraction();
  mod.parent_model_id = model_id(concern.parent());
  return mod;
}

// ---------------------------------------------------------------------------
// Decomposition drivers
// ---------------------------------------------------------------------------

namespace decomposer_detail {

inline std::size_t max_steps(const Concern& c) {
  std::size_t t = 1;
  for (std::size_t i = 0; i < c.parent().layers.size(); ++i)
    if (c.parent().layers[i].recurrent()) t = std::max(t, layer_steps(c.shapes(), i));
  return t;
}

/// Observations restricted to recurrent layers that run timestep `ts`.
inline Observations recurrent_only(Observations o, const Concern& c) {
  o.retain_layers([&](std::size_t l) {
    return l < c.parent().layers.size() && c.parent().layers[l].recurrent();
  });
  return o;
}

template <typename Fn>
std::vector<ModuleSpec> for_each_class(std::size_t classes, std::size_t jobs, Fn&& fn) {
  std::vector<ModuleSpec> modules(classes);
  jobs = std::max<std::size_t>(1, jobs);
  for (std::size_t start = 0; start < classes; start += jobs) {
    const std::size_t stop = std::min(classes, start + jobs);
    if (jobs == 1) {
      modules[start] = fn(start);
      continue;
    }
    std::vector<std::future<ModuleSpec>> futures;
    for (std::size_t c = start; c < stop; ++c) futures.push_back(std::async(std::launch::async, fn, c));
    for (std::size_t c = start; c < stop; ++c) modules[c] = futures[c - start].get();
  }
  return modules;
}

inline void check_dataset_matches(const ModelSpec& m, const Dataset& d, LabelMode want) {
  if (d.label_mode != want)
    throw ModeError("dataset label mode " + std::string(to_string(d.label_mode)) + " does not fit " +
                    std::string(to_string(m.io_type)));
  if (d.num_classes() != m.num_classes) throw ShapeError("dataset and model disagree on the class count");
}

}  // namespace decomposer_detail

/// Decomposes a one-output (OneToOne / ManyToOne) model into one channeled
/// module per class.
inline std::vector<ModuleSpec> decompose_one(const ModelSpec& model, const Dataset& data,
                                             const DecompositionConfig& cfg) {
  using namespace decomposer_detail;
  if (model.io_type != IoType::OneToOne && model.io_type != IoType::ManyToOne)
    throw ModeError("decompose_one handles OneToOne and ManyToOne models");
  if (model.io_type == IoType::OneToOne && cfg.mode == Mode::Unrolled)
    throw ModeError("unrolled decomposition needs an input loop (not OneToOne)");
  check_dataset_matches(model, data, LabelMode::Single);

  return for_each_class(model.num_classes, cfg.jobs, [&](std::size_t cls) {
    const ConcernSample s = sample_concern(data, cls, std::nullopt, cfg.sample_size, mix_seed(cfg.seed, cls, 0));
    Concern concern(model, cfg.mode);
    const ActivationTrace pos = monitor(s.positives, model);
    const ActivationTrace neg = monitor(s.negatives, model);
    if (cfg.mode == Mode::Rolled) {
      update_concern(concern, flatten_obs(pos), flatten_obs(neg), cfg);
    } else {
      for (std::size_t ts = 0; ts < max_steps(concern); ++ts) {
        Concern step(model, Mode::Rolled);
        update_concern(step, recurrent_only(obs_at(pos, ts), step), recurrent_only(obs_at(neg, ts), step), cfg);
        concern.merge(step, ts);
      }
    }
    return channel(to_module(concern, cls));
  });
}

/// Decomposes a many-output (OneToMany / ManyToMany / EncoderDecoder) model,
/// monitoring one output timestep at a time. Encoder-decoder modules are not
/// channeled; each keeps the full target-vocabulary head.
inline std::vector<ModuleSpec> decompose_many(const ModelSpec& model, const Dataset& data,
                                              const DecompositionConfig& cfg) {
  using namespace decomposer_detail;
  const bool ed = model.io_type == IoType::EncoderDecoder;
  if (!io_has_many_outputs(model.io_type))
    throw ModeError("decompose_many handles OneToMany, ManyToMany and EncoderDecoder models");
  check_dataset_matches(model, data, ed ? LabelMode::TargetSequence : LabelMode::PerTimestep);
  if (ed) {
    if (data.target_vocab.size() != model.target_vocab.size())
      throw ShapeError("dataset and model disagree on the target vocabulary");
  }

  return for_each_class(model.num_classes, cfg.jobs, [&](std::size_t cls) {
    Concern concern(model, cfg.mode);
    Observations flat_pos, flat_neg;
    bool any = false;
    // Languages label whole samples, so encoder-decoder sampling does not
    // depend on the timestep and is monitored once.
    std::optional<ActivationTrace> ed_pos, ed_neg;
    if (ed) {
      const ConcernSample s = sample_concern(data, cls, std::nullopt, cfg.sample_size, mix_seed(cfg.seed, cls, 0));
      ed_pos = monitor(s.positives, model);
      ed_neg = monitor(s.negatives, model);
    }
    for (std::size_t ts = 0; ts < model.timesteps_out; ++ts) {
      ActivationTrace pos, neg;
      if (ed) {
        pos = *ed_pos;
        neg = *ed_neg;
      } else {
        ConcernSample s;
        try {
          s = sample_concern(data, cls, ts, cfg.sample_size, mix_seed(cfg.seed, cls, ts + 1));
        } catch (const EmptyClassError&) {
          continue;
        }
        pos = monitor(s.positives, model);
        neg = monitor(s.negatives, model);
      }
      any = true;
      const Observations p_ts = obs_at(pos, ts);
      const Observations n_ts = obs_at(neg, ts);
      if (cfg.mode == Mode::Rolled) {
        flat_pos.concat(p_ts);
        flat_neg.concat(n_ts);
      } else {
        Concern step(model, Mode::Rolled);
        update_concern(step, recurrent_only(p_ts, step), recurrent_only(n_ts, step), cfg);
        concern.merge(step, ts);
      }
    }
    if (!any) throw EmptyClassError("class " + std::to_string(cls) + " never occurs");
    if (cfg.mode == Mode::Rolled) update_concern(concern, flat_pos, flat_neg, cfg);
    ModuleSpec mod = to_module(concern, cls);
    return ed ? mod : channel(std::move(mod));
  });
}

/// Dispatches on the model's I/O architecture.
inline std::vector<ModuleSpec> decompose(const ModelSpec& model, const Dataset& data,
                                         const DecompositionConfig& cfg) {
  return io_has_many_outputs(model.io_type) ? decompose_many(model, data, cfg)
                                            : decompose_one(model, data, cfg);
}

}  // namespace rnnmod
