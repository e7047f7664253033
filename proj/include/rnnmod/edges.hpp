// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Edge bookkeeping for pruned networks: which W/U/b entries survive given
// the per-node retention masks of every prunable layer.

#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rnnmod/model.hpp"

namespace rnnmod {

/// Node retention masks: [layer][copy][node]. Layers without masks have no
/// copies (every node retained). Rolled layers have one copy; unrolled
/// recurrent layers have one per timestep.
using NodeMasks = std::vector<std::vector<std::vector<std::uint8_t>>>;

/// Nearest trainable layer feeding layer `j`, and whether a Flatten or
/// RepeatVector sits in between. `layer` is empty when the rows of `j`
/// are fed by an Embedding (or raw input).
struct Feeder {
  std::optional<std::size_t> layer;
  bool flatten = false;
  bool repeat = false;
};

inline Feeder feeder_of(const ModelSpec& m, std::size_t j) {
  Feeder f;
  for (std::size_t k = j; k-- > 0;) {
    const LayerSpec& l = m.layers[k];
    if (l.kind == LayerKind::Flatten) f.flatten = true;
    if (l.kind == LayerKind::RepeatVector) f.repeat = true;
    if (l.kind == LayerKind::Embedding) return f;
    if (l.recurrent() || is_dense(l.kind)) {
      f.layer = k;
      return f;
    }
  }
  return f;
}

/// Retention masks of W, U and b of one weight copy, flattened row-major.
struct EdgeMask {
  std::vector<std::uint8_t> W;
  std::vector<std::uint8_t> U;
  std::vector<std::uint8_t> b;
};

namespace edges_detail {

inline bool node_on(const NodeMasks& masks, std::size_t layer, std::size_t copy, std::size_t node) {
  const auto& copies = masks[layer];
  if (copies.empty()) return true;
  return copies[std::min(copy, copies.size() - 1)][node] != 0;
}

}  // namespace edges_detail

/// Whether row `row` of layer `j`'s W (weight copy `copy`) is fed by a
/// retained source node.
inline bool source_retained(const ModelSpec& m, const NodeMasks& masks, std::size_t j,
                            std::size_t copy, std::size_t row) {
  const Feeder f = feeder_of(m, j);
  if (!f.layer) return true;
  const std::size_t p = *f.layer;
  const auto& pm = masks[p];
  if (pm.empty()) return true;
  const std::size_t hp = m.layers[p].units;
  const std::size_t node = row % hp;
  if (pm.size() == 1) return pm[0][node] != 0;
  if (f.flatten) return pm[std::min(row / hp, pm.size() - 1)][node] != 0;
  const LayerSpec& src = m.layers[p];
  if (src.return_sequences && !f.repeat) {
    // Step-aligned consumer keeps its own timestep; shared consumers see
    // the node if it survives at any step.
    if (masks[j].size() > 1) return pm[std::min(copy, pm.size() - 1)][node] != 0;
    for (const auto& step : pm)
      if (step[node]) return true;
    return false;
  }
  return pm.back()[node] != 0;
}

/// Edge retention of layer `j`, weight copy `copy`.
inline EdgeMask edge_mask(const ModelSpec& m, const NodeMasks& masks, std::size_t j,
                          std::size_t copy) {
  const LayerSpec& l = m.layers[j];
  const std::size_t h = l.units;
  const std::size_t cols = l.gates() * h;
  const std::size_t rows = l.params.W.rows();
  EdgeMask e;
  e.W.assign(rows * cols, 1);
  e.b.assign(cols, 1);
  if (l.recurrent()) e.U.assign(h * cols, 1);
  std::vector<std::uint8_t> src(rows);
  for (std::size_t r = 0; r < rows; ++r) src[r] = source_retained(m, masks, j, copy, r) ? 1 : 0;
  std::vector<std::uint8_t> self(h);
  for (std::size_t n = 0; n < h; ++n) self[n] = edges_detail::node_on(masks, j, copy, n) ? 1 : 0;
  for (std::size_t c = 0; c < cols; ++c) {
    const std::uint8_t dst = self[c % h];
    e.b[c] = dst;
    for (std::size_t r = 0; r < rows; ++r) e.W[r * cols + c] = dst && src[r];
    if (l.recurrent())
      for (std::size_t r = 0; r < h; ++r) e.U[r * cols + c] = dst && self[r];
  }
  return e;
}

/// Applies an edge mask to parent weights: retained entries keep the parent
/// value exactly, the rest become zero.
inline WeightSet apply_edge_mask(const WeightSet& parent, const EdgeMask& e) {
  WeightSet w = parent;
  for (std::size_t i = 0; i < w.W.size(); ++i)
    if (!e.W[i]) w.W.data()[i] = 0.0;
  for (std::size_t i = 0; i < w.U.size(); ++i)
    if (!e.U[i]) w.U.data()[i] = 0.0;
  for (std::size_t i = 0; i < w.b.size(); ++i)
    if (!e.b[i]) w.b[i] = 0.0;
  return w;
}

/// Reads the node masks recorded in a module's layers.
inline NodeMasks node_masks(const ModuleSpec& mod) {
  const ModelSpec& m = mod.base;
  NodeMasks masks(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& l = m.layers[i];
    if (!l.per_timestep.empty()) {
      for (const auto& w : l.per_timestep)
        masks[i].push_back(w.retained.empty() ? std::vector<std::uint8_t>(l.units, 1) : w.retained);
    } else if (!l.params.retained.empty()) {
      masks[i].push_back(l.params.retained);
    }
  }
  return masks;
}

}  // namespace rnnmod
