// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Voting composition of modules, plus reuse and replacement of slots.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rnnmod/error.hpp"
#include "rnnmod/format.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/runtime.hpp"

namespace rnnmod {

/// Modules compose when they accept the same kind of input.
enum class InputFamily { One, Many, Translation };

inline InputFamily input_family(IoType io) {
  switch (io) {
    case IoType::OneToOne:
    case IoType::OneToMany: return InputFamily::One;
    case IoType::ManyToOne:
    case IoType::ManyToMany: return InputFamily::Many;
    case IoType::EncoderDecoder: return InputFamily::Translation;
  }
  return InputFamily::Many;
}

inline std::string_view to_string(InputFamily f) {
  switch (f) {
    case InputFamily::One: return "one-input";
    case InputFamily::Many: return "many-input";
    case InputFamily::Translation: return "translation";
  }
  return "?";
}

/// Name of the class (or target language) a module recognizes.
inline std::string slot_name(const ModuleSpec& m) {
  const auto& names = m.base.class_names;
  return m.dominant_class < names.size() ? names[m.dominant_class] : std::to_string(m.dominant_class);
}

/// A composition of modules. Slot k (composed class k) is served by
/// `modules[k]` and named `names[k]`. Inputs are expressed in `vocab` when
/// it is set; `token_maps[k]` translates them into module k's own ids.
struct ModuleSet {
  std::vector<ModuleSpec> modules;
  std::vector<std::string> names;
  std::vector<std::vector<int>> token_maps;
  std::vector<std::string> vocab;
  InputFamily family = InputFamily::Many;

  std::size_t size() const { return modules.size(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return k;
    return std::nullopt;
  }
};

namespace composer_detail {

/// Shared-id -> module-id map. Tokens missing from the module vocabulary fall
/// back to its "<unk>" entry if present.
inline std::vector<int> token_map(const std::vector<std::string>& shared, const std::vector<std::string>& own,
                                  const std::string& who) {
  if (shared.empty() || shared == own) return {};
  if (own.empty()) throw VocabMismatch(who + " records no vocabulary");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < own.size(); ++i) index.emplace(own[i], static_cast<int>(i));
  const auto unk = index.find("<unk>");
  std::vector<int> map(shared.size());
  for (std::size_t i = 0; i < shared.size(); ++i) {
    if (i == static_cast<std::size_t>(kPadId)) {
      map[i] = kPadId;
      continue;
    }
    const auto it = index.find(shared[i]);
    if (it != index.end()) {
      map[i] = it->second;
    } else if (unk != index.end()) {
      map[i] = unk->second;
    } else {
      throw VocabMismatch("token '" + shared[i] + "' has no id in " + who);
    }
  }
  return map;
}

inline std::vector<int> token_map(const std::vector<std::string>& shared, const ModuleSpec& m) {
  return token_map(shared, m.base.vocab, "module '" + slot_name(m) + "'");
}

inline Sample remap(const std::vector<int>& map, const Sample& s) {
  if (map.empty()) return s;
  Sample out = s;
  for (int& t : out.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= map.size())
      throw VocabMismatch("token id " + std::to_string(t) + " outside the shared vocabulary");
    t = map[static_cast<std::size_t>(t)];
  }
  return out;
}

inline void check_compatible(const ModuleSet& set, const ModuleSpec& m) {
  if (input_family(m.base.io_type) != set.family)
    throw IncompatibleInput("module '" + slot_name(m) + "' (" + std::string(to_string(m.base.io_type)) +
                            ") does not accept " + std::string(to_string(set.family)) + " inputs");
  if (set.family == InputFamily::Translation && !set.modules.empty() &&
      m.base.target_vocab != set.modules.front().base.target_vocab)
    throw VocabMismatch("translation modules disagree on the target vocabulary");
  if (set.vocab.empty() && !set.modules.empty()) {
    const auto& a = set.modules.front().base.vocab;
    const auto& b = m.base.vocab;
    if (!a.empty() && !b.empty() && a != b)
      throw VocabMismatch("modules use different vocabularies; supply a shared vocabulary");
  }
}

inline Sample mapped(const ModuleSet& set, std::size_t k, const Sample& s) {
  return remap(set.token_maps[k], s);
}

/// Margin of the dominant class over the rest at output row `t`.
inline double margin(const ModuleSpec& m, const Output& out, std::size_t t) {
  const auto row = out.logits.row(t);
  if (m.channeled) return row[0] - row[1];
  const std::size_t c = m.dominant_class;
  if (c >= row.size()) throw ShapeError("dominant class outside the module head");
  double rest = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j)
    if (j != c) rest += row[j];
  return row.size() > 1 ? row[c] - rest / static_cast<double>(row.size() - 1) : row[c];
}

inline double dominant_logit(const ModuleSpec& m, const Output& out, std::size_t t) {
  return out.logits(t, m.channeled ? 0 : m.dominant_class);
}

inline std::vector<Output> run_all(const ModuleSet& set, const Sample& s) {
  if (set.modules.empty()) throw ShapeError("empty module set");
  std::vector<Output> outs;
  outs.reserve(set.size());
  for (std::size_t k = 0; k < set.size(); ++k) outs.push_back(forward_module(set.modules[k], mapped(set, k, s)));
  return outs;
}

}  // namespace composer_detail

/// Builds a set treating each module's dominant class as one composed class.
/// Modules must share an input family; with a shared vocabulary every token
/// must be expressible in each module's vocabulary.
inline ModuleSet reuse_compose(std::vector<ModuleSpec> modules, std::vector<std::string> shared_vocab = {}) {
  ModuleSet set;
  set.vocab = std::move(shared_vocab);
  if (modules.empty()) throw ShapeError("no modules to compose");
  set.family = input_family(modules.front().base.io_type);
  for (ModuleSpec& m : modules) {
    composer_detail::check_compatible(set, m);
    std::string name = slot_name(m);
    if (set.find(name)) throw ShapeError("two modules claim the slot '" + name + "'");
    set.token_maps.push_back(composer_detail::token_map(set.vocab, m));
    set.names.push_back(std::move(name));
    set.modules.push_back(std::move(m));
  }
  return set;
}

/// Returns a copy of `set` with slot `name` served by `replacement`.
inline ModuleSet replace_module(const ModuleSet& set, const std::string& name, ModuleSpec replacement) {
  const auto k = set.find(name);
  if (!k) throw UnknownSlot("no slot named '" + name + "'");
  ModuleSet out = set;
  if (input_family(replacement.base.io_type) != set.family)
    throw IncompatibleInput("replacement (" + std::string(to_string(replacement.base.io_type)) +
                            ") does not accept " + std::string(to_string(set.family)) + " inputs");
  if (set.family == InputFamily::Translation &&
      replacement.base.target_vocab != set.modules[*k].base.target_vocab)
    throw VocabMismatch("replacement uses a different target vocabulary");
  if (set.vocab.empty()) {
    const auto& a = set.modules[*k].base.vocab;
    const auto& b = replacement.base.vocab;
    if (!a.empty() && !b.empty() && a != b)
      throw VocabMismatch("replacement uses a different vocabulary; compose with a shared vocabulary");
  }
  out.token_maps[*k] = composer_detail::token_map(set.vocab, replacement);
  out.modules[*k] = std::move(replacement);
  return out;
}

/// One prediction for one-output sets: the slot with the largest dominant
/// margin (lowest slot on ties).
inline std::size_t predict_one(const ModuleSet& set, const Sample& sample) {
  if (set.family == InputFamily::Translation) throw ShapeError("translation sets do not classify");
  const auto outs = composer_detail::run_all(set, sample);
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t k = 0; k < outs.size(); ++k) {
    if (outs[k].logits.rows() != 1)
      throw ShapeError("module '" + set.names[k] + "' has many outputs; use predict_many");
    const double s = composer_detail::margin(set.modules[k], outs[k], 0);
    if (k == 0 || s > best_score) {
      best = k;
      best_score = s;
    }
  }
  return best;
}

/// The vote applied independently at each output timestep. One-output
/// modules contribute the same score at every step.
inline std::vector<std::size_t> predict_many(const ModuleSet& set, const Sample& sample) {
  if (set.family == InputFamily::Translation) throw ShapeError("translation sets do not classify");
  const auto outs = composer_detail::run_all(set, sample);
  std::size_t steps = 1;
  for (const auto& o : outs) steps = std::max(steps, o.logits.rows());
  std::vector<std::size_t> pred(steps, 0);
  for (std::size_t t = 0; t < steps; ++t) {
    double best_score = 0.0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const std::size_t row = std::min(t, outs[k].logits.rows() - 1);
      const double s = composer_detail::margin(set.modules[k], outs[k], row);
      if (k == 0 || s > best_score) {
        pred[t] = k;
        best_score = s;
      }
    }
  }
  return pred;
}

/// Multi-label decision per output timestep: slot k is emitted when the
/// sigmoid of its dominant logit is at least 0.5.
inline std::vector<std::vector<std::size_t>> predict_multilabel(const ModuleSet& set, const Sample& sample) {
  if (set.family == InputFamily::Translation) throw ShapeError("translation sets do not classify");
  const auto outs = composer_detail::run_all(set, sample);
  std::size_t steps = 1;
  for (const auto& o : outs) steps = std::max(steps, o.logits.rows());
  std::vector<std::vector<std::size_t>> labels(steps);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const std::size_t row = std::min(t, outs[k].logits.rows() - 1);
      if (sigmoid(composer_detail::dominant_logit(set.modules[k], outs[k], row)) >= 0.5) labels[t].push_back(k);
    }
  return labels;
}

/// Greedy translation into `language` by the module serving that slot.
/// `max_len` 0 means the module's output length.
inline std::vector<int> predict_translation(const ModuleSet& set, const Sample& sample,
                                            const std::string& language, std::size_t max_len = 0) {
  if (set.family != InputFamily::Translation) throw ShapeError("not a translation set");
  const auto k = set.find(language);
  if (!k) throw UnknownLanguage("no module translates into '" + language + "'");
  const ModuleSpec& m = set.modules[*k];
  const std::size_t lang = m.dominant_class;
  if (lang >= m.base.start_tokens.size()) throw ShapeError("module has no start token for its language");
  const Sample src = composer_detail::mapped(set, *k, sample);
  return decode_greedy(m.base, src.tokens, m.base.start_tokens[lang], m.base.end_token,
                       max_len ? max_len : m.base.timesteps_out);
}

}  // namespace rnnmod
