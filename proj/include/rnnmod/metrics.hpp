// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Accuracy, corpus BLEU, Jaccard index of retained edges, and evaluation
// reports comparing a monolithic model with a composed module set.

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rnnmod/composer.hpp"
#include "rnnmod/edges.hpp"
#include "rnnmod/error.hpp"
#include "rnnmod/format.hpp"
#include "rnnmod/model.hpp"
#include "rnnmod/runtime.hpp"

namespace rnnmod {

/// Exact-match fraction. Labels below zero are ignored.
template <typename P, typename L>
double accuracy(const std::vector<P>& predictions, const std::vector<L>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (static_cast<long long>(labels[i]) < 0) continue;
    ++n;
    if (static_cast<long long>(predictions[i]) == static_cast<long long>(labels[i])) ++hit;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

/// Exact-match fraction over every unmasked (label >= 0) position, pooled
/// across samples.
template <typename P, typename L>
double per_timestep_accuracy(const std::vector<std::vector<P>>& predictions,
                             const std::vector<std::vector<L>>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  std::size_t n = 0, hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t t = 0; t < labels[i].size(); ++t) {
      if (static_cast<long long>(labels[i][t]) < 0) continue;
      ++n;
      if (t < predictions[i].size() &&
          static_cast<long long>(predictions[i][t]) == static_cast<long long>(labels[i][t]))
        ++hit;
    }
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

/// Corpus BLEU with uniform n-gram weights: clipped n-gram counts pooled over
/// the corpus, add-one smoothing for orders with zero matches, and the
/// brevity penalty exp(1 - r/c) when the candidate corpus is shorter.
template <typename T>
double bleu(const std::vector<std::vector<T>>& candidates, const std::vector<std::vector<T>>& references,
            std::size_t max_n = 4) {
  if (candidates.size() != references.size()) throw ShapeError("candidate and reference counts differ");
  if (candidates.empty()) throw EmptyCorpus("BLEU of an empty corpus");
  if (max_n == 0) throw ShapeError("max_n must be positive");
  std::vector<double> match(max_n, 0.0), total(max_n, 0.0);
  double c = 0.0, r = 0.0;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& cand = candidates[s];
    const auto& ref = references[s];
    c += static_cast<double>(cand.size());
    r += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (cand.size() < n) continue;
      std::map<std::vector<T>, std::size_t> ref_counts, cand_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[std::vector<T>(ref.begin() + i, ref.begin() + i + n)];
      for (std::size_t i = 0; i + n <= cand.size(); ++i) ++cand_counts[std::vector<T>(cand.begin() + i, cand.begin() + i + n)];
      for (const auto& [gram, count] : cand_counts) {
        const auto it = ref_counts.find(gram);
        match[n - 1] += static_cast<double>(std::min(count, it == ref_counts.end() ? 0 : it->second));
      }
      total[n - 1] += static_cast<double>(cand.size() - n + 1);
    }
  }
  if (c == 0.0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    const double p = match[n] > 0.0 ? match[n] / total[n] : (match[n] + 1.0) / (total[n] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

/// Whitespace tokenization, for text-level BLEU.
inline std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

// ---------------------------------------------------------------------------
// Jaccard index
// ---------------------------------------------------------------------------

/// |E_module| / |E_model| over the W, U and b entries of the model's
/// prunable hidden layers. Unrolled modules count an entry if any timestep
/// copy retains it.
inline double jaccard_index(const ModelSpec& model, const ModuleSpec& module) {
  const ModelSpec& m = module.base;
  if (m.layers.size() != model.layers.size()) throw ShapeError("module and model have different layer counts");
  const NodeMasks masks = node_masks(module);
  std::size_t model_edges = 0, module_edges = 0;
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    if (!is_prunable(model, i)) continue;
    const LayerSpec& l = model.layers[i];
    if (m.layers[i].kind != l.kind || m.layers[i].units != l.units)
      throw ShapeError("module layer " + std::to_string(i) + " does not match the model");
    const std::size_t copies = std::max<std::size_t>(1, masks[i].size());
    EdgeMask any = edge_mask(m, masks, i, 0);
    for (std::size_t c = 1; c < copies; ++c) {
      const EdgeMask e = edge_mask(m, masks, i, c);
      for (std::size_t k = 0; k < any.W.size(); ++k) any.W[k] |= e.W[k];
      for (std::size_t k = 0; k < any.U.size(); ++k) any.U[k] |= e.U[k];
      for (std::size_t k = 0; k < any.b.size(); ++k) any.b[k] |= e.b[k];
    }
    model_edges += any.W.size() + any.U.size() + any.b.size();
    module_edges += static_cast<std::size_t>(std::count(any.W.begin(), any.W.end(), 1)) +
                    static_cast<std::size_t>(std::count(any.U.begin(), any.U.end(), 1)) +
                    static_cast<std::size_t>(std::count(any.b.begin(), any.b.end(), 1));
  }
  return model_edges ? static_cast<double>(module_edges) / static_cast<double>(model_edges) : 1.0;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct ClassReport {
  std::string name;
  std::size_t support = 0;  // samples (one-output, translation) or labeled positions (many-output)
  double mma = 0.0;
  double cma = 0.0;
  double delta = 0.0;
  std::optional<double> jaccard;
};

/// Monolithic vs composed quality, in percent (BLEU x 100 for translation).
struct EvaluationReport {
  std::string metric;
  std::size_t samples = 0;
  double mma = 0.0;
  double cma = 0.0;
  double delta = 0.0;
  std::optional<double> jaccard;  // mean over modules derived from this model
  std::vector<ClassReport> per_class;
};

namespace metrics_detail {

inline std::string class_name(const std::vector<std::string>& names, std::size_t i) {
  return i < names.size() ? names[i] : std::to_string(i);
}

/// Composed slot for a dataset label, if the set covers that class.
inline std::optional<std::size_t> slot_of(const ModuleSet& set, const Dataset& d, int label) {
  if (label < 0) return std::nullopt;
  return set.find(class_name(d.class_names, static_cast<std::size_t>(label)));
}

/// Target tokens with padding dropped, cut at the end token.
inline std::vector<int> reference_tokens(const Sample& s, int end_token) {
  std::vector<int> ref;
  for (int t : s.target) {
    if (t == end_token) break;
    if (t != kPadId) ref.push_back(t);
  }
  return ref;
}

struct Tally {
  std::size_t n = 0, mono = 0, comp = 0;
  double mono_pct() const { return n ? 100.0 * static_cast<double>(mono) / static_cast<double>(n) : 0.0; }
  double comp_pct() const { return n ? 100.0 * static_cast<double>(comp) / static_cast<double>(n) : 0.0; }
};

}  // namespace metrics_detail

/// Compares `model` with `set` on the samples of `data` whose class (or
/// target language) the set covers. The monolithic prediction is the
/// model's unrestricted argmax; the composed prediction is the set's vote.
inline EvaluationReport evaluate(const ModelSpec& model, const ModuleSet& set, const Dataset& data) {
  using namespace metrics_detail;
  if (set.modules.empty()) throw ShapeError("empty module set");
  EvaluationReport rep;
  // Dataset ids are in the set's vocabulary when one was supplied.
  const std::vector<int> model_map = composer_detail::token_map(set.vocab, model.vocab, "the model");

  const std::string id = model_id(model);
  std::vector<std::optional<double>> ji(set.size());
  double ji_sum = 0.0;
  std::size_t ji_n = 0;
  for (std::size_t k = 0; k < set.size(); ++k) {
    if (set.modules[k].parent_model_id != id) continue;
    ji[k] = jaccard_index(model, set.modules[k]);
    ji_sum += *ji[k];
    ++ji_n;
  }
  if (ji_n) rep.jaccard = ji_sum / static_cast<double>(ji_n);

  if (set.family == InputFamily::Translation) {
    if (data.label_mode != LabelMode::TargetSequence) throw ModeError("translation sets need a TargetSequence dataset");
    rep.metric = "bleu";
    std::vector<std::vector<int>> all_mono, all_comp, all_ref;
    for (std::size_t k = 0; k < set.size(); ++k) {
      std::vector<std::vector<int>> mono, comp, ref;
      const std::string& lang = set.names[k];
      for (const Sample& s : data.samples) {
        if (slot_of(set, data, s.label) != k) continue;
        const auto mi = std::find(model.class_names.begin(), model.class_names.end(), lang);
        if (mi == model.class_names.end()) throw UnknownLanguage("model does not translate into '" + lang + "'");
        const auto model_lang = static_cast<std::size_t>(mi - model.class_names.begin());
        const Sample ms = composer_detail::remap(model_map, s);
        mono.push_back(decode_greedy(model, ms.tokens, model.start_tokens.at(model_lang), model.end_token,
                                     model.timesteps_out));
        comp.push_back(predict_translation(set, s, lang));
        ref.push_back(reference_tokens(s, data.end_token));
      }
      ClassReport cr{lang, mono.size(), 0.0, 0.0, 0.0, ji[k]};
      if (!mono.empty()) {
        cr.mma = 100.0 * bleu(mono, ref);
        cr.cma = 100.0 * bleu(comp, ref);
        cr.delta = cr.cma - cr.mma;
      }
      rep.per_class.push_back(cr);
      all_mono.insert(all_mono.end(), mono.begin(), mono.end());
      all_comp.insert(all_comp.end(), comp.begin(), comp.end());
      all_ref.insert(all_ref.end(), ref.begin(), ref.end());
    }
    rep.samples = all_ref.size();
    if (!all_ref.empty()) {
      rep.mma = 100.0 * bleu(all_mono, all_ref);
      rep.cma = 100.0 * bleu(all_comp, all_ref);
    }
    rep.delta = rep.cma - rep.mma;
    return rep;
  }

  std::vector<Tally> per(set.size());
  Tally overall;
  if (data.label_mode == LabelMode::Single) {
    rep.metric = "accuracy";
    for (const Sample& s : data.samples) {
      const auto slot = slot_of(set, data, s.label);
      if (!slot) continue;
      const std::string& truth = set.names[*slot];
      const auto mono = predict_classes(model, composer_detail::remap(model_map, s));
      const bool mono_ok = class_name(model.class_names, mono.at(0)) == truth;
      const bool comp_ok = predict_one(set, s) == *slot;
      for (Tally* t : {&per[*slot], &overall}) {
        ++t->n;
        t->mono += mono_ok;
        t->comp += comp_ok;
      }
    }
    rep.samples = overall.n;
  } else if (data.label_mode == LabelMode::PerTimestep) {
    rep.metric = "per_timestep_accuracy";
    for (const Sample& s : data.samples) {
      bool covered = false;
      for (int l : s.labels) covered = covered || slot_of(set, data, l).has_value();
      if (!covered) continue;
      ++rep.samples;
      const auto mono = predict_classes(model, composer_detail::remap(model_map, s));
      const auto comp = predict_many(set, s);
      for (std::size_t t = 0; t < s.labels.size(); ++t) {
        const auto slot = slot_of(set, data, s.labels[t]);
        if (!slot) continue;
        const std::size_t mt = std::min(t, mono.size() - 1);
        const std::size_t ct = std::min(t, comp.size() - 1);
        const bool mono_ok = class_name(model.class_names, mono[mt]) == set.names[*slot];
        const bool comp_ok = comp[ct] == *slot;
        for (Tally* tl : {&per[*slot], &overall}) {
          ++tl->n;
          tl->mono += mono_ok;
          tl->comp += comp_ok;
        }
      }
    }
  } else {
    throw ModeError("classification sets need Single or PerTimestep labels");
  }
  rep.mma = overall.mono_pct();
  rep.cma = overall.comp_pct();
  rep.delta = rep.cma - rep.mma;
  for (std::size_t k = 0; k < set.size(); ++k) {
    ClassReport cr{set.names[k], per[k].n, per[k].mono_pct(), per[k].comp_pct(), 0.0, ji[k]};
    cr.delta = cr.cma - cr.mma;
    rep.per_class.push_back(cr);
  }
  return rep;
}

inline json report_to_json(const EvaluationReport& r) {
  json j;
  j["kind"] = "evaluation_report";
  j["metric"] = r.metric;
  j["samples"] = r.samples;
  j["mma"] = r.mma;
  j["cma"] = r.cma;
  j["delta"] = r.delta;
  j["jaccard"] = r.jaccard ? json(*r.jaccard) : json(nullptr);
  j["per_class"] = json::array();
  for (const auto& c : r.per_class) {
    j["per_class"].push_back({{"name", c.name},
                              {"support", c.support},
                              {"mma", c.mma},
                              {"cma", c.cma},
                              {"delta", c.delta},
                              {"jaccard", c.jaccard ? json(*c.jaccard) : json(nullptr)}});
  }
  return j;
}

/// Fixed-width summary table.
inline std::string report_table(const EvaluationReport& r) {
  std::ostringstream out;
  auto num = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(2);
    s << v;
    return s.str();
  };
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  out << "metric: " << r.metric << "  samples: " << r.samples << "\n";
  out << pad("class", 16) << pad("support", 9) << pad("MMA", 9) << pad("CMA", 9) << pad("delta", 9) << "JI\n";
  for (const auto& c : r.per_class)
    out << pad(c.name, 16) << pad(std::to_string(c.support), 9) << pad(num(c.mma), 9) << pad(num(c.cma), 9)
        << pad(num(c.delta), 9) << (c.jaccard ? num(*c.jaccard) : std::string("-")) << "\n";
  out << pad("overall", 16) << pad(std::to_string(r.samples), 9) << pad(num(r.mma), 9) << pad(num(r.cma), 9)
      << pad(num(r.delta), 9) << (r.jaccard ? num(*r.jaccard) : std::string("-")) << "\n";
  return out.str();
}

}  // namespace rnnmod
