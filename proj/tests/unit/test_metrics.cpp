// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "../common/fixtures.hpp"
#include "rnnmod/rnnmod.hpp"

using namespace rnnmod;
using Corpus = std::vector<std::vector<std::string>>;

namespace {

ModelSpec tiny(LayerKind cell, std::size_t units, std::size_t embed) {
  TaskParams p;
  p.samples = 30;
  p.timesteps = 4;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 3);
  ArchConfig a;
  a.cell = cell;
  a.units = units;
  a.embed_dim = embed;
  ModelSpec m = build_model(a, d, 3);
  initialize(m, 3, 0.5);
  return m;
}

}  // namespace

TEST(Accuracy, CountsExactMatches) {
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 1, 2}), 0.75);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{1, 1}, std::vector<int>{-1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<int>{}, std::vector<int>{}), 0.0);
  EXPECT_THROW(accuracy(std::vector<int>{1}, std::vector<int>{}), ShapeError);
}

TEST(Accuracy, PerTimestepPoolsUnmaskedPositions) {
  const std::vector<std::vector<int>> pred = {{0, 1, 2}, {1, 1}};
  const std::vector<std::vector<int>> gold = {{0, 2, -1}, {1, -1}};
  EXPECT_DOUBLE_EQ(per_timestep_accuracy(pred, gold), 2.0 / 3.0);
}

TEST(Bleu, HandComputedExamples) {
  // Unigram and bigram precision 1, brevity penalty exp(1 - 3/2).
  EXPECT_NEAR(bleu(Corpus{{"the", "cat"}}, Corpus{{"the", "cat", "sat"}}, 2), std::exp(-0.5), 1e-12);
  EXPECT_NEAR(bleu(Corpus{{"the", "cat"}}, Corpus{{"the", "cat", "sat"}}, 2), 0.60653, 1e-5);
  // No matches: smoothed precisions 1/4 and 1/3.
  EXPECT_NEAR(bleu(Corpus{{"a", "b", "c"}}, Corpus{{"d", "e", "f"}}, 2), 0.288675, 1e-5);
  // Clipping: "the the the" against "the cat" counts one unigram match.
  const double p1 = 1.0 / 3.0, p2 = 1.0 / 3.0;  // bigrams: 0 matches of 2, smoothed (0+1)/(2+1)
  EXPECT_NEAR(bleu(Corpus{{"the", "the", "the"}}, Corpus{{"the", "cat"}}, 2), std::sqrt(p1 * p2), 1e-12);
}

TEST(Bleu, IdenticalCorpusIsExactlyOne) {
  const Corpus c = {{"a", "b", "c", "d", "e"}, {"x", "y", "z", "w"}};
  EXPECT_EQ(bleu(c, c), 1.0);
  const std::vector<std::vector<int>> ids = {{4, 5, 6, 7}, {8, 9, 10, 11, 12}};
  EXPECT_EQ(bleu(ids, ids), 1.0);
}

TEST(Bleu, CorpusLevelPooling) {
  // Pooled counts, not the mean of sentence scores.
  const Corpus cand = {{"a", "b"}, {"c", "d"}};
  const Corpus ref = {{"a", "b"}, {"c", "x"}};
  const double p1 = 3.0 / 4.0, p2 = 1.0 / 2.0;
  EXPECT_NEAR(bleu(cand, ref, 2), std::sqrt(p1 * p2), 1e-12);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu(Corpus{}, Corpus{}), EmptyCorpus);
  EXPECT_THROW(bleu(Corpus{{"a"}}, Corpus{}), ShapeError);
  EXPECT_THROW(bleu(Corpus{{"a"}}, Corpus{{"a"}}, 0), ShapeError);
  EXPECT_EQ(bleu(Corpus{{}}, Corpus{{"a"}}), 0.0);
  EXPECT_EQ(split_words("  the  cat\tsat\n"), (std::vector<std::string>{"the", "cat", "sat"}));
}

TEST(Jaccard, ZeroPrunedModuleIsOne) {
  const ModelSpec m = tiny(LayerKind::GRU, 4, 3);
  const ModuleSpec mod = to_module(Concern(m, Mode::Rolled), 0);
  EXPECT_DOUBLE_EQ(jaccard_index(m, mod), 1.0);
}

TEST(Jaccard, OneRemovedLstmNode) {
  const std::size_t h = 5, d = 3;
  const ModelSpec m = tiny(LayerKind::LSTM, h, d);
  Concern c(m, Mode::Rolled);
  c.remove_node(1, 2);
  const ModuleSpec mod = to_module(c, 0);
  // Edges of the LSTM layer: W d x 4h, U h x 4h, b 4h. Node 2 loses its 4
  // W columns, its 4 U columns and its U row (sharing 4 entries), 4 biases.
  const double total = static_cast<double>(d * 4 * h + h * 4 * h + 4 * h);
  const double lost = static_cast<double>(4 * d + (4 * h + 4 * h - 4) + 4);
  EXPECT_NEAR(jaccard_index(m, mod), (total - lost) / total, 1e-12);
}

TEST(Jaccard, UnrolledCountsUnionOfCopies) {
  const ModelSpec m = tiny(LayerKind::SimpleRNN, 4, 2);
  Concern c(m, Mode::Unrolled);
  // Different nodes at different steps: every edge survives in some copy.
  c.remove_node(1, 0, std::size_t{0});
  c.remove_node(1, 1, std::size_t{1});
  EXPECT_DOUBLE_EQ(jaccard_index(m, to_module(c, 0)), 1.0);
  Concern all(m, Mode::Unrolled);
  all.remove_node(1, 0);
  EXPECT_LT(jaccard_index(m, to_module(all, 0)), 1.0);
}

TEST(Evaluate, ZeroThresholdHasNoLoss) {
  const auto fx = fx::load_fixture("gru_m2o");
  DecompositionConfig cfg;
  cfg.threshold = 0.0;
  cfg.sample_size = 20;
  const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, cfg));
  const EvaluationReport rep = evaluate(fx.model, set, fx.test);
  EXPECT_EQ(rep.metric, "accuracy");
  EXPECT_EQ(rep.samples, fx.test.samples.size());
  EXPECT_DOUBLE_EQ(rep.delta, 0.0);
  ASSERT_TRUE(rep.jaccard.has_value());
  EXPECT_DOUBLE_EQ(*rep.jaccard, 1.0);
  std::size_t support = 0;
  for (const auto& c : rep.per_class) support += c.support;
  EXPECT_EQ(support, rep.samples);

  const json j = report_to_json(rep);
  EXPECT_EQ(j.at("per_class").size(), 3u);
  EXPECT_EQ(j.at("delta").get<double>(), 0.0);
  EXPECT_NE(report_table(rep).find("overall"), std::string::npos);
}

TEST(Evaluate, RestrictsToCoveredClasses) {
  const auto fx = fx::load_fixture("lstm_m2o");
  DecompositionConfig cfg;
  cfg.threshold = 0.0;
  cfg.sample_size = 20;
  const auto mods = decompose(fx.model, fx.train, cfg);
  const EvaluationReport rep = evaluate(fx.model, reuse_compose({mods[0], mods[2]}), fx.test);
  std::size_t expected = 0;
  for (const Sample& s : fx.test.samples) expected += s.label != 1;
  EXPECT_EQ(rep.samples, expected);
  EXPECT_EQ(rep.per_class.size(), 2u);
}

TEST(Evaluate, LabelModeMustFit) {
  const auto m2o = fx::load_fixture("rnn_m2o");
  const auto ed = fx::load_fixture("ed_lstm");
  DecompositionConfig cfg;
  cfg.threshold = 0.0;
  cfg.sample_size = 10;
  const ModuleSet set = reuse_compose(decompose(ed.model, ed.train, cfg));
  EXPECT_THROW(evaluate(ed.model, set, m2o.test), ModeError);
}

TEST(Evaluate, TranslationReportsBleu) {
  const auto fx = fx::load_fixture("ed_lstm");
  DecompositionConfig cfg;
  cfg.threshold = 0.0;
  cfg.sample_size = 20;
  const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, cfg));
  const EvaluationReport rep = evaluate(fx.model, set, fx.test);
  EXPECT_EQ(rep.metric, "bleu");
  EXPECT_EQ(rep.per_class.size(), 3u);
  EXPECT_DOUBLE_EQ(rep.delta, 0.0);
  EXPECT_GT(rep.mma, 50.0);
}
