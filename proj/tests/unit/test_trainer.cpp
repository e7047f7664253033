// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>

#include "rnnmod/rnnmod.hpp"

using namespace rnnmod;

namespace {

ModelSpec model_for(const Dataset& d, LayerKind cell, std::size_t units = 8, std::size_t dense = 0) {
  ArchConfig a;
  a.cell = cell;
  a.units = units;
  a.embed_dim = 6;
  a.dense_units = dense;
  return build_model(a, d, 5);
}

double test_accuracy(const ModelSpec& m, const Dataset& d) {
  std::vector<int> pred, gold;
  for (const Sample& s : d.samples) {
    pred.push_back(static_cast<int>(predict_classes(m, s).at(0)));
    gold.push_back(s.label);
  }
  return accuracy(pred, gold);
}

}  // namespace

TEST(Tasks, DeterministicPerSeed) {
  TaskParams p;
  p.samples = 40;
  for (TaskKind k : {TaskKind::SeqClass, TaskKind::Tagging, TaskKind::OneToOne, TaskKind::OneToMany,
                     TaskKind::ToyTranslate}) {
    EXPECT_EQ(gen_task(k, p, 9), gen_task(k, p, 9));
    EXPECT_NE(gen_task(k, p, 9).samples, gen_task(k, p, 10).samples);
    EXPECT_NO_THROW(validate_dataset(gen_task(k, p, 9)));
  }
}

TEST(Tasks, SeqClassPriorsAreUniform) {
  TaskParams p;
  p.samples = 6000;
  p.classes = 4;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 1);
  std::map<int, int> counts;
  for (const Sample& s : d.samples) ++counts[s.label];
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(counts[c] / 6000.0, 0.25, 0.05);
  // Exactly one marker, and it names the class.
  for (const Sample& s : d.samples) {
    int markers = 0;
    for (int t : s.tokens)
      if (t > static_cast<int>(p.vocab)) {
        ++markers;
        EXPECT_EQ(t - static_cast<int>(p.vocab) - 1, s.label);
      }
    EXPECT_EQ(markers, 1);
  }
}

TEST(Tasks, TaggingLabelsDependOnPosition) {
  TaskParams p;
  p.samples = 3000;
  p.classes = 3;
  p.timesteps = 6;
  p.positional = false;
  p.skew = 0.7;
  const Dataset d = gen_task(TaskKind::Tagging, p, 2);
  for (std::size_t t = 0; t < p.timesteps; ++t) {
    int favored = 0;
    for (const Sample& s : d.samples) favored += s.labels[t] == static_cast<int>(t % 3);
    // 0.7 forced plus a third of the rest.
    EXPECT_NEAR(favored / 3000.0, 0.7 + 0.3 / 3.0, 0.05) << "step " << t;
  }
  for (const Sample& s : d.samples)
    for (std::size_t t = 0; t < p.timesteps; ++t) EXPECT_EQ(s.labels[t], s.tokens[t] % 3);
}

TEST(Tasks, OneToManyLabelsAdvanceWithTime) {
  TaskParams p;
  p.samples = 20;
  p.timesteps = 5;
  const Dataset d = gen_task(TaskKind::OneToMany, p, 3);
  for (const Sample& s : d.samples)
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(s.labels[t], (s.tokens[0] + static_cast<int>(t)) % 3);
}

TEST(Tasks, ToyTranslateRoundTrips) {
  TaskParams p;
  p.samples = 200;
  p.vocab = 7;
  const Dataset d = gen_task(TaskKind::ToyTranslate, p, 4);
  for (const Sample& s : d.samples) {
    const auto lang = static_cast<std::size_t>(s.label);
    std::vector<int> words;
    for (int t : s.target) {
      if (t == kToyEnd) break;
      const int w = t - kToyContentOffset - static_cast<int>(lang * p.vocab);
      ASSERT_GE(w, 1);
      ASSERT_LE(w, 7);
      words.push_back(w);
    }
    std::vector<int> src;
    for (int t : s.tokens)
      if (t != kPadId) src.push_back(t);
    EXPECT_EQ(toy_untranslate(lang, words, p.vocab), src);
    EXPECT_EQ(toy_translate(lang, s.tokens, p.vocab), words);
  }
  EXPECT_EQ(toy_translate(2, {7, 1}, 7), (std::vector<int>{1, 2}));
  EXPECT_EQ(toy_translate(1, {1, 2, 3}, 7), (std::vector<int>{3, 2, 1}));
  EXPECT_THROW(toy_translate(3, {1}, 7), IndexError);
}

TEST(Tasks, RejectsDegenerateSizes) {
  TaskParams p;
  p.samples = 0;
  EXPECT_THROW(gen_task(TaskKind::SeqClass, p, 0), UsageError);
  p.samples = 5;
  p.classes = 1;
  EXPECT_THROW(gen_task(TaskKind::SeqClass, p, 0), UsageError);
}

TEST(Tasks, SplitKeepsOrder) {
  TaskParams p;
  p.samples = 10;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 0);
  const auto [a, b] = split_dataset(d, 0.3);
  EXPECT_EQ(a.samples.size(), 7u);
  EXPECT_EQ(b.samples.size(), 3u);
  EXPECT_EQ(b.samples.front(), d.samples[7]);
}

TEST(Build, LayoutFollowsTask) {
  TaskParams p;
  p.samples = 10;
  auto kinds = [](const ModelSpec& m) {
    std::vector<LayerKind> k;
    for (const auto& l : m.layers) k.push_back(l.kind);
    return k;
  };
  using LK = LayerKind;
  EXPECT_EQ(kinds(model_for(gen_task(TaskKind::SeqClass, p, 0), LK::GRU)),
            (std::vector<LK>{LK::Embedding, LK::GRU, LK::Dense}));
  EXPECT_EQ(kinds(model_for(gen_task(TaskKind::Tagging, p, 0), LK::LSTM, 8, 4)),
            (std::vector<LK>{LK::Embedding, LK::LSTM, LK::TimeDistributedDense, LK::TimeDistributedDense}));
  EXPECT_EQ(kinds(model_for(gen_task(TaskKind::OneToMany, p, 0), LK::SimpleRNN)),
            (std::vector<LK>{LK::Embedding, LK::Flatten, LK::RepeatVector, LK::SimpleRNN, LK::TimeDistributedDense}));
  const ModelSpec ed = model_for(gen_task(TaskKind::ToyTranslate, p, 0), LK::LSTM);
  EXPECT_EQ(ed.io_type, IoType::EncoderDecoder);
  EXPECT_EQ(kinds(ed), (std::vector<LK>{LK::Embedding, LK::LSTM, LK::Embedding, LK::LSTM, LK::TimeDistributedDense}));
  EXPECT_EQ(model_for(gen_task(TaskKind::OneToOne, p, 0), LK::GRU).io_type, IoType::OneToOne);
}

TEST(Train, ZeroLearningRateLeavesWeights) {
  TaskParams p;
  p.samples = 40;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 1);
  const ModelSpec m = model_for(d, LayerKind::LSTM);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.learning_rate = 0.0;
  TrainLog log;
  EXPECT_EQ(train(m, d, cfg, &log), m);
  ASSERT_EQ(log.epoch_loss.size(), 2u);
  EXPECT_DOUBLE_EQ(log.epoch_loss[0], log.epoch_loss[1]);
}

TEST(Train, LearnsSeqClass) {
  TaskParams p;
  p.samples = 400;
  p.timesteps = 6;
  const auto [tr, te] = split_dataset(gen_task(TaskKind::SeqClass, p, 2), 0.25);
  for (LayerKind cell : {LayerKind::LSTM, LayerKind::GRU, LayerKind::SimpleRNN}) {
    TrainConfig cfg;
    cfg.epochs = 12;
    TrainLog log;
    const ModelSpec m = train(model_for(tr, cell), tr, cfg, &log);
    EXPECT_LT(log.epoch_loss.back(), log.epoch_loss.front()) << to_string(cell);
    EXPECT_GT(test_accuracy(m, te), 0.9) << to_string(cell);
  }
}

TEST(Train, SgdReducesLoss) {
  TaskParams p;
  p.samples = 64;
  const Dataset d = gen_task(TaskKind::OneToOne, p, 3);
  TrainConfig cfg;
  cfg.optimizer = Optimizer::SGD;
  cfg.learning_rate = 0.5;
  cfg.epochs = 30;
  // Plain SGD stalls on the plateau of the small default init.
  ModelSpec m = model_for(d, LayerKind::GRU);
  initialize(m, 5, 0.5);
  TrainLog log;
  train(m, d, cfg, &log);
  EXPECT_LT(log.epoch_loss.back(), 0.5 * log.epoch_loss.front());
}

TEST(Train, Errors) {
  TaskParams p;
  p.samples = 10;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 1);
  const ModelSpec m = model_for(d, LayerKind::GRU);
  TrainConfig cfg;
  cfg.learning_rate = -1.0;
  EXPECT_THROW(train(m, d, cfg), UsageError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(train(m, d, cfg), UsageError);
  cfg = {};
  cfg.loss = Loss::BinaryCrossEntropy;
  EXPECT_THROW(train(m, d, cfg), UsageError);
  ModelSpec nan = m;
  nan.layers.back().params.b[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(train(nan, d, TrainConfig{}), DivergenceError);
}

TEST(GradCheck, AllCellKindsAndHeads) {
  TaskParams p;
  p.samples = 4;
  p.timesteps = 4;
  p.vocab = 5;
  for (LayerKind cell : {LayerKind::LSTM, LayerKind::GRU, LayerKind::SimpleRNN}) {
    for (TaskKind task : {TaskKind::SeqClass, TaskKind::Tagging, TaskKind::OneToMany, TaskKind::ToyTranslate}) {
      const Dataset d = gen_task(task, p, 6);
      ModelSpec m = model_for(d, cell, 4, task == TaskKind::SeqClass ? 3 : 0);
      initialize(m, 11, 0.5);
      const GradCheckResult r = grad_check(m, d.samples[0], 1e-4, 1u << 20, 1);
      EXPECT_LT(r.max_rel_error, 1e-4) << to_string(cell) << " task " << static_cast<int>(task);
      EXPECT_GT(r.checked, 50u);
    }
  }
}

TEST(GradCheck, SigmoidHeadWithBinaryCrossEntropy) {
  TaskParams p;
  p.samples = 4;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 2);
  ArchConfig a;
  a.units = 3;
  a.embed_dim = 3;
  a.head = Activation::Sigmoid;
  ModelSpec m = build_model(a, d, 1);
  initialize(m, 2, 0.5);
  EXPECT_EQ(default_loss(m), Loss::BinaryCrossEntropy);
  EXPECT_LT(grad_check(m, d.samples[1], 1e-4, 1u << 20, 3).max_rel_error, 1e-4);
}
