// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "rnnmod/rnnmod.hpp"

using namespace rnnmod;

namespace {

DecompositionConfig zero_threshold(Mode mode = Mode::Rolled) {
  DecompositionConfig cfg;
  cfg.threshold = 0.0;
  cfg.sample_size = 20;
  cfg.mode = mode;
  return cfg;
}

Output logits_row(const Vector& v) {
  Output o{Matrix(1, v.size()), Matrix(1, v.size()), {1}};
  for (std::size_t j = 0; j < v.size(); ++j) o.logits(0, j) = v[j];
  return o;
}

}  // namespace

TEST(Vote, MarginOfUnchanneledModules) {
  const Output out = logits_row({2.0, 1.0, 0.0});
  ModuleSpec m;
  for (std::size_t c = 0; c < 3; ++c) {
    m.dominant_class = c;
    const double want[] = {1.5, 0.0, -1.5};
    EXPECT_DOUBLE_EQ(composer_detail::margin(m, out, 0), want[c]);
  }
  m.channeled = true;
  EXPECT_DOUBLE_EQ(composer_detail::margin(m, logits_row({0.25, 1.0}), 0), -0.75);
}

TEST(Compose, ZeroThresholdReproducesParentOneOutput) {
  for (const char* name : {"lstm_m2o", "gru_o2o", "rnn_m2o"}) {
    const auto fx = fx::load_fixture(name);
    const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, zero_threshold()));
    for (const Sample& s : fx.test.samples)
      ASSERT_EQ(predict_one(set, s), argmax(forward(fx.model, s).logits.row(0))) << name;
  }
}

TEST(Compose, ZeroThresholdReproducesParentManyOutput) {
  for (const char* name : {"gru_m2m", "lstm_o2m"}) {
    const auto fx = fx::load_fixture(name);
    for (Mode mode : {Mode::Rolled, Mode::Unrolled}) {
      const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, zero_threshold(mode)));
      for (std::size_t i = 0; i < 40; ++i) {
        const Sample& s = fx.test.samples[i];
        ASSERT_EQ(predict_many(set, s), predict_classes(fx.model, s)) << name;
      }
    }
  }
}

TEST(Compose, TiesGoToLowestSlot) {
  const auto fx = fx::load_fixture("lstm_m2o");
  const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, zero_threshold()));
  // Slot B now scores exactly like slot A, so it can never win.
  const ModuleSet dup = replace_module(set, "B", set.modules[0]);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_NE(predict_one(dup, fx.test.samples[i]), 1u);
}

TEST(Compose, RejectsIncompatibleModules) {
  const auto m2o = fx::load_fixture("lstm_m2o");
  const auto o2o = fx::load_fixture("lstm_o2o");
  const auto many = decompose(m2o.model, m2o.train, zero_threshold());
  const auto one = decompose(o2o.model, o2o.train, zero_threshold());
  EXPECT_THROW(reuse_compose({many[0], one[1]}), IncompatibleInput);
  EXPECT_THROW(reuse_compose({many[0], many[0]}), ShapeError);
  EXPECT_THROW(reuse_compose({}), ShapeError);
  const ModuleSet set = reuse_compose(many);
  EXPECT_THROW(replace_module(set, "Z", many[0]), UnknownSlot);
  EXPECT_THROW(replace_module(set, "A", one[0]), IncompatibleInput);
}

TEST(Compose, SharedVocabularyRemapsTokens) {
  const auto fx = fx::load_fixture("gru_m2o");
  auto mods = decompose(fx.model, fx.train, zero_threshold());
  ASSERT_FALSE(fx.model.vocab.empty());
  // A module whose vocabulary lists the same words in reverse order.
  ModuleSpec flipped = mods[1];
  std::vector<std::string> rev = fx.model.vocab;
  std::reverse(rev.begin() + 1, rev.end());
  Matrix& E = flipped.base.layers[0].params.W;
  Matrix E2 = E;
  for (std::size_t i = 1; i < E.rows(); ++i)
    for (std::size_t j = 0; j < E.cols(); ++j) E2(E.rows() - i, j) = E(i, j);
  E = E2;
  flipped.base.vocab = rev;
  EXPECT_THROW(reuse_compose({mods[0], flipped, mods[2]}), VocabMismatch);
  const ModuleSet shared = reuse_compose({mods[0], flipped, mods[2]}, fx.model.vocab);
  const ModuleSet plain = reuse_compose(mods);
  for (std::size_t i = 0; i < 50; ++i)
    EXPECT_EQ(predict_one(shared, fx.test.samples[i]), predict_one(plain, fx.test.samples[i]));

  std::vector<std::string> extra = fx.model.vocab;
  extra.push_back("never-seen");
  EXPECT_THROW(reuse_compose(mods, extra), VocabMismatch);
}

TEST(Compose, ReplaceThenReplaceBackRestoresPredictions) {
  const auto strong = fx::load_fixture("lstm_m2o");
  const auto weak = fx::load_fixture("weak_lstm_m2o");
  const ModuleSet set = reuse_compose(decompose(weak.model, weak.train, DecompositionConfig{}));
  const auto better = decompose(strong.model, strong.train, DecompositionConfig{});
  const ModuleSet swapped = replace_module(set, "A", better[0]);
  const ModuleSet back = replace_module(swapped, "A", set.modules[0]);
  EXPECT_EQ(back.modules, set.modules);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(predict_one(back, weak.test.samples[i]), predict_one(set, weak.test.samples[i]));
}

TEST(Compose, TranslationSetsDecodeByLanguage) {
  const auto fx = fx::load_fixture("ed_lstm");
  const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, zero_threshold()));
  EXPECT_EQ(set.family, InputFamily::Translation);
  const Sample& s = fx.test.samples[0];
  for (std::size_t k = 0; k < set.size(); ++k) {
    const auto got = predict_translation(set, s, set.names[k]);
    const auto want = decode_greedy(fx.model, s.tokens, fx.model.start_tokens[k], fx.model.end_token,
                                    fx.model.timesteps_out);
    EXPECT_EQ(got, want) << set.names[k];
  }
  EXPECT_THROW(predict_translation(set, s, "klingon"), UnknownLanguage);
  EXPECT_THROW(predict_one(set, s), ShapeError);
}

TEST(Compose, MultiLabelUsesDominantSigmoid) {
  const auto fx = fx::load_fixture("rnn_m2o");
  const ModuleSet set = reuse_compose(decompose(fx.model, fx.train, zero_threshold()));
  const Sample& s = fx.test.samples[0];
  const auto labels = predict_multilabel(set, s);
  ASSERT_EQ(labels.size(), 1u);
  const auto outs = composer_detail::run_all(set, s);
  for (std::size_t k = 0; k < set.size(); ++k) {
    const bool on = sigmoid(outs[k].logits(0, 0)) >= 0.5;
    EXPECT_EQ(std::find(labels[0].begin(), labels[0].end(), k) != labels[0].end(), on);
  }
}
