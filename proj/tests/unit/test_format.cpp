// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "../common/fixtures.hpp"
#include "rnnmod/rnnmod.hpp"

using namespace rnnmod;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "rnnmod_test_format";
  fs::create_directories(dir);
  return dir / name;
}

ModelSpec small_model(TaskKind task, LayerKind cell, std::uint64_t seed = 1) {
  TaskParams p;
  p.samples = 30;
  p.timesteps = 4;
  const Dataset d = gen_task(task, p, seed);
  ArchConfig a;
  a.cell = cell;
  a.units = 3;
  a.embed_dim = 2;
  ModelSpec m = build_model(a, d, seed);
  initialize(m, seed, 0.5);
  return m;
}

}  // namespace

TEST(ModelFormat, RoundTripPreservesEverything) {
  for (LayerKind cell : {LayerKind::LSTM, LayerKind::GRU, LayerKind::SimpleRNN}) {
    const ModelSpec m = small_model(TaskKind::SeqClass, cell);
    EXPECT_EQ(model_from_json(model_to_json(m)), m);
    const fs::path p = scratch("model.json");
    save_model(m, p);
    EXPECT_EQ(load_model(p), m);
    EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  }
  const ModelSpec ed = small_model(TaskKind::ToyTranslate, LayerKind::LSTM);
  EXPECT_EQ(model_from_json(model_to_json(ed)), ed);
}

TEST(ModelFormat, RecordsGateOrder) {
  const json j = model_to_json(small_model(TaskKind::SeqClass, LayerKind::LSTM));
  bool seen = false;
  for (const json& l : j.at("layers"))
    if (l.at("kind") == "LSTM") {
      EXPECT_EQ(l.at("gate_layout"), "ifgo");
      seen = true;
    }
  EXPECT_TRUE(seen);
  json bad = j;
  for (json& l : bad["layers"])
    if (l.at("kind") == "LSTM") l["gate_layout"] = "ifco";
  EXPECT_THROW(model_from_json(bad), ParseError);
}

TEST(ModelFormat, ModelIdIsStableAndSensitive) {
  ModelSpec m = small_model(TaskKind::SeqClass, LayerKind::GRU);
  const std::string id = model_id(m);
  EXPECT_EQ(id.size(), 16u);
  EXPECT_EQ(model_id(model_from_json(model_to_json(m))), id);
  m.layers.back().params.b[0] += 1e-9;
  EXPECT_NE(model_id(m), id);
}

TEST(ModelFormat, RejectsBadDocuments) {
  const json good = model_to_json(small_model(TaskKind::SeqClass, LayerKind::LSTM));
  json v = good;
  v["format_version"] = 2;
  EXPECT_THROW(model_from_json(v), VersionError);
  json missing = good;
  missing.erase("format_version");
  EXPECT_THROW(model_from_json(missing), ParseError);
  json kind = good;
  kind["kind"] = "module";
  EXPECT_THROW(model_from_json(kind), ParseError);
  json ragged = good;
  ragged["layers"][1]["W"][0].push_back(1.0);
  EXPECT_THROW(model_from_json(ragged), ParseError);
  json shape = good;
  shape["layers"][1]["units"] = 7;
  EXPECT_THROW(model_from_json(shape), ShapeError);
  json layer = good;
  layer["layers"][1]["kind"] = "Attention";
  EXPECT_THROW(model_from_json(layer), ParseError);
  json mask = good;
  mask["layers"][1]["retained"] = {1, 2, 1};
  EXPECT_THROW(model_from_json(mask), ParseError);
  EXPECT_THROW(format_detail::parse_text("{not json"), ParseError);
  EXPECT_THROW(load_model(scratch("does_not_exist.json")), IoError);
}

TEST(ModelFormat, RejectsPerTimestepWeightsOnModels) {
  ModelSpec m = small_model(TaskKind::SeqClass, LayerKind::LSTM);
  m.layers[1].per_timestep = {m.layers[1].params};
  EXPECT_THROW(validate_model(m), ShapeError);
}

TEST(ModuleFormat, RoundTripsRolledAndUnrolled) {
  const auto fx = fx::load_fixture("lstm_m2m");
  for (Mode mode : {Mode::Rolled, Mode::Unrolled}) {
    DecompositionConfig cfg;
    cfg.mode = mode;
    cfg.sample_size = 20;
    const auto mods = decompose(fx.model, fx.train, cfg);
    ASSERT_FALSE(mods.empty());
    const fs::path p = scratch("module.json");
    save_module(mods[0], p);
    const ModuleSpec back = load_module(p);
    EXPECT_EQ(back, mods[0]);
    EXPECT_EQ(back.parent_model_id, model_id(fx.model));
  }
}

TEST(ModuleFormat, UnrolledNeedsOneCopyPerStep) {
  const auto fx = fx::load_fixture("gru_m2m");
  DecompositionConfig cfg;
  cfg.mode = Mode::Unrolled;
  cfg.sample_size = 10;
  ModuleSpec mod = decompose(fx.model, fx.train, cfg).at(0);
  for (LayerSpec& l : mod.base.layers)
    if (l.recurrent()) l.per_timestep.pop_back();
  EXPECT_THROW(validate_module(mod), ShapeError);
  EXPECT_THROW(module_from_json(module_to_json(mod)), ShapeError);
}

TEST(ModuleFormat, RejectsOutOfRangeFields) {
  const auto fx = fx::load_fixture("rnn_o2o");
  DecompositionConfig cfg;
  cfg.sample_size = 10;
  const ModuleSpec mod = decompose(fx.model, fx.train, cfg).at(0);
  json j = module_to_json(mod);
  j["removal_fraction"] = 1.5;
  EXPECT_THROW(module_from_json(j), ShapeError);
  j = module_to_json(mod);
  j["dominant_class"] = 99;
  EXPECT_THROW(module_from_json(j), ShapeError);
  j = module_to_json(mod);
  j["mode"] = "sideways";
  EXPECT_THROW(module_from_json(j), ParseError);
}

TEST(DatasetFormat, RoundTripsEveryLabelMode) {
  TaskParams p;
  p.samples = 25;
  for (TaskKind k : {TaskKind::SeqClass, TaskKind::Tagging, TaskKind::OneToOne, TaskKind::OneToMany,
                     TaskKind::ToyTranslate}) {
    const Dataset d = gen_task(k, p, 5);
    EXPECT_EQ(dataset_from_json(dataset_to_json(d)), d);
    const fs::path path = scratch("data.json");
    save_dataset(d, path);
    EXPECT_EQ(load_dataset(path), d);
  }
}

TEST(DatasetFormat, ValidatesSamples) {
  TaskParams p;
  p.samples = 5;
  const Dataset d = gen_task(TaskKind::SeqClass, p, 2);
  Dataset bad = d;
  bad.samples[0].tokens.push_back(1);
  EXPECT_THROW(validate_dataset(bad), ParseError);
  bad = d;
  bad.samples[0].tokens[0] = static_cast<int>(d.vocab.size());
  EXPECT_THROW(validate_dataset(bad), ParseError);
  bad = d;
  bad.samples[0].label = 9;
  EXPECT_THROW(validate_dataset(bad), ParseError);

  const Dataset t = gen_task(TaskKind::Tagging, p, 2);
  Dataset badt = t;
  badt.samples[0].labels[0] = -2;
  EXPECT_THROW(validate_dataset(badt), ParseError);

  const Dataset tr = gen_task(TaskKind::ToyTranslate, p, 2);
  Dataset badtr = tr;
  badtr.start_tokens.pop_back();
  EXPECT_THROW(validate_dataset(badtr), ParseError);
}

TEST(ExportManifest, FixtureExportsReplayWithinTolerance) {
  const json models = fx::load_oracle("models.json");
  std::size_t n = 0;
  for (const json& rec : models.at("models")) {
    const std::string name = rec.at("fixture");
    const ExportManifest ex = load_export_manifest(fx::fixture_dir() / "oracle" / "export" / (name + ".json"));
    const auto fx = fx::load_fixture(name);
    EXPECT_NO_THROW(check_export(ex, fx.model)) << name;
    EXPECT_EQ(ex.weight_deviation, 0.0) << name << ": export must be lossless";
    EXPECT_LE(replay_deviation(fx.model, rec.at("samples")), ex.tolerance) << name;
    ++n;
  }
  EXPECT_EQ(n, 15u);
}

TEST(ExportManifest, CorruptedWeightsExceedTolerance) {
  const json models = fx::load_oracle("models.json");
  const json& rec = models.at("models").at(0);
  auto fx = fx::load_fixture(rec.at("fixture"));
  for (LayerSpec& l : fx.model.layers)
    if (l.recurrent()) l.params.W(0, 0) += 0.5;
  EXPECT_GT(replay_deviation(fx.model, rec.at("samples")), 1e-5);
  const ExportManifest ex =
      load_export_manifest(fx::fixture_dir() / "oracle" / "export" / (rec.at("fixture").get<std::string>() + ".json"));
  EXPECT_THROW(check_export(ex, fx.model), StateError);
}

TEST(ExportManifest, ZeroWeightModelReplaysExactly) {
  ModelSpec m = small_model(TaskKind::Tagging, LayerKind::GRU);
  initialize(m, 3, 0.0);
  Sample s;
  s.tokens = {1, 2, 3, 4};
  const Output out = forward(m, s);
  json rows = json::array();
  for (std::size_t t = 0; t < out.scores.rows(); ++t) {
    const auto r = out.scores.row(t);
    rows.push_back(Vector(r.begin(), r.end()));
    for (double v : r) EXPECT_DOUBLE_EQ(v, 1.0 / static_cast<double>(m.num_classes));
  }
  const json samples = json::array({{{"tokens", s.tokens}, {"layers", {{std::to_string(m.layers.size() - 1), rows}}}}});
  EXPECT_EQ(replay_deviation(m, samples), 0.0);
}

TEST(ExportManifest, MappingTable) {
  EXPECT_EQ(map_source_layer("LSTM"), LayerKind::LSTM);
  EXPECT_EQ(map_source_layer("TimeDistributed(Dense)"), LayerKind::TimeDistributedDense);
  EXPECT_EQ(map_source_layer("Dense", false, true), LayerKind::TimeDistributedDense);
  EXPECT_EQ(map_source_layer("Dense"), LayerKind::Dense);
  EXPECT_THROW(map_source_layer("Attention"), UnsupportedLayer);
  EXPECT_THROW(map_source_layer("GRU", true), UnsupportedLayer);
  EXPECT_EQ(gate_layout(LayerKind::LSTM), "ifgo");
  EXPECT_EQ(gate_layout(LayerKind::GRU), "zrh");
}

TEST(ExportManifest, RoundTripAndValidation) {
  ExportManifest m;
  m.source = "ckpt.keras";
  m.framework = "keras";
  m.tolerance = 1e-5;
  m.layers = {{0, "Embedding", LayerKind::Embedding, ""}, {1, "GRU", LayerKind::GRU, "zrh"},
              {2, "Dense", LayerKind::Dense, ""}};
  const fs::path p = scratch("export.json");
  save_export_manifest(m, p);
  EXPECT_EQ(load_export_manifest(p), m);

  json j = export_manifest_to_json(m);
  j["layers"][1]["gate_layout"] = "rzh";
  EXPECT_THROW(export_manifest_from_json(j), ParseError);
  j = export_manifest_to_json(m);
  j["layers"][1]["kind"] = "LSTM";
  EXPECT_THROW(export_manifest_from_json(j), ParseError);
  j = export_manifest_to_json(m);
  j["layers"][2]["source_class"] = "MultiHeadAttention";
  EXPECT_THROW(export_manifest_from_json(j), UnsupportedLayer);
}
