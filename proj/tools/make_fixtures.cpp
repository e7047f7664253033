// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Regenerates the trained fixtures under tests/fixtures/trained. Every
// fixture is deterministic: same seeds, same bytes.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rnnmod/rnnmod.hpp"

namespace fs = std::filesystem;
using namespace rnnmod;

namespace {

struct FixtureDef {
  std::string name;
  std::string cell;
  TaskKind task;
  TaskParams params;
  ArchConfig arch;
  TrainConfig train;
  std::uint64_t data_seed = 1;
  std::uint64_t init_seed = 7;
  double test_fraction = 0.25;
};

LayerKind cell_kind(const std::string& c) {
  if (c == "lstm") return LayerKind::LSTM;
  if (c == "gru") return LayerKind::GRU;
  return LayerKind::SimpleRNN;
}

std::string task_name(TaskKind k) {
  switch (k) {
    case TaskKind::SeqClass: return "seqclass";
    case TaskKind::Tagging: return "tagging";
    case TaskKind::OneToOne: return "one_to_one";
    case TaskKind::OneToMany: return "one_to_many";
    case TaskKind::ToyTranslate: return "toy_translate";
  }
  return "?";
}

std::vector<FixtureDef> fixture_defs() {
  std::vector<FixtureDef> defs;
  ArchConfig base;
  base.units = 32;
  base.embed_dim = 64;
  TrainConfig tc;
  tc.epochs = 15;

  const std::pair<const char*, TaskKind> ios[] = {
      {"o2o", TaskKind::OneToOne}, {"m2o", TaskKind::SeqClass},
      {"o2m", TaskKind::OneToMany}, {"m2m", TaskKind::Tagging}};
  for (const char* cell : {"lstm", "gru", "rnn"}) {
    for (const auto& [io, task] : ios) {
      FixtureDef f;
      f.name = std::string(cell) + "_" + io;
      f.cell = cell;
      f.task = task;
      f.params.samples = 1600;
      f.params.timesteps = task == TaskKind::OneToMany ? 6 : 8;
      // Tagging labels come from the token; the skew makes the label
      // distribution depend on the timestep.
      f.params.positional = false;
      f.params.skew = 0.7;
      f.arch = base;
      f.arch.cell = cell_kind(cell);
      f.train = tc;
      defs.push_back(f);
    }
  }

  FixtureDef relu;
  relu.name = "relu_m2o";
  relu.cell = "rnn";
  relu.task = TaskKind::SeqClass;
  relu.params.samples = 1600;
  relu.arch = base;
  relu.arch.cell = LayerKind::SimpleRNN;
  relu.arch.cell_activation = Activation::ReLU;
  relu.arch.dense_units = 16;
  relu.arch.dense_activation = Activation::ReLU;
  relu.train = tc;
  relu.train.learning_rate = 0.003;
  defs.push_back(relu);

  // Same data as lstm_m2o, barely trained.
  FixtureDef weak = defs[1];
  weak.name = "weak_lstm_m2o";
  weak.init_seed = 99;
  weak.train.epochs = 1;
  weak.train.learning_rate = 0.002;
  defs.push_back(weak);

  FixtureDef ed;
  ed.name = "ed_lstm";
  ed.cell = "lstm";
  ed.task = TaskKind::ToyTranslate;
  ed.params.samples = 1500;
  ed.params.timesteps = 4;
  ed.params.vocab = 8;
  ed.arch = base;
  ed.arch.units = 64;
  ed.arch.embed_dim = 64;
  ed.train = tc;
  ed.train.epochs = 40;
  ed.test_fraction = 0.2;
  defs.push_back(ed);
  return defs;
}

double train_accuracy(const ModelSpec& m, const Dataset& d) {
  double hit = 0, total = 0;
  for (const Sample& s : d.samples) {
    const auto pred = predict_classes(m, s);
    if (d.label_mode == LabelMode::Single) {
      hit += static_cast<double>(pred[0]) == s.label;
      total += 1;
    } else if (d.label_mode == LabelMode::PerTimestep) {
      for (std::size_t t = 0; t < s.labels.size() && t < pred.size(); ++t) {
        if (s.labels[t] < 0) continue;
        hit += static_cast<double>(pred[t]) == s.labels[t];
        total += 1;
      }
    }
  }
  return total > 0 ? hit / total : 0.0;
}

// Inputs on which the weak and strong models disagree, drawn from fresh data.
Dataset disagreement_set(const ModelSpec& weak, const ModelSpec& strong, const FixtureDef& def,
                         std::size_t want) {
  TaskParams p = def.params;
  p.samples = 4000;
  Dataset pool = gen_task(def.task, p, 4242);
  Dataset out = pool;
  out.samples.clear();
  for (const Sample& s : pool.samples) {
    if (predict_classes(weak, s) != predict_classes(strong, s)) out.samples.push_back(s);
    if (out.samples.size() == want) break;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regenerate trained rnnmod fixtures"};
  std::string out_dir = "tests/fixtures/trained";
  std::vector<std::string> only;
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--only", only, "fixture names to rebuild");
  CLI11_PARSE(app, argc, argv);

  const auto defs = fixture_defs();
  json manifest = json::array();
  if (fs::exists(fs::path(out_dir) / "manifest.json")) {
    manifest = load_json(fs::path(out_dir) / "manifest.json");
  }
  auto wanted = [&](const std::string& n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };

  for (const FixtureDef& def : defs) {
    if (!wanted(def.name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset all = gen_task(def.task, def.params, def.data_seed);
    const auto [train_set, test_set] = split_dataset(all, def.test_fraction);
    ModelSpec m = build_model(def.arch, train_set, def.init_seed);
    TrainConfig tc = def.train;
    tc.loss = default_loss(m);
    TrainLog log;
    m = train(std::move(m), train_set, tc, &log);
    m.metadata["fixture"] = def.name;
    m.metadata["task"] = task_name(def.task);

    const fs::path dir = fs::path(out_dir) / def.name;
    fs::create_directories(dir);
    save_model(m, dir / "model.json");
    save_dataset(train_set, dir / "train.json");
    save_dataset(test_set, dir / "test.json");

    json entry = {{"name", def.name},
                  {"cell", def.cell},
                  {"io_type", std::string(to_string(m.io_type))},
                  {"task", task_name(def.task)},
                  {"units", def.arch.units},
                  {"epochs", def.train.epochs},
                  {"final_loss", log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()},
                  {"model_id", model_id(m)}};
    if (def.task != TaskKind::ToyTranslate) entry["test_accuracy"] = train_accuracy(m, test_set);

    if (def.name == "weak_lstm_m2o") {
      const ModelSpec strong = load_model(fs::path(out_dir) / "lstm_m2o" / "model.json");
      const Dataset dis = disagreement_set(m, strong, def, 64);
      save_dataset(dis, dir / "disagreement.json");
      entry["disagreement_samples"] = dis.samples.size();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << def.name << ": loss " << entry["final_loss"] << " in " << secs << " s\n";

    bool replaced = false;
    for (auto& e : manifest)
      if (e["name"] == def.name) {
        e = entry;
        replaced = true;
      }
    if (!replaced) manifest.push_back(entry);
  }
  write_text_file(fs::path(out_dir) / "manifest.json", dump(manifest) + "\n");
  return 0;
}
