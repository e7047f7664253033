// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// rnnmod command line: gen, train, decompose, evaluate, reuse, replace,
// inspect. Exit codes: 0 ok, 2 usage, 3 data, 4 incompatible modules.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rnnmod/rnnmod.hpp"

namespace fs = std::filesystem;
using namespace rnnmod;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitIncompatible = 4;

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage:
    case ErrorCategory::UnknownSlot:
    case ErrorCategory::UnknownLanguage: return kExitUsage;
    case ErrorCategory::IncompatibleInput:
    case ErrorCategory::VocabMismatch: return kExitIncompatible;
    default: return kExitData;
  }
}

template <typename E>
E parse_enum(const std::string& s, const std::map<std::string, E>& names, const std::string& what) {
  const auto it = names.find(s);
  if (it == names.end()) throw UsageError("unknown " + what + " '" + s + "'");
  return it->second;
}

const std::map<std::string, TaskKind> kTasks = {{"seqclass", TaskKind::SeqClass},
                                                 {"tagging", TaskKind::Tagging},
                                                 {"one_to_one", TaskKind::OneToOne},
                                                 {"one_to_many", TaskKind::OneToMany},
                                                 {"toy_translate", TaskKind::ToyTranslate}};
const std::map<std::string, LayerKind> kCells = {
    {"lstm", LayerKind::LSTM}, {"gru", LayerKind::GRU}, {"rnn", LayerKind::SimpleRNN}};
const std::map<std::string, Activation> kActs = {{"tanh", Activation::Tanh},
                                                 {"relu", Activation::ReLU},
                                                 {"sigmoid", Activation::Sigmoid},
                                                 {"softmax", Activation::Softmax}};
const std::map<std::string, Mode> kModeNames = {{"rolled", Mode::Rolled}, {"unrolled", Mode::Unrolled}};

// ---------------------------------------------------------------------------
// Composition manifests: {"kind": "composition", "parent": <model path>,
// "vocab": [...], "slots": [{"name": ..., "module": <path>}]}. Paths are
// relative to the manifest.

struct Manifest {
  std::optional<fs::path> parent;
  std::vector<std::string> vocab;
  std::vector<std::pair<std::string, fs::path>> slots;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

Manifest load_manifest(const fs::path& path) {
  const json j = load_json(path);
  if (j.value("kind", std::string()) != "composition") throw ParseError(path.string() + " is not a composition manifest");
  return format_detail::guarded([&] {
    Manifest m;
    const fs::path base = path.parent_path();
    if (j.contains("parent") && !j["parent"].is_null()) m.parent = resolve(base, j["parent"].get<std::string>());
    if (j.contains("vocab")) m.vocab = j["vocab"].get<std::vector<std::string>>();
    for (const json& s : j.at("slots")) m.slots.emplace_back(s.at("name").get<std::string>(), resolve(base, s.at("module")));
    return m;
  });
}

void save_manifest(const Manifest& m, const fs::path& path) {
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(base).generic_string(); };
  json j = {{"kind", "composition"}, {"format_version", kFormatVersion}};
  j["parent"] = m.parent ? json(rel(*m.parent)) : json(nullptr);
  if (!m.vocab.empty()) j["vocab"] = m.vocab;
  j["slots"] = json::array();
  for (const auto& [name, p] : m.slots) j["slots"].push_back({{"name", name}, {"module", rel(p)}});
  write_text_file(path, dump(j) + "\n");
}

ModuleSet load_set(const Manifest& m) {
  std::vector<ModuleSpec> mods;
  for (const auto& [name, p] : m.slots) mods.push_back(load_module(p));
  ModuleSet set = reuse_compose(std::move(mods), m.vocab);
  // Slot names follow the manifest (a replaced slot keeps its name).
  for (std::size_t k = 0; k < m.slots.size(); ++k) set.names[k] = m.slots[k].first;
  for (std::size_t a = 0; a < set.names.size(); ++a)
    for (std::size_t b = a + 1; b < set.names.size(); ++b)
      if (set.names[a] == set.names[b]) throw ShapeError("duplicate slot '" + set.names[a] + "' in manifest");
  return set;
}

// ---------------------------------------------------------------------------

struct Options {
  // gen
  std::string task = "seqclass";
  TaskParams params;
  std::uint64_t seed = 0;
  double test_fraction = 0.25;
  std::string out;
  // train
  std::string data;
  std::string cell = "lstm";
  ArchConfig arch;
  std::string cell_act = "tanh", dense_act = "tanh", head = "softmax";
  TrainConfig train;
  std::string optimizer = "adam";
  std::string model;
  // decompose
  std::string mode = "rolled";
  double threshold = DecompositionConfig{}.threshold;
  std::size_t samples = DecompositionConfig{}.sample_size;
  std::string activation = "auto";
  std::size_t jobs = 1;
  // evaluate / reuse / replace / inspect
  std::string manifest;
  std::vector<std::string> modules;
  std::vector<std::string> manifests;
  std::string report;
  std::string slot;
  std::string module;
  std::string vocab_from;
};

void print_report(const EvaluationReport& rep, const std::string& path) {
  std::cout << report_table(rep);
  if (!path.empty()) write_text_file(path, dump(report_to_json(rep)) + "\n");
}

int cmd_gen(const Options& o) {
  const TaskKind kind = parse_enum(o.task, kTasks, "task");
  if (o.test_fraction < 0.0 || o.test_fraction >= 1.0) throw UsageError("--test-fraction must be in [0, 1)");
  const Dataset all = gen_task(kind, o.params, o.seed);
  const auto [train, test] = split_dataset(all, o.test_fraction);
  fs::create_directories(o.out);
  save_dataset(train, fs::path(o.out) / "train.json");
  save_dataset(test, fs::path(o.out) / "test.json");
  std::cout << "wrote " << train.samples.size() << " training and " << test.samples.size() << " test samples to "
            << o.out << "\n";
  return 0;
}

int cmd_train(Options o) {
  o.arch.cell = parse_enum(o.cell, kCells, "cell");
  o.arch.cell_activation = parse_enum(o.cell_act, kActs, "activation");
  o.arch.dense_activation = parse_enum(o.dense_act, kActs, "activation");
  o.arch.head = parse_enum(o.head, kActs, "activation");
  o.train.optimizer = o.optimizer == "sgd" ? Optimizer::SGD : Optimizer::Adam;
  if (o.optimizer != "sgd" && o.optimizer != "adam") throw UsageError("--optimizer must be adam or sgd");
  const Dataset data = load_dataset(o.data);
  ModelSpec m = build_model(o.arch, data, o.seed);
  o.train.seed = o.seed;
  o.train.loss = default_loss(m);
  TrainLog log;
  m = train(std::move(m), data, o.train, &log);
  save_model(m, o.out);
  std::cout << "trained " << to_string(m.io_type) << " model, final loss "
            << (log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()) << ", id " << model_id(m) << "\n";
  return 0;
}

int cmd_decompose(const Options& o) {
  DecompositionConfig cfg;
  cfg.mode = parse_enum(o.mode, kModeNames, "mode");
  cfg.threshold = o.threshold;
  cfg.sample_size = o.samples;
  cfg.seed = o.seed;
  cfg.jobs = o.jobs;
  const ModelSpec model = load_model(o.model);
  const Dataset data = load_dataset(o.data);
  if (o.activation == "auto") cfg.activation = infer_activation_kind(model);
  else if (o.activation == "logistic") cfg.activation = ActivationKind::Logistic;
  else if (o.activation == "relu") cfg.activation = ActivationKind::ReLU;
  else throw UsageError("--activation must be auto, logistic or relu");

  const auto modules = decompose(model, data, cfg);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  Manifest man;
  man.parent = fs::path(o.model);
  for (const ModuleSpec& mod : modules) {
    const std::string name = slot_name(mod);
    const fs::path p = dir / ("module_" + name + ".json");
    save_module(mod, p);
    man.slots.emplace_back(name, p);
    std::cout << name << ": removed " << mod.removal_fraction << ", JI " << jaccard_index(model, mod) << "\n";
  }
  save_manifest(man, dir / "manifest.json");
  return 0;
}

int cmd_evaluate(const Options& o) {
  const Manifest man = load_manifest(o.manifest);
  const ModuleSet set = load_set(man);
  const std::string model_path = !o.model.empty() ? o.model : man.parent ? man.parent->string() : std::string();
  if (model_path.empty()) throw UsageError("no --model given and the manifest names no parent");
  print_report(evaluate(load_model(model_path), set, load_dataset(o.data)), o.report);
  return 0;
}

// Builds a set from --module files and/or the slots of --manifest files.
int cmd_reuse(const Options& o) {
  Manifest man;
  for (const std::string& p : o.manifests) {
    const Manifest part = load_manifest(p);
    for (const auto& s : part.slots) man.slots.push_back(s);
    if (!man.parent) man.parent = part.parent;
  }
  for (const std::string& p : o.modules) man.slots.emplace_back(slot_name(load_module(p)), fs::path(p));
  if (man.slots.empty()) throw UsageError("reuse needs at least one --module or --manifest");
  if (!o.vocab_from.empty()) man.vocab = load_model(o.vocab_from).vocab;
  if (!o.model.empty()) man.parent = fs::path(o.model);
  const ModuleSet set = load_set(man);
  save_manifest(man, o.out);
  std::cout << "composed " << set.size() << " " << to_string(set.family) << " modules:";
  for (const auto& n : set.names) std::cout << " " << n;
  std::cout << "\n";
  if (!o.data.empty()) {
    if (!man.parent) throw UsageError("evaluation needs --model");
    print_report(evaluate(load_model(*man.parent), set, load_dataset(o.data)), o.report);
  }
  return 0;
}

int cmd_replace(const Options& o) {
  Manifest man = load_manifest(o.manifest);
  const ModuleSet set = load_set(man);
  const ModuleSet swapped = replace_module(set, o.slot, load_module(o.module));
  for (auto& s : man.slots)
    if (s.first == o.slot) s.second = fs::path(o.module);
  save_manifest(man, o.out);
  std::cout << "slot " << o.slot << " now served by " << o.module << "\n";
  if (!o.data.empty()) {
    const std::string model_path = !o.model.empty() ? o.model : man.parent ? man.parent->string() : std::string();
    if (model_path.empty()) throw UsageError("evaluation needs --model");
    print_report(evaluate(load_model(model_path), swapped, load_dataset(o.data)), o.report);
  }
  return 0;
}

void describe(const ModuleSpec& mod, const ModelSpec* parent) {
  std::cout << slot_name(mod) << ": mode " << to_string(mod.mode) << ", io " << to_string(mod.base.io_type)
            << ", dominant class " << mod.dominant_class << ", channeled " << (mod.channeled ? "yes" : "no")
            << ", removed " << mod.removal_fraction;
  if (parent && model_id(*parent) == mod.parent_model_id) std::cout << ", JI " << jaccard_index(*parent, mod);
  std::cout << "\n";
}

int cmd_inspect(const Options& o) {
  std::optional<ModelSpec> parent;
  if (!o.model.empty()) parent = load_model(o.model);
  if (!o.manifest.empty()) {
    const Manifest man = load_manifest(o.manifest);
    if (!parent && man.parent) parent = load_model(*man.parent);
    for (const auto& [name, p] : man.slots) {
      std::cout << "[" << name << "] ";
      describe(load_module(p), parent ? &*parent : nullptr);
    }
  }
  for (const std::string& p : o.modules) describe(load_module(p), parent ? &*parent : nullptr);
  if (o.manifest.empty() && o.modules.empty()) throw UsageError("inspect needs --manifest or --module");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decompose recurrent networks into per-class modules"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen", "generate a synthetic train/test dataset");
  gen->add_option("--task", o.task, "seqclass, tagging, one_to_one, one_to_many, toy_translate")->capture_default_str();
  gen->add_option("--samples", o.params.samples)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--timesteps", o.params.timesteps)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--classes", o.params.classes)->capture_default_str()->check(CLI::Range(2, 1000));
  gen->add_option("--vocab", o.params.vocab)->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--skew", o.params.skew)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  gen->add_flag("--positional,!--no-positional", o.params.positional, "tagging labels shift with the timestep");
  gen->add_option("--test-fraction", o.test_fraction)->capture_default_str();
  gen->add_option("--seed", o.seed)->capture_default_str();
  gen->add_option("--out", o.out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--data", o.data)->required();
  tr->add_option("--cell", o.cell, "lstm, gru, rnn")->capture_default_str();
  tr->add_option("--units", o.arch.units)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--embed", o.arch.embed_dim)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--depth", o.arch.depth)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--dense", o.arch.dense_units, "hidden Dense units (0: none)")->capture_default_str();
  tr->add_option("--cell-activation", o.cell_act, "SimpleRNN activation")->capture_default_str();
  tr->add_option("--dense-activation", o.dense_act)->capture_default_str();
  tr->add_option("--head", o.head, "softmax or sigmoid")->capture_default_str();
  tr->add_option("--epochs", o.train.epochs)->capture_default_str();
  tr->add_option("--batch", o.train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  tr->add_option("--lr", o.train.learning_rate)->capture_default_str()->check(CLI::NonNegativeNumber);
  tr->add_option("--optimizer", o.optimizer, "adam or sgd")->capture_default_str();
  tr->add_option("--seed", o.seed)->capture_default_str();
  tr->add_option("--out", o.out, "model file")->required();

  auto* dec = app.add_subcommand("decompose", "decompose a model into per-class modules");
  dec->add_option("--model", o.model)->required();
  dec->add_option("--data", o.data, "training dataset used for concern identification")->required();
  dec->add_option("--mode", o.mode, "rolled or unrolled")->capture_default_str();
  dec->add_option("--threshold", o.threshold)->capture_default_str()->check(CLI::Range(0.0, 1.0));
  dec->add_option("--samples", o.samples, "positive samples per concern")->capture_default_str()->check(CLI::PositiveNumber);
  dec->add_option("--activation", o.activation, "auto, logistic or relu")->capture_default_str();
  dec->add_option("--seed", o.seed)->capture_default_str();
  dec->add_option("--jobs", o.jobs)->capture_default_str()->check(CLI::PositiveNumber);
  dec->add_option("--out", o.out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "compare a composed set with its parent model");
  ev->add_option("--manifest", o.manifest)->required();
  ev->add_option("--model", o.model, "monolithic baseline (default: manifest parent)");
  ev->add_option("--data", o.data)->required();
  ev->add_option("--report", o.report, "JSON report path");

  auto* ru = app.add_subcommand("reuse", "compose modules from one or more decompositions");
  ru->add_option("--module", o.modules, "module file (repeatable)");
  ru->add_option("--manifest", o.manifests, "take every slot of a manifest (repeatable)");
  ru->add_option("--vocab-from", o.vocab_from, "model whose vocabulary becomes the shared input vocabulary");
  ru->add_option("--model", o.model, "baseline model for evaluation");
  ru->add_option("--data", o.data, "evaluate on this dataset");
  ru->add_option("--report", o.report);
  ru->add_option("--out", o.out, "manifest to write")->required();

  auto* rp = app.add_subcommand("replace", "serve one slot of a composition by another module");
  rp->add_option("--manifest", o.manifest)->required();
  rp->add_option("--slot", o.slot)->required();
  rp->add_option("--module", o.module)->required();
  rp->add_option("--model", o.model);
  rp->add_option("--data", o.data);
  rp->add_option("--report", o.report);
  rp->add_option("--out", o.out, "manifest to write")->required();

  auto* in = app.add_subcommand("inspect", "summarize modules");
  in->add_option("--manifest", o.manifest);
  in->add_option("--module", o.modules);
  in->add_option("--model", o.model, "parent model for JI");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*tr) return cmd_train(o);
    if (*dec) return cmd_decompose(o);
    if (*ev) return cmd_evaluate(o);
    if (*ru) return cmd_reuse(o);
    if (*rp) return cmd_replace(o);
    if (*in) return cmd_inspect(o);
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[Io]: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
