// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Loading of the checked-in fixtures shared by unit and acceptance tests.

#pragma once

#include <filesystem>
#include <string>

#include "rnnmod/rnnmod.hpp"

#ifndef RNNMOD_FIXTURE_DIR
#error "RNNMOD_FIXTURE_DIR must point at tests/fixtures"
#endif

namespace rnnmod::fx {

inline std::filesystem::path fixture_dir() { return RNNMOD_FIXTURE_DIR; }

struct Fixture {
  std::string name;
  ModelSpec model;
  Dataset train;
  Dataset test;
};

inline Fixture load_fixture(const std::string& name) {
  const auto dir = fixture_dir() / "trained" / name;
  return {name, load_model(dir / "model.json"), load_dataset(dir / "train.json"), load_dataset(dir / "test.json")};
}

inline json load_oracle(const std::string& file) { return load_json(fixture_dir() / "oracle" / file); }

/// Single-step reference probe as a layer plus inputs.
struct CellProbe {
  LayerSpec layer;
  Vector x;
  CellState prev;
  CellState want;
};

inline CellProbe cell_probe(const json& p) {
  CellProbe c;
  const std::string kind = p.at("cell");
  c.layer.kind = kind == "LSTM" ? LayerKind::LSTM : kind == "GRU" ? LayerKind::GRU : LayerKind::SimpleRNN;
  c.layer.units = p.at("units");
  c.layer.activation = p.at("activation") == "relu" ? Activation::ReLU : Activation::Tanh;
  c.layer.params.W = format_detail::matrix_from_json(p.at("W"));
  c.layer.params.U = format_detail::matrix_from_json(p.at("U"));
  c.layer.params.b = p.at("b").get<Vector>();
  c.x = p.at("x").get<Vector>();
  c.prev.h = p.at("h").get<Vector>();
  c.want.h = p.at("h_out").get<Vector>();
  if (p.contains("c")) {
    c.prev.c = p.at("c").get<Vector>();
    c.want.c = p.at("c_out").get<Vector>();
  }
  return c;
}

/// Largest deviation of one probe from its recorded output.
inline double probe_error(const CellProbe& c) {
  const CellState got = cell_step(c.layer, c.layer.params, c.x, c.prev);
  double err = max_abs_diff(got.h, c.want.h);
  if (!c.want.c.empty()) err = std::max(err, max_abs_diff(got.c, c.want.c));
  return err;
}

/// Largest deviation of a fixture's recorded per-layer outputs from ours.
inline double model_error(const ModelSpec& m, const json& rec) { return replay_deviation(m, rec.at("samples")); }

}  // namespace rnnmod::fx
