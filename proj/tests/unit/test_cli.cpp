// Copyright 2026 The rnnmod Authors
// SPDX-License-Identifier: Apache-2.0
//
// Runs the rnnmod executable end to end.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../common/fixtures.hpp"
#include "rnnmod/rnnmod.hpp"

#ifndef RNNMOD_CLI
#error "RNNMOD_CLI must name the rnnmod executable"
#endif

using namespace rnnmod;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("rnnmod_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + RNNMOD_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  static std::string fixture(const std::string& name, const std::string& file) {
    return (fx::fixture_dir() / "trained" / name / file).string();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpSucceeds) {
  const Result r = run("--help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("decompose"), std::string::npos);
}

TEST_F(Cli, FullPipelineAtZeroThresholdLosesNothing) {
  ASSERT_EQ(run("gen --task seqclass --samples 300 --timesteps 5 --seed 2 --out " + path("data")).code, 0);
  ASSERT_EQ(run("train --data " + path("data/train.json") + " --units 12 --embed 8 --epochs 6 --out " +
                path("model.json")).code, 0);
  const Result dec = run("decompose --model " + path("model.json") + " --data " + path("data/train.json") +
                      " --threshold 0 --out " + path("mods"));
  ASSERT_EQ(dec.code, 0) << dec.err;
  EXPECT_TRUE(fs::exists(path("mods/module_A.json")));
  const Result ev = run("evaluate --manifest " + path("mods/manifest.json") + " --data " + path("data/test.json") +
                     " --report " + path("report.json"));
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json rep = load_json(path("report.json"));
  EXPECT_EQ(rep.at("delta").get<double>(), 0.0);
  EXPECT_EQ(rep.at("jaccard").get<double>(), 1.0);
  EXPECT_NE(ev.out.find("overall"), std::string::npos);
}

TEST_F(Cli, DecomposeFixtureAndInspect) {
  const Result dec = run("decompose --model " + fixture("gru_m2o", "model.json") + " --data " +
                      fixture("gru_m2o", "train.json") + " --out " + path("mods") + " --jobs 3");
  ASSERT_EQ(dec.code, 0) << dec.err;
  const ModuleSpec mod = load_module(path("mods/module_B.json"));
  EXPECT_EQ(mod.dominant_class, 1u);
  EXPECT_GT(mod.removal_fraction, 0.0);
  const Result in = run("inspect --manifest " + path("mods/manifest.json"));
  ASSERT_EQ(in.code, 0) << in.err;
  EXPECT_NE(in.out.find("JI"), std::string::npos);
  EXPECT_NE(in.out.find("dominant class 2"), std::string::npos);
}

TEST_F(Cli, ReuseAcrossInputFamiliesExitsFour) {
  ASSERT_EQ(run("decompose --model " + fixture("lstm_m2o", "model.json") + " --data " +
                fixture("lstm_m2o", "train.json") + " --samples 20 --out " + path("many")).code, 0);
  ASSERT_EQ(run("decompose --model " + fixture("lstm_o2o", "model.json") + " --data " +
                fixture("lstm_o2o", "train.json") + " --samples 20 --out " + path("one")).code, 0);
  const Result r = run("reuse --module " + path("many/module_A.json") + " --module " + path("one/module_B.json") +
                    " --out " + path("bad.json"));
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("error[IncompatibleInput]"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("bad.json")));
}

TEST_F(Cli, ReusePairAndReplaceSlot) {
  ASSERT_EQ(run("decompose --model " + fixture("weak_lstm_m2o", "model.json") + " --data " +
                fixture("weak_lstm_m2o", "train.json") + " --out " + path("weak")).code, 0);
  ASSERT_EQ(run("decompose --model " + fixture("lstm_m2o", "model.json") + " --data " +
                fixture("lstm_m2o", "train.json") + " --out " + path("strong")).code, 0);
  const Result pair = run("reuse --module " + path("strong/module_A.json") + " --module " +
                       path("strong/module_C.json") + " --model " + fixture("lstm_m2o", "model.json") +
                       " --data " + fixture("lstm_m2o", "test.json") + " --report " + path("pair.json") +
                       " --out " + path("pair_manifest.json"));
  ASSERT_EQ(pair.code, 0) << pair.err;
  EXPECT_EQ(load_json(path("pair.json")).at("per_class").size(), 2u);

  const Result rp = run("replace --manifest " + path("weak/manifest.json") + " --slot A --module " +
                     path("strong/module_A.json") + " --data " + fixture("weak_lstm_m2o", "test.json") +
                     " --report " + path("swap.json") + " --out " + path("swapped.json"));
  ASSERT_EQ(rp.code, 0) << rp.err;
  const json man = load_json(path("swapped.json"));
  EXPECT_EQ(man.at("slots").at(0).at("name"), "A");
  EXPECT_NE(man.at("slots").at(0).at("module").get<std::string>().find("strong"), std::string::npos);
  EXPECT_EQ(run("evaluate --manifest " + path("swapped.json") + " --data " + fixture("weak_lstm_m2o", "test.json")).code,
            0);
}

TEST_F(Cli, UsageErrorsExitTwoWithoutWriting) {
  const std::string base = "decompose --model " + fixture("rnn_m2o", "model.json") + " --data " +
                           fixture("rnn_m2o", "train.json") + " --out " + path("x");
  EXPECT_EQ(run(base + " --threshold 1.5").code, 2);
  EXPECT_EQ(run(base + " --samples 0").code, 2);
  EXPECT_EQ(run(base + " --mode sideways").code, 2);
  EXPECT_FALSE(fs::exists(path("x")));
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("gen --task nope --out " + path("g")).code, 2);
}

TEST_F(Cli, UnknownSlotExitsTwo) {
  ASSERT_EQ(run("decompose --model " + fixture("rnn_m2o", "model.json") + " --data " +
                fixture("rnn_m2o", "train.json") + " --samples 10 --out " + path("m")).code, 0);
  const Result r = run("replace --manifest " + path("m/manifest.json") + " --slot Q --module " +
                    path("m/module_A.json") + " --out " + path("o.json"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error[UnknownSlot]"), std::string::npos);
}

TEST_F(Cli, BadInputsExitThree) {
  const Result missing = run("evaluate --manifest " + path("nope.json") + " --data " + fixture("rnn_m2o", "test.json"));
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.err.find("error[IoError]"), std::string::npos);
  {
    std::ofstream(path("broken.json")) << "{\"format_version\": 1, \"kind\": \"model\", ";
  }
  const Result broken = run("decompose --model " + path("broken.json") + " --data " + fixture("rnn_m2o", "train.json") +
                         " --out " + path("y"));
  EXPECT_EQ(broken.code, 3);
  EXPECT_NE(broken.err.find("error[ParseError]"), std::string::npos);
  const Result mode = run("decompose --model " + fixture("rnn_m2o", "model.json") + " --data " +
                       fixture("rnn_m2m", "train.json") + " --out " + path("z"));
  EXPECT_EQ(mode.code, 3);
  EXPECT_NE(mode.err.find("error[ModeError]"), std::string::npos);
}
