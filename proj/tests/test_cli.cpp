/* Copyright 2026 The embfuse Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "embfuse/cli.hpp"
#include "embfuse/error.hpp"
#include "embfuse/optim.hpp"
#include "support.hpp"

using namespace embfuse;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string fixture(const std::string& name) { return (testing::fixture_dir() / name).string(); }

}  // namespace

TEST_CASE("help and unknown subcommands") {
  const auto help = run({"--help"});
  CHECK(help.code == 0);
  for (const auto name : cli::kSubcommands) {
    CHECK(help.out.find(std::string(name)) != std::string::npos);
  }
  const auto bad = run({"frobnicate"});
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("ERROR unknown-command:", 0) == 0);
  CHECK(run({}).code == 1);
  CHECK(run({"train", "--no-such-flag"}).code == 1);
}

TEST_CASE("validation and runtime errors map to exit codes") {
  const auto missing = run({"train", "--dataset", "/nonexistent/ds", "--fused", "x"});
  CHECK(missing.code == 1);
  CHECK(missing.err.rfind("ERROR ", 0) == 0);
  CHECK(run({"inspect", fixture("emb_a.glove.txt"), "--format", "bogus"}).code == 1);

  const auto dir = testing::scratch_dir("cli_errors");
  std::ofstream(dir / "broken.txt") << "3 2\nfoo 1 2\nbar 1\n";
  const auto broken = run({"inspect", (dir / "broken.txt").string(), "--format", "glove"});
  CHECK(broken.code == 2);
  CHECK(broken.err.find("ERROR ") == 0);
}

TEST_CASE("config files round trip") {
  cli::RunConfig c;
  c.threads = 3;
  c.train.lr = 0.1 + 0.2;
  c.train.optimizer = "adam";
  c.train.model.trainable_embeddings = true;
  c.sweep.lr = "0.0125";
  c.sweep.hyper.beta2 = 0.9995;
  c.prepare.no_title = true;
  c.fuse.unknown_fill = -1e-300;
  const auto text = cli::serialize_run_config(c);
  CHECK(text.find("[train]") != std::string::npos);
  CHECK(cli::parse_run_config(text) == c);
  CHECK(cli::serialize_run_config(cli::parse_run_config(text)) == text);
  CHECK(cli::parse_run_config("") == cli::RunConfig{});

  try {
    cli::parse_run_config("[train]\nlearning_speed=3\n");
    FAIL("accepted an unknown key");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidConfig);
  }
}

TEST_CASE("write-config captures command line overrides") {
  const auto dir = testing::scratch_dir("cli_config");
  const auto base = dir / "base.ini";
  std::ofstream(base) << "[train]\nlr=0.5\nepochs=4\n";
  const auto written = dir / "resolved.ini";
  const auto r = run({"--config", base.string(), "--write-config", written.string(), "train",
                      "--epochs", "9"});
  REQUIRE(r.code == 0);
  const auto c = cli::parse_run_config(slurp(written));
  CHECK(c.train.lr == 0.5);
  CHECK(c.train.epochs == 9);
  CHECK_FALSE(fs::exists(dir / "ckpt"));
}

TEST_CASE("inspect reports dimensions") {
  const auto r = run({"inspect", fixture("emb_c.bin"), "--format", "w2v-bin"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("dim: 8") != std::string::npos);
  CHECK(r.out.find("format: w2v-bin") != std::string::npos);
}

TEST_CASE("pipeline from reviews to charts") {
  const auto dir = testing::scratch_dir("cli_pipeline");
  const auto ds = (dir / "smoke.ds").string();
  const auto p = [&](const std::string& name) { return (dir / name).string(); };

  auto r = run({"prepare", "--csv", fixture("corpus_smoke.csv"), "--out", ds, "--seed", "5",
                "--max-len", "24"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("train:") != std::string::npos);

  r = run({"fuse", "--emb1", fixture("emb_a.glove.txt") + ":glove", "--emb2",
           fixture("emb_b.vec") + ":fasttext", "--dataset", ds, "--out", p("ab.bin")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("ab.bin.report.csv")));
  r = run({"fuse", "--emb1", fixture("emb_a.glove.txt") + ":glove", "--emb2",
           fixture("emb_c.bin") + ":w2v-bin", "--dataset", ds, "--out", p("ac.bin"), "--report",
           p("ac.csv")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("ac.csv")));

  const std::vector<std::string> tiny{"--lstm-units", "5", "--gru-units", "4", "--batch", "8"};
  const auto with_tiny = [&](std::vector<std::string> args) {
    args.insert(args.end(), tiny.begin(), tiny.end());
    return args;
  };

  r = run(with_tiny({"lr-find", "--dataset", ds, "--fused", p("ab.bin"), "--optimizer", "adam",
                     "--grid", "1e-4,1e-3,1e-2", "--epochs", "1", "--out", p("lr.csv")}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("best_lr:") != std::string::npos);
  CHECK(fs::exists(p("lr.svg")));
  std::ifstream lr_in(p("lr.csv"));
  CHECK(read_lr_table_csv(lr_in).size() == 3);

  r = run(with_tiny({"train", "--dataset", ds, "--fused", p("ab.bin"), "--optimizer", "sgd",
                     "--lr", "0.1", "--epochs", "2", "--seed", "7", "--out", p("model.ckpt")}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("model.ckpt")));
  CHECK(fs::exists(p("model.ckpt.history.svg")));
  std::ifstream hist_in(p("model.ckpt.history.csv"));
  const auto hist = read_history_csv(hist_in);
  REQUIRE(hist.size() == 1);
  CHECK(hist[0].epochs.size() == 2);

  r = run({"eval", "--dataset", ds, "--checkpoint", p("model.ckpt"), "--split", "all", "--out",
           p("confusion.csv")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("accuracy:") != std::string::npos);
  CHECK(fs::exists(p("confusion.csv")));

  std::ofstream(p("pairs.csv")) << "name,fused\nglove+fasttext,ab.bin\nglove+w2v,ac.bin\n";
  r = run(with_tiny({"sweep", "--dataset", ds, "--pairs", p("pairs.csv"), "--lr", "auto",
                     "--grid", "1e-3,1e-2", "--lr-epochs", "1", "--epochs", "2",
                     "--optimizers", "sgd,adam", "--out-dir", p("sweep")}));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("sweep/lr_search.csv")));
  CHECK(fs::exists(p("sweep/lr_search.svg")));
  CHECK(fs::exists(p("sweep/glove_fasttext.svg")));
  CHECK(fs::exists(p("sweep/glove_w2v.svg")));
  std::ifstream sweep_in(p("sweep/history.csv"));
  CHECK(read_history_csv(sweep_in).size() == 4);

  r = run({"report", "--history", p("sweep/history.csv"), "--out-dir", p("redrawn"), "--metric",
           "test", "--lr-table", p("lr.csv"), "--lr-out", p("redrawn/lr.svg")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(p("redrawn/lr.svg")));
  std::size_t charts = 0;
  for (const auto& e : fs::directory_iterator(p("redrawn"))) charts += e.path().extension() == ".svg";
  CHECK(charts == 3);
}

TEST_CASE("sweep manifest errors") {
  const auto dir = testing::scratch_dir("cli_manifest");
  std::ofstream(dir / "pairs.csv") << "name,fused\nx,missing.bin\n";
  std::ofstream(dir / "ds") << "";
  const auto r = run({"sweep", "--dataset", (dir / "ds").string(), "--pairs",
                      (dir / "pairs.csv").string(), "--lr", "0.1", "--out-dir",
                      (dir / "out").string()});
  CHECK(r.code != 0);
  CHECK(r.err.rfind("ERROR ", 0) == 0);
}

TEST_CASE("binary exit status") {
  const std::string bin = EMBFUSE_BINARY;
  CHECK(std::system((bin + " --help > /dev/null").c_str()) == 0);
  const int status = std::system((bin + " nope 2> /dev/null").c_str());
  CHECK(WEXITSTATUS(status) == 1);
}
