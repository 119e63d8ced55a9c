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

#ifndef EMBFUSE_CLI_HPP_
#define EMBFUSE_CLI_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace embfuse::cli {

struct InspectArgs {
  std::string file;
  std::string format = "glove";
  bool operator==(const InspectArgs&) const = default;
};

struct PrepareArgs {
  std::string csv;
  std::string out;
  std::uint64_t seed = 0;
  std::string buckets = "1-2/3/4-5";
  bool no_title = false;
  std::size_t max_len = 60;
  double train_fraction = 0.9;
  std::string lemmas;  // optional `token TAB lemma` file
  bool operator==(const PrepareArgs&) const = default;
};

struct FuseArgs {
  std::string emb1;  // path:format
  std::string emb2;
  std::string dataset;
  std::string out;
  std::string report;
  std::string chain = "as-is,lower,capitalized,lemma";
  double unknown_fill = 0.0;
  bool operator==(const FuseArgs&) const = default;
};

struct ModelArgs {
  std::size_t lstm_units = 512;
  std::size_t gru_units = 256;
  double spatial_dropout = 0.2;
  double dropout = 0.3;
  bool trainable_embeddings = false;
  bool operator==(const ModelArgs&) const = default;
};

struct HyperArgs {
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double adagrad_eps = 1e-10;
  double rho = 0.95;
  double adadelta_eps = 1e-6;
  bool operator==(const HyperArgs&) const = default;
};

struct LrFindArgs {
  std::string dataset;
  std::string fused;
  std::string optimizer = "adam";
  std::string grid = "1e-8:1e-2:log7";
  std::size_t epochs = 3;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::string out;    // loss table CSV
  std::string chart;  // defaults to out with .svg
  ModelArgs model;
  HyperArgs hyper;
  bool operator==(const LrFindArgs&) const = default;
};

struct TrainArgs {
  std::string dataset;
  std::string fused;
  std::string optimizer = "sgd";
  double lr = 0.01;
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::string out;      // checkpoint
  std::string history;  // defaults to <out>.history.csv
  ModelArgs model;
  HyperArgs hyper;
  bool operator==(const TrainArgs&) const = default;
};

struct SweepArgs {
  std::string dataset;
  std::string pairs;  // CSV manifest `name,fused`
  std::string lr = "auto";
  std::size_t epochs = 20;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string optimizers = "sgd,sgd-momentum,adagrad,adadelta,adam";
  std::string grid = "1e-8:1e-2:log7";
  std::size_t lr_epochs = 3;
  ModelArgs model;
  HyperArgs hyper;
  bool operator==(const SweepArgs&) const = default;
};

struct EvalArgs {
  std::string dataset;
  std::string checkpoint;
  std::string split = "test";
  std::string out;  // optional confusion CSV
  bool operator==(const EvalArgs&) const = default;
};

struct ReportArgs {
  std::string history;
  std::string out_dir;
  std::string metric = "train";
  std::string lr_table;
  std::string lr_out;
  bool operator==(const ReportArgs&) const = default;
};

/// Every flag of every subcommand. In a config file the subcommand flags
/// live under `[inspect]`, `[train]` and so on, keyed by the long flag
/// name; command-line values win over the file.
struct RunConfig {
  unsigned threads = 0;  // 0: hardware concurrency
  InspectArgs inspect;
  PrepareArgs prepare;
  FuseArgs fuse;
  LrFindArgs lr_find;
  TrainArgs train;
  SweepArgs sweep;
  EvalArgs eval;
  ReportArgs report;
  bool operator==(const RunConfig&) const = default;
};

inline constexpr std::string_view kSubcommands[] = {"inspect", "prepare", "fuse", "lr-find",
                                                    "train",   "sweep",   "eval", "report"};

/// Reads a config file body. Unknown keys throw kInvalidConfig.
RunConfig parse_run_config(std::string_view text);
/// Config file body holding every key of `config`.
std::string serialize_run_config(const RunConfig& config);

/// Runs `embfuse <subcommand> ...`. Returns 0 on success, 1 on a
/// validation error, 2 on a runtime error; errors are written to `err` as
/// a single `ERROR <code>: <message>` line.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
/// `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace embfuse::cli

#endif  // EMBFUSE_CLI_HPP_
