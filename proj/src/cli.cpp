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

#include "embfuse/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "embfuse/corpus.hpp"
#include "embfuse/embedding_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/fusion.hpp"
#include "embfuse/model.hpp"
#include "embfuse/optim.hpp"
#include "embfuse/report.hpp"

namespace embfuse::cli {
namespace fs = std::filesystem;
namespace {

// Records every bound field so the resolved configuration can be written
// back with full precision.
class Binder {
 public:
  Binder(CLI::App* app, std::string section, std::vector<std::pair<std::string, std::function<std::string()>>>& keys)
      : app_(app), section_(std::move(section)), keys_(keys) {}

  template <typename T>
  CLI::Option* option(const std::string& name, T& field, const std::string& help) {
    record(name, [&field] { return render(field); });
    return app_->add_option("--" + name, field, help);
  }

  CLI::Option* flag(const std::string& name, bool& field, const std::string& help) {
    record(name, [&field] { return std::string(field ? "true" : "false"); });
    return app_->add_flag("--" + name + "{true}", field, help);
  }

  CLI::Option* positional(const std::string& name, std::string& field, const std::string& help) {
    record(name, [&field] { return render(field); });
    return app_->add_option(name, field, help);
  }

 private:
  static std::string render(const std::string& v) {
    std::string out = "\"";
    for (const char c : v) {
      if (c == '"' || c == '\\') out += '\\';
      out += c;
    }
    return out + '"';
  }
  static std::string render(double v) { return fmt::format("{}", v); }
  template <typename T>
  static std::string render(T v) {
    return fmt::format("{}", v);
  }

  void record(const std::string& name, std::function<std::string()> fn) {
    keys_.emplace_back(section_.empty() ? name : section_ + "." + name, std::move(fn));
  }

  CLI::App* app_;
  std::string section_;
  std::vector<std::pair<std::string, std::function<std::string()>>>& keys_;
};

void add_model_flags(Binder& b, ModelArgs& m) {
  b.option("lstm-units", m.lstm_units, "BiLSTM units per direction");
  b.option("gru-units", m.gru_units, "BiGRU units per direction");
  b.option("spatial-dropout", m.spatial_dropout, "Channel dropout on embeddings");
  b.option("dropout", m.dropout, "Dropout after each recurrent layer");
  b.flag("trainable-embeddings", m.trainable_embeddings, "Update the embedding matrix too");
}

void add_hyper_flags(Binder& b, HyperArgs& h) {
  b.option("momentum", h.momentum, "sgd-momentum coefficient");
  b.option("beta1", h.beta1, "Adam first-moment decay");
  b.option("beta2", h.beta2, "Adam second-moment decay");
  b.option("adam-eps", h.adam_eps, "Adam epsilon");
  b.option("adagrad-eps", h.adagrad_eps, "Adagrad epsilon");
  b.option("rho", h.rho, "Adadelta decay");
  b.option("adadelta-eps", h.adadelta_eps, "Adadelta epsilon");
}

struct CommandLine {
  CLI::App app{"Embedding fusion and recurrent sentiment training", "embfuse"};
  std::string write_config;
  std::vector<CLI::App*> subs;
  std::vector<std::pair<std::string, std::function<std::string()>>> keys;

  CLI::App* sub(const std::string& name, const std::string& help) {
    subs.push_back(app.add_subcommand(name, help));
    return subs.back();
  }

  explicit CommandLine(RunConfig& c) {
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "Read flags from a config file (INI or TOML)");
    app.allow_config_extras(CLI::config_extras_mode::error);
    Binder top(&app, "", keys);
    top.option("threads", c.threads, "Worker threads, 0 for all cores");
    app.add_option("--write-config", write_config,
                   "Write the resolved configuration to this file and exit")
        ->configurable(false);

    {
      Binder b(sub("inspect", "Print dim, vocabulary size and mean-vector norm"), "inspect", keys);
      b.positional("file", c.inspect.file, "Embedding file");
      b.option("format", c.inspect.format, "glove | w2v-bin | fasttext");
    }
    {
      Binder b(sub("prepare", "Filter, label, tokenize, encode and split a review CSV"), "prepare",
               keys);
      b.option("csv", c.prepare.csv, "Review CSV");
      b.option("out", c.prepare.out, "Dataset file to write");
      b.option("seed", c.prepare.seed, "Split seed");
      b.option("buckets", c.prepare.buckets, "Star buckets bad/neutral/good");
      b.flag("no-title", c.prepare.no_title, "Ignore review titles");
      b.option("max-len", c.prepare.max_len, "Sequence length");
      b.option("train-fraction", c.prepare.train_fraction, "Share of each class in train");
      b.option("lemmas", c.prepare.lemmas, "Lemma table, token TAB lemma per line");
    }
    {
      Binder b(sub("fuse", "Fuse two embeddings over the corpus vocabulary"), "fuse", keys);
      b.option("emb1", c.fuse.emb1, "First (larger) embedding, path:format");
      b.option("emb2", c.fuse.emb2, "Second embedding, path:format");
      b.option("dataset", c.fuse.dataset, "Prepared dataset");
      b.option("out", c.fuse.out, "Fused word2vec binary to write");
      b.option("report", c.fuse.report, "Coverage CSV (default <out>.report.csv)");
      b.option("chain", c.fuse.chain, "Candidate keys in lookup order");
      b.option("unknown-fill", c.fuse.unknown_fill, "Value of unresolved rows");
    }
    {
      Binder b(sub("lr-find", "Learning-rate range search"), "lr-find", keys);
      b.option("dataset", c.lr_find.dataset, "Prepared dataset");
      b.option("fused", c.lr_find.fused, "Fused embedding (w2v-bin)");
      b.option("optimizer", c.lr_find.optimizer, "Optimizer kind");
      b.option("grid", c.lr_find.grid, "lo:hi:logN or a comma list");
      b.option("epochs", c.lr_find.epochs, "Epochs per learning rate");
      b.option("batch", c.lr_find.batch, "Batch size");
      b.option("seed", c.lr_find.seed, "Seed");
      b.option("out", c.lr_find.out, "Loss table CSV");
      b.option("chart", c.lr_find.chart, "Loss curve SVG (default <out> with .svg)");
      add_model_flags(b, c.lr_find.model);
      add_hyper_flags(b, c.lr_find.hyper);
    }
    {
      Binder b(sub("train", "Train the BiLSTM-BiGRU classifier"), "train", keys);
      b.option("dataset", c.train.dataset, "Prepared dataset");
      b.option("fused", c.train.fused, "Fused embedding (w2v-bin)");
      b.option("optimizer", c.train.optimizer, "Optimizer kind");
      b.option("lr", c.train.lr, "Learning rate");
      b.option("epochs", c.train.epochs, "Epochs");
      b.option("batch", c.train.batch, "Batch size");
      b.option("seed", c.train.seed, "Seed");
      b.option("out", c.train.out, "Checkpoint to write");
      b.option("history", c.train.history, "History CSV (default <out>.history.csv)");
      add_model_flags(b, c.train.model);
      add_hyper_flags(b, c.train.hyper);
    }
    {
      Binder b(sub("sweep", "Train every optimizer on every fused pair"), "sweep", keys);
      b.option("dataset", c.sweep.dataset, "Prepared dataset");
      b.option("pairs", c.sweep.pairs, "Manifest CSV with name,fused columns");
      b.option("lr", c.sweep.lr, "Shared learning rate, or auto for an sgd search");
      b.option("epochs", c.sweep.epochs, "Epochs");
      b.option("batch", c.sweep.batch, "Batch size");
      b.option("seed", c.sweep.seed, "Seed");
      b.option("out-dir", c.sweep.out_dir, "Output directory");
      b.option("optimizers", c.sweep.optimizers, "Comma-separated optimizer kinds");
      b.option("grid", c.sweep.grid, "Grid for --lr auto");
      b.option("lr-epochs", c.sweep.lr_epochs, "Epochs per grid point for --lr auto");
      add_model_flags(b, c.sweep.model);
      add_hyper_flags(b, c.sweep.hyper);
    }
    {
      Binder b(sub("eval", "Evaluate a checkpoint"), "eval", keys);
      b.option("dataset", c.eval.dataset, "Prepared dataset");
      b.option("checkpoint", c.eval.checkpoint, "Checkpoint");
      b.option("split", c.eval.split, "test | train | all");
      b.option("out", c.eval.out, "Confusion matrix CSV");
    }
    {
      Binder b(sub("report", "Redraw charts from history or lr-table CSVs"), "report", keys);
      b.option("history", c.report.history, "History CSV");
      b.option("out-dir", c.report.out_dir, "Directory for per-pair SVGs");
      b.option("metric", c.report.metric, "train | test");
      b.option("lr-table", c.report.lr_table, "lr-find table CSV");
      b.option("lr-out", c.report.lr_out, "SVG for the lr table");
    }
  }

  // INI body: top-level keys, then one [section] per subcommand.
  std::string serialize() const {
    std::string out;
    std::string current;
    for (const auto& [key, value] : keys) {
      const auto dot = key.find('.');
      const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
      const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
      if (section != current) {
        out += fmt::format("\n[{}]\n", section);
        current = section;
      }
      out += fmt::format("{}={}\n", name, value());
    }
    return out;
  }
};

struct Runtime {
  unsigned threads = 1;       // general parallelism
  unsigned grad_threads = 1;  // gradient reduction
};

Runtime resolve_runtime(unsigned requested) {
  unsigned n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("EMBFUSE_THREADS"); cap && *cap) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(cap, &end, 10);
    if (*end != '\0' || v == 0) {
      throw Error(ErrorCode::kInvalidConfig,
                  fmt::format("EMBFUSE_THREADS must be a positive integer, got '{}'", cap));
    }
    n = std::min<unsigned>(n, static_cast<unsigned>(v));
  }
  const char* det = std::getenv("EMBFUSE_DETERMINISTIC");
  const bool deterministic = det && std::string_view(det) == "1";
  return {n, deterministic ? 1u : n};
}

void need(const std::string& value, std::string_view flag) {
  if (value.empty()) throw Error(ErrorCode::kInvalidArgument, fmt::format("{} is required", flag));
}

void need_file(const std::string& path, std::string_view flag) {
  need(path, flag);
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("{}: no such file '{}'", flag, path));
  }
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  return in;
}

void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
}

template <typename Writer>
void write_with(const fs::path& path, Writer&& writer) {
  std::ostringstream buf(std::ios::binary);
  writer(buf);
  write_file(path, buf.str());
}

std::string with_extension(const std::string& path, std::string_view ext) {
  return fs::path(path).replace_extension(ext).string();
}

PreparedDataset load_dataset(const std::string& path) {
  auto in = open_in(path);
  return read_dataset(in);
}

DenseMatrix load_fused(const std::string& path, const CorpusDictionaries& dicts) {
  return embedding_matrix_from_table(load_embedding_file(path, EmbeddingFormat::kWord2VecBinary),
                                     dicts);
}

ModelConfig model_config(const ModelArgs& m, std::size_t emb_dim, std::uint64_t seed) {
  ModelConfig c;
  c.emb_dim = emb_dim;
  c.lstm_units = m.lstm_units;
  c.gru_units = m.gru_units;
  c.spatial_dropout_rate = m.spatial_dropout;
  c.dropout_rate = m.dropout;
  c.trainable_embeddings = m.trainable_embeddings;
  c.seed = seed;
  c.validate();
  return c;
}

OptimizerSpec optimizer_spec(std::string_view kind, double lr, const HyperArgs& h) {
  OptimizerSpec s;
  s.kind = parse_optimizer_kind(kind);
  s.learning_rate = lr;
  s.momentum = h.momentum;
  s.adam_beta1 = h.beta1;
  s.adam_beta2 = h.beta2;
  s.adam_eps = h.adam_eps;
  s.adagrad_eps = h.adagrad_eps;
  s.adadelta_rho = h.rho;
  s.adadelta_eps = h.adadelta_eps;
  s.validate();
  return s;
}

void check_positive(std::size_t v, std::string_view flag) {
  if (v == 0) throw Error(ErrorCode::kInvalidArgument, fmt::format("{} must be >= 1", flag));
}

std::vector<OptimizerKind> parse_optimizer_list(std::string_view list) {
  std::vector<OptimizerKind> kinds;
  std::size_t start = 0;
  while (start <= list.size()) {
    const auto end = std::min(list.find(',', start), list.size());
    const auto kind = parse_optimizer_kind(list.substr(start, end - start));
    if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end()) {
      throw Error(ErrorCode::kInvalidArgument, "optimizer listed twice in --optimizers");
    }
    kinds.push_back(kind);
    start = end + 1;
  }
  return kinds;
}

struct EmbeddingSpec {
  std::string path;
  EmbeddingFormat format;
};

EmbeddingSpec parse_embedding_spec(const std::string& spec, std::string_view flag) {
  need(spec, flag);
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("{} must be path:format, got '{}'", flag, spec));
  }
  EmbeddingSpec out{spec.substr(0, colon), parse_embedding_format(spec.substr(colon + 1))};
  need_file(out.path, flag);
  return out;
}

std::string history_table(const TrainingHistory& h) {
  std::string s;
  for (const auto& e : h.epochs) {
    s += fmt::format("epoch {:>3}  train_loss {:.6f}  train_acc {:.4f}  test_loss {:.6f}  "
                     "test_acc {:.4f}\n",
                     e.epoch, e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy);
  }
  return s;
}

// ---------------------------------------------------------------------------

int run_inspect(const InspectArgs& a, std::ostream& out) {
  need_file(a.file, "file");
  const auto format = parse_embedding_format(a.format);
  ParseDiagnostics diag;
  const EmbeddingTable t = load_embedding_file(a.file, format, &diag);
  double norm = 0.0;
  for (const double m : t.mean) norm += m * m;
  out << fmt::format("file: {}\nformat: {}\ndim: {}\nvocab: {}\nmean_norm: {:.9g}\n", a.file,
                     embedding_format_name(format), t.dim, t.rows(), std::sqrt(norm));
  if (diag.duplicate_tokens) out << fmt::format("duplicates: {}\n", diag.duplicate_tokens);
  if (diag.count_mismatch) {
    out << fmt::format("warning: header declares {} rows, body has {}\n",
                       diag.count_mismatch->first, diag.count_mismatch->second);
  }
  return 0;
}

int run_prepare(const PrepareArgs& a, std::ostream& out) {
  need_file(a.csv, "--csv");
  need(a.out, "--out");
  PrepareOptions opt;
  opt.buckets = RateBuckets::parse(a.buckets);
  opt.use_title = !a.no_title;
  opt.max_len = a.max_len;
  check_positive(a.max_len, "--max-len");
  opt.train_fraction = a.train_fraction;
  opt.seed = a.seed;
  if (!a.lemmas.empty()) {
    need_file(a.lemmas, "--lemmas");
    auto in = open_in(a.lemmas);
    opt.lemmatizer = load_lemma_table(in);
  }
  auto in = open_in(a.csv);
  LoadReport load;
  const auto records = load_reviews_csv(in, &load);
  PlaceReport place;
  const PreparedDataset ds = prepare_dataset(records, opt, &place);
  write_with(a.out, [&](std::ostream& os) { write_dataset(ds, os); });

  std::array<std::size_t, kNumClasses> train_counts{};
  std::array<std::size_t, kNumClasses> test_counts{};
  for (const auto& e : ds.train) ++train_counts[static_cast<std::size_t>(label_code(e.label))];
  for (const auto& e : ds.test) ++test_counts[static_cast<std::size_t>(label_code(e.label))];
  out << fmt::format("rows: {} (dropped {})\n", load.rows, load.dropped);
  out << fmt::format("place: {} kept {}/{} ({:.1f}%)\n", place.modal_place, place.kept,
                     place.total, 100.0 * place.share);
  if (place.tie) {
    out << fmt::format("warning: {} places tie for the most reviews; kept '{}'\n",
                       place.tied_places.size(), place.modal_place);
  }
  out << fmt::format("vocabulary: {} (including <pad>, <unk>)\n", ds.dicts.vocab_size());
  out << fmt::format("train: {} (bad {}, neutral {}, good {})\n", ds.train.size(),
                     train_counts[0], train_counts[1], train_counts[2]);
  out << fmt::format("test: {} (bad {}, neutral {}, good {})\n", ds.test.size(), test_counts[0],
                     test_counts[1], test_counts[2]);
  return 0;
}

int run_fuse(const FuseArgs& a, std::ostream& out, std::ostream& err) {
  const auto s1 = parse_embedding_spec(a.emb1, "--emb1");
  const auto s2 = parse_embedding_spec(a.emb2, "--emb2");
  need_file(a.dataset, "--dataset");
  need(a.out, "--out");
  FusionOptions opt;
  opt.chain = parse_candidate_chain(a.chain);
  opt.unknown_fill = a.unknown_fill;

  const EmbeddingTable e1 = load_embedding_file(s1.path, s1.format);
  const EmbeddingTable e2 = load_embedding_file(s2.path, s2.format);
  if (e2.rows() > e1.rows()) {
    err << fmt::format("warning: --emb2 has more words ({}) than --emb1 ({}); the first table "
                       "is usually the larger one\n",
                       e2.rows(), e1.rows());
  }
  const PreparedDataset ds = load_dataset(a.dataset);
  const FusedMatrix fused = build_fused_matrix(ds.dicts, e1, e2, e1.dim, opt);
  write_with(a.out, [&](std::ostream& os) { write_word2vec_binary(fused_to_table(fused, ds.dicts), os); });
  const std::string report = a.report.empty() ? a.out + ".report.csv" : a.report;
  write_file(report, fusion_report_csv(fused));
  out << fusion_report_text(fused);
  return 0;
}

int run_lr_find(const LrFindArgs& a, const Runtime& rt, std::ostream& out) {
  need_file(a.dataset, "--dataset");
  need_file(a.fused, "--fused");
  need(a.out, "--out");
  check_positive(a.epochs, "--epochs");
  check_positive(a.batch, "--batch");
  const auto grid = parse_lr_grid(a.grid);
  const OptimizerSpec spec = optimizer_spec(a.optimizer, grid.front(), a.hyper);

  const PreparedDataset ds = load_dataset(a.dataset);
  const DenseMatrix emb = load_fused(a.fused, ds.dicts);
  const ModelConfig config = model_config(a.model, emb.cols, a.seed);
  TrainOptions opt;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch;
  opt.seed = a.seed;
  opt.threads = rt.grad_threads;
  opt.evaluate_test = false;

  const LrSearchResult r = lr_range_search(ds, emb, config, spec, grid, opt);
  write_with(a.out, [&](std::ostream& os) { write_lr_table_csv(r.table, os); });
  const std::string chart = a.chart.empty() ? with_extension(a.out, ".svg") : a.chart;
  write_file(chart, lr_chart(r.table, fmt::format("Learning-rate search ({})", a.optimizer)));
  for (const auto& row : r.table) {
    out << fmt::format("lr {:.3e}  loss {}\n", row.learning_rate,
                       row.diverged ? std::string("diverged") : fmt::format("{:.6f}", row.final_loss));
  }
  out << fmt::format("best_lr: {:.17g}\nbest_loss: {:.17g}\n", r.best_lr, r.best_loss);
  return 0;
}

int run_train(const TrainArgs& a, const Runtime& rt, std::ostream& out, std::ostream& err) {
  need_file(a.dataset, "--dataset");
  need_file(a.fused, "--fused");
  need(a.out, "--out");
  check_positive(a.epochs, "--epochs");
  check_positive(a.batch, "--batch");
  const OptimizerSpec spec = optimizer_spec(a.optimizer, a.lr, a.hyper);

  const PreparedDataset ds = load_dataset(a.dataset);
  const DenseMatrix emb = load_fused(a.fused, ds.dicts);
  const ModelConfig config = model_config(a.model, emb.cols, a.seed);
  TrainOptions opt;
  opt.epochs = a.epochs;
  opt.batch_size = a.batch;
  opt.seed = a.seed;
  opt.threads = rt.grad_threads;

  const TrainResult r = train(ds, emb, config, spec, opt, fs::path(a.fused).stem().string());
  write_with(a.out, [&](std::ostream& os) { save_checkpoint(r.params, os); });
  const std::string history = a.history.empty() ? a.out + ".history.csv" : a.history;
  write_with(history, [&](std::ostream& os) {
    write_history_csv(std::span(&r.history, 1), os);
  });
  if (r.history.epochs.size() >= 2) {
    write_file(with_extension(history, ".svg"),
               sweep_chart(std::span(&r.history, 1), r.history.key.pair));
  }
  out << history_table(r.history);
  if (r.history.diverged) {
    err << fmt::format("warning: training diverged at epoch {}\n", r.history.epochs.size());
  }
  return 0;
}

std::vector<EmbeddingPair> load_pairs(const std::string& manifest, const CorpusDictionaries& dicts) {
  auto in = open_in(manifest);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyFile, "pairs manifest is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "name,fused") {
    throw Error(ErrorCode::kBadFormat, "pairs manifest header must be 'name,fused'");
  }
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<EmbeddingPair> pairs;
  std::vector<std::string> slugs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw Error(ErrorCode::kBadFormat,
                  fmt::format("pairs manifest line {}: expected name,fused", line_no),
                  static_cast<std::int64_t>(line_no));
    }
    EmbeddingPair p;
    p.name = line.substr(0, comma);
    const fs::path file = base / line.substr(comma + 1);
    if (p.name.empty()) {
      throw Error(ErrorCode::kBadFormat, fmt::format("pairs manifest line {}: empty name", line_no));
    }
    const std::string slug = slugify(p.name);
    if (std::find(slugs.begin(), slugs.end(), slug) != slugs.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("pair names must differ after slugging ('{}')", slug));
    }
    slugs.push_back(slug);
    if (!fs::is_regular_file(file)) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("pairs manifest line {}: no such file '{}'", line_no, file.string()));
    }
    p.embedding = load_fused(file.string(), dicts);
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw Error(ErrorCode::kEmptyInput, "pairs manifest lists no pairs");
  return pairs;
}

int run_sweep(const SweepArgs& a, const Runtime& rt, std::ostream& out) {
  need_file(a.dataset, "--dataset");
  need_file(a.pairs, "--pairs");
  need(a.out_dir, "--out-dir");
  check_positive(a.epochs, "--epochs");
  check_positive(a.batch, "--batch");
  const auto kinds = parse_optimizer_list(a.optimizers);
  std::optional<double> lr;
  if (a.lr != "auto") {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(a.lr.data(), a.lr.data() + a.lr.size(), v);
    if (ec != std::errc() || ptr != a.lr.data() + a.lr.size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("--lr must be a number or auto, got '{}'", a.lr));
    }
    lr = v;
  }
  const OptimizerSpec hyper = optimizer_spec("sgd", lr.value_or(1.0), a.hyper);
  std::vector<double> grid;
  if (!lr) {
    grid = parse_lr_grid(a.grid);
    check_positive(a.lr_epochs, "--lr-epochs");
  }

  const PreparedDataset ds = load_dataset(a.dataset);
  const auto pairs = load_pairs(a.pairs, ds.dicts);
  const ModelConfig config = model_config(a.model, pairs.front().embedding.cols, a.seed);
  const fs::path dir(a.out_dir);
  fs::create_directories(dir);

  TrainOptions train_opt;
  train_opt.epochs = a.epochs;
  train_opt.batch_size = a.batch;
  train_opt.seed = a.seed;

  if (!lr) {
    TrainOptions search = train_opt;
    search.epochs = a.lr_epochs;
    search.threads = rt.grad_threads;
    OptimizerSpec sgd = hyper;
    sgd.kind = OptimizerKind::kSgd;
    const auto r = lr_range_search(ds, pairs.front().embedding, config, sgd, grid, search);
    write_with(dir / "lr_search.csv", [&](std::ostream& os) { write_lr_table_csv(r.table, os); });
    write_file(dir / "lr_search.svg",
               lr_chart(r.table, fmt::format("Learning-rate search (sgd, {})", pairs.front().name)));
    lr = r.best_lr;
    out << fmt::format("lr search on {}: best_lr {:.17g} (loss {:.6f})\n", pairs.front().name,
                       r.best_lr, r.best_loss);
  }

  SweepOptions sweep;
  sweep.learning_rate = *lr;
  sweep.train = train_opt;
  sweep.optimizers = kinds;
  sweep.parallel_cells = rt.threads;
  const auto histories = optimizer_sweep(ds, pairs, config, hyper, sweep);

  write_with(dir / "history.csv", [&](std::ostream& os) { write_history_csv(histories, os); });
  for (const auto& p : pairs) {
    write_file(dir / (slugify(p.name) + ".svg"), sweep_chart(histories, p.name));
  }
  for (const auto& h : histories) {
    const auto& last = h.epochs.back();
    out << fmt::format("{:<20} {:<13} final train_loss {:.6f}  test_acc {:.4f}{}\n", h.key.pair,
                       optimizer_kind_name(h.key.optimizer), last.train_loss, last.test_accuracy,
                       h.diverged ? "  (diverged)" : "");
  }
  return 0;
}

int run_eval(const EvalArgs& a, const Runtime& rt, std::ostream& out) {
  need_file(a.dataset, "--dataset");
  need_file(a.checkpoint, "--checkpoint");
  if (a.split != "test" && a.split != "train" && a.split != "all") {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("--split must be test, train or all, got '{}'", a.split));
  }
  const PreparedDataset ds = load_dataset(a.dataset);
  auto in = open_in(a.checkpoint);
  const ModelParameters params = load_checkpoint(in);
  if (params.layout().vocab_rows() != ds.dicts.vocab_size()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("checkpoint has {} vocabulary rows, dataset has {}",
                            params.layout().vocab_rows(), ds.dicts.vocab_size()));
  }
  std::vector<EncodedExample> examples;
  if (a.split != "test") examples.insert(examples.end(), ds.train.begin(), ds.train.end());
  if (a.split != "train") examples.insert(examples.end(), ds.test.begin(), ds.test.end());
  const Prediction p = predict(examples, params, rt.threads);

  out << fmt::format("examples: {}\naccuracy: {:.6f}\nloss: {:.6f}\n", examples.size(),
                     p.accuracy, p.loss);
  std::string csv = "true\\pred,bad,neutral,good\n";
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    csv += fmt::format("{},{},{},{}\n", label_name(static_cast<SentimentLabel>(t)),
                       p.confusion[t][0], p.confusion[t][1], p.confusion[t][2]);
  }
  out << csv;
  if (!a.out.empty()) write_file(a.out, csv);
  return 0;
}

int run_report(const ReportArgs& a, std::ostream& out) {
  if (a.history.empty() && a.lr_table.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "give --history and/or --lr-table");
  }
  if (a.metric != "train" && a.metric != "test") {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("--metric must be train or test, got '{}'", a.metric));
  }
  if (!a.history.empty()) {
    need_file(a.history, "--history");
    need(a.out_dir, "--out-dir");
    auto in = open_in(a.history);
    const auto histories = read_history_csv(in);
    const auto metric = a.metric == "train" ? LossMetric::kTrain : LossMetric::kTest;
    const std::string suffix = a.metric == "train" ? "" : "_test";
    for (const auto& pair : history_pairs(histories)) {
      const fs::path path = fs::path(a.out_dir) / (slugify(pair) + suffix + ".svg");
      write_file(path, sweep_chart(histories, pair, metric));
      out << path.string() << '\n';
    }
  }
  if (!a.lr_table.empty()) {
    need_file(a.lr_table, "--lr-table");
    auto in = open_in(a.lr_table);
    const auto table = read_lr_table_csv(in);
    const std::string path = a.lr_out.empty() ? with_extension(a.lr_table, ".svg") : a.lr_out;
    write_file(path, lr_chart(table, "Learning-rate search"));
    out << path << '\n';
  }
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

int report_error(std::ostream& err, std::string_view code, const std::string& message, int exit) {
  err << "ERROR " << code << ": " << one_line(message) << '\n';
  return exit;
}

// Name of the first positional argument before CLI11 sees it, so that a
// misspelled subcommand gets its own error code.
std::optional<std::string> unknown_subcommand(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config" || a == "--write-config" || a == "--threads") {
      ++i;
      continue;
    }
    if (a.starts_with("-")) continue;
    if (std::find(std::begin(kSubcommands), std::end(kSubcommands), a) != std::end(kSubcommands)) {
      return std::nullopt;
    }
    return a;
  }
  return std::nullopt;
}

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  RunConfig config;
  CommandLine cl(config);
  std::istringstream in{std::string(text)};
  try {
    cl.app.parse_from_stream(in);
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::kInvalidConfig, one_line(e.what()));
  }
  return config;
}

std::string serialize_run_config(const RunConfig& config) {
  RunConfig copy = config;
  return CommandLine(copy).serialize();
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (const auto bad = unknown_subcommand(args)) {
    return report_error(err, error_code_name(ErrorCode::kUnknownCommand),
                        fmt::format("'{}' is not a subcommand (expected one of inspect, prepare, "
                                    "fuse, lr-find, train, sweep, eval, report)",
                                    *bad),
                        1);
  }
  RunConfig config;
  CommandLine cl(config);
  cl.app.require_subcommand(1);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    cl.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << cl.app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << cl.app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ConfigError& e) {
    return report_error(err, error_code_name(ErrorCode::kInvalidConfig), e.what(), 1);
  } catch (const CLI::ParseError& e) {
    return report_error(err, error_code_name(ErrorCode::kInvalidArgument), e.what(), 1);
  }
  // A subcommand's --help is reported through the subcommand itself.
  for (auto* sub : cl.subs) {
    if (sub->parsed() && sub->get_help_ptr() && sub->get_help_ptr()->count()) {
      out << sub->help();
      return 0;
    }
  }

  try {
    if (!cl.write_config.empty()) {
      write_file(cl.write_config, serialize_run_config(config));
      return 0;
    }
    const Runtime rt = resolve_runtime(config.threads);
    const std::string name = cl.app.get_subcommands().front()->get_name();
    if (name == "inspect") return run_inspect(config.inspect, out);
    if (name == "prepare") return run_prepare(config.prepare, out);
    if (name == "fuse") return run_fuse(config.fuse, out, err);
    if (name == "lr-find") return run_lr_find(config.lr_find, rt, out);
    if (name == "train") return run_train(config.train, rt, out, err);
    if (name == "sweep") return run_sweep(config.sweep, rt, out);
    if (name == "eval") return run_eval(config.eval, rt, out);
    if (name == "report") return run_report(config.report, out);
    return report_error(err, error_code_name(ErrorCode::kUnknownCommand), name, 1);
  } catch (const Error& e) {
    return report_error(err, error_code_name(e.code()), e.what(),
                        is_validation_error(e.code()) ? 1 : 2);
  } catch (const fs::filesystem_error& e) {
    return report_error(err, error_code_name(ErrorCode::kIo), e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(err, "internal", e.what(), 2);
  }
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace embfuse::cli
