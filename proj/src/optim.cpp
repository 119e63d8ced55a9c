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

#include "embfuse/optim.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "embfuse/error.hpp"
#include "embfuse/rng.hpp"
#include "parallel.hpp"

namespace embfuse {

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "sgd-momentum" || name == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (name == "adagrad") return OptimizerKind::kAdagrad;
  if (name == "adadelta") return OptimizerKind::kAdadelta;
  if (name == "adam") return OptimizerKind::kAdam;
  throw Error(ErrorCode::kInvalidArgument,
              fmt::format("unknown optimizer '{}' (expected sgd, sgd-momentum, adagrad, "
                          "adadelta, adam)",
                          name));
}

std::string_view optimizer_kind_name(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kSgdMomentum: return "sgd-momentum";
    case OptimizerKind::kAdagrad: return "adagrad";
    case OptimizerKind::kAdadelta: return "adadelta";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

void OptimizerSpec::validate() const {
  const auto fail = [](const std::string& what) {
    return Error(ErrorCode::kInvalidArgument, "optimizer: " + what);
  };
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw fail(fmt::format("learning rate must be > 0, got {}", learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw fail("momentum must be in [0, 1)");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw fail("adam beta1 must be in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw fail("adam beta2 must be in (0, 1)");
  if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0)) throw fail("adadelta rho must be in (0, 1)");
  if (!(adam_eps > 0.0 && adagrad_eps > 0.0 && adadelta_eps > 0.0)) {
    throw fail("epsilons must be > 0");
  }
}

Optimizer::Optimizer(const OptimizerSpec& spec, std::size_t size) : spec_(spec) {
  spec_.validate();
  switch (spec_.kind) {
    case OptimizerKind::kSgd:
      break;
    case OptimizerKind::kSgdMomentum:
    case OptimizerKind::kAdagrad:
      state_.first.assign(size, 0.0);
      break;
    case OptimizerKind::kAdadelta:
    case OptimizerKind::kAdam:
      state_.first.assign(size, 0.0);
      state_.second.assign(size, 0.0);
      break;
  }
  expected_size_ = size;
}

void Optimizer::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != expected_size_ || grad.size() != expected_size_) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("optimizer sized for {} parameters, got {} params / {} grads",
                            expected_size_, params.size(), grad.size()));
  }
  for (std::size_t j = 0; j < grad.size(); ++j) {
    if (!std::isfinite(grad[j])) {
      throw Error(ErrorCode::kNonFiniteGradient,
                  fmt::format("non-finite gradient at parameter {}", j),
                  static_cast<std::int64_t>(j));
    }
  }
  const double lr = spec_.learning_rate;
  auto& s = state_;
  switch (spec_.kind) {
    case OptimizerKind::kSgd:
      for (std::size_t j = 0; j < params.size(); ++j) params[j] -= lr * grad[j];
      break;
    case OptimizerKind::kSgdMomentum:
      for (std::size_t j = 0; j < params.size(); ++j) {
        s.first[j] = spec_.momentum * s.first[j] + grad[j];
        params[j] -= lr * s.first[j];
      }
      break;
    case OptimizerKind::kAdagrad:
      for (std::size_t j = 0; j < params.size(); ++j) {
        s.first[j] += grad[j] * grad[j];
        params[j] -= lr * grad[j] / std::sqrt(s.first[j] + spec_.adagrad_eps);
      }
      break;
    case OptimizerKind::kAdadelta: {
      const double rho = spec_.adadelta_rho;
      const double eps = spec_.adadelta_eps;
      for (std::size_t j = 0; j < params.size(); ++j) {
        s.first[j] = rho * s.first[j] + (1.0 - rho) * grad[j] * grad[j];
        const double delta = -(std::sqrt(s.second[j] + eps) / std::sqrt(s.first[j] + eps)) * grad[j];
        s.second[j] = rho * s.second[j] + (1.0 - rho) * delta * delta;
        params[j] += lr * delta;
      }
      break;
    }
    case OptimizerKind::kAdam: {
      const double b1 = spec_.adam_beta1;
      const double b2 = spec_.adam_beta2;
      const double t = static_cast<double>(s.t + 1);
      const double c1 = 1.0 - std::pow(b1, t);
      const double c2 = 1.0 - std::pow(b2, t);
      for (std::size_t j = 0; j < params.size(); ++j) {
        s.first[j] = b1 * s.first[j] + (1.0 - b1) * grad[j];
        s.second[j] = b2 * s.second[j] + (1.0 - b2) * grad[j] * grad[j];
        const double m_hat = s.first[j] / c1;
        const double v_hat = s.second[j] / c2;
        params[j] -= lr * m_hat / (std::sqrt(v_hat) + spec_.adam_eps);
      }
      break;
    }
  }
  ++s.t;
}

namespace {

std::vector<EncodedExample> gather(std::span<const EncodedExample> data,
                                   std::span<const std::size_t> order) {
  std::vector<EncodedExample> batch;
  batch.reserve(order.size());
  for (const std::size_t i : order) batch.push_back(data[i]);
  return batch;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

TrainResult train(const PreparedDataset& data, const DenseMatrix& embedding,
                  const ModelConfig& config, const OptimizerSpec& optimizer,
                  const TrainOptions& options, std::string pair_name) {
  optimizer.validate();
  if (data.train.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (options.batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  if (options.epochs == 0) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");

  ModelConfig cfg = config;
  cfg.max_len = data.max_len;
  TrainResult result{ModelParameters::initialize(cfg, embedding, derive_seed(options.seed, {1})),
                     TrainingHistory{}};
  ModelParameters& params = result.params;
  TrainingHistory& history = result.history;
  history.key = RunKey{std::move(pair_name), optimizer.kind, optimizer.learning_rate,
                       options.seed};
  Optimizer opt(optimizer, params.layout().trainable_size());

  const std::size_t n = data.train.size();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(derive_seed(options.seed, {2, epoch}));
    shuffler.shuffle(std::span<std::size_t>(order));

    EpochRecord record;
    record.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n && !history.diverged; start += options.batch_size) {
      const std::size_t end = std::min(n, start + options.batch_size);
      const auto batch = gather(data.train, std::span(order).subspan(start, end - start));
      const auto lg =
          loss_and_grad(batch, params, derive_seed(options.seed, {3, epoch, batches}),
                        options.threads);
      if (!std::isfinite(lg.loss)) {
        history.diverged = true;
        break;
      }
      try {
        opt.step(params.trainable(), lg.grad);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFiniteGradient) throw;
        history.diverged = true;
        break;
      }
      loss_sum += lg.loss;
      correct += lg.correct;
      ++batches;
    }

    record.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (history.diverged) {
      record.train_loss = kNaN;
      record.train_accuracy = kNaN;
      record.test_loss = kNaN;
      record.test_accuracy = kNaN;
      history.epochs.push_back(record);
      break;
    }
    record.train_loss = loss_sum / static_cast<double>(batches);
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (options.evaluate_test && !data.test.empty()) {
      const Prediction p = predict(data.test, params, options.threads);
      record.test_loss = p.loss;
      record.test_accuracy = p.accuracy;
    } else {
      record.test_loss = kNaN;
      record.test_accuracy = kNaN;
    }
    history.epochs.push_back(record);
  }
  return result;
}

std::vector<double> log_grid(double lo, double hi, std::size_t per_decade) {
  if (!(lo > 0.0 && hi > lo) || per_decade == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("log grid needs 0 < lo < hi and a positive density, got {}:{}:{}",
                            lo, hi, per_decade));
  }
  const double e0 = std::log10(lo);
  const double span = std::log10(hi) - e0;
  const auto steps = static_cast<std::size_t>(std::llround(span * static_cast<double>(per_decade)));
  std::vector<double> grid;
  for (std::size_t k = 0; k <= steps; ++k) {
    grid.push_back(std::pow(10.0, e0 + static_cast<double>(k) / static_cast<double>(per_decade)));
  }
  return grid;
}

namespace {

double parse_real(std::string_view s, std::string_view what) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("cannot parse {} '{}'", what, s));
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

void check_grid(std::span<const double> grid) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "learning-rate grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] > 0.0) || !std::isfinite(grid[i])) {
      throw Error(ErrorCode::kInvalidArgument, "learning rates must be positive and finite");
    }
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      throw Error(ErrorCode::kInvalidArgument, "learning-rate grid must be strictly increasing");
    }
  }
}

}  // namespace

std::vector<double> parse_lr_grid(std::string_view spec) {
  std::vector<double> grid;
  const auto parts = split(spec, ':');
  if (parts.size() == 3) {
    if (!parts[2].starts_with("log")) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("grid '{}' must look like lo:hi:logN", spec));
    }
    const double n = parse_real(parts[2].substr(3), "grid density");
    if (n < 1 || n != std::floor(n)) {
      throw Error(ErrorCode::kInvalidArgument, "grid density must be a positive integer");
    }
    grid = log_grid(parse_real(parts[0], "grid start"), parse_real(parts[1], "grid end"),
                    static_cast<std::size_t>(n));
  } else if (parts.size() == 1) {
    for (const auto item : split(spec, ',')) grid.push_back(parse_real(item, "learning rate"));
  } else {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("grid '{}' must be lo:hi:logN or a comma list", spec));
  }
  check_grid(grid);
  return grid;
}

LrSearchRow select_best_lr(std::span<const LrSearchRow> table) {
  const LrSearchRow* best = nullptr;
  for (const auto& row : table) {
    if (row.diverged || !std::isfinite(row.final_loss)) continue;
    if (!best || row.final_loss < best->final_loss ||
        (row.final_loss == best->final_loss && row.learning_rate < best->learning_rate)) {
      best = &row;
    }
  }
  if (!best) throw Error(ErrorCode::kAllDiverged, "every learning rate diverged");
  return *best;
}

LrSearchResult lr_range_search(const PreparedDataset& data, const DenseMatrix& embedding,
                               const ModelConfig& config, const OptimizerSpec& optimizer,
                               std::span<const double> grid, const TrainOptions& options) {
  check_grid(grid);
  TrainOptions run = options;
  run.evaluate_test = false;
  LrSearchResult result;
  for (const double lr : grid) {
    OptimizerSpec spec = optimizer;
    spec.learning_rate = lr;
    const TrainResult r = train(data, embedding, config, spec, run);
    const auto& last = r.history.epochs.back();
    result.table.push_back({lr, r.history.diverged ? kNaN : last.train_loss, r.history.diverged});
  }
  const LrSearchRow best = select_best_lr(result.table);
  result.best_lr = best.learning_rate;
  result.best_loss = best.final_loss;
  return result;
}

std::vector<TrainingHistory> optimizer_sweep(const PreparedDataset& data,
                                             std::span<const EmbeddingPair> pairs,
                                             const ModelConfig& config,
                                             const OptimizerSpec& hyper,
                                             const SweepOptions& options) {
  if (pairs.empty()) throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one pair");
  if (options.optimizers.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "sweep needs at least one optimizer");
  }
  for (const auto& p : pairs) {
    if (p.name.find_first_of(",\n\"") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("pair name '{}' may not contain commas, quotes or newlines", p.name));
    }
  }
  const std::size_t kinds = options.optimizers.size();
  std::vector<TrainingHistory> histories(pairs.size() * kinds);
  TrainOptions cell = options.train;
  cell.threads = 1;
  detail::for_each_chunk(
      histories.size(), options.parallel_cells, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          const auto& pair = pairs[i / kinds];
          OptimizerSpec spec = hyper;
          spec.kind = options.optimizers[i % kinds];
          spec.learning_rate = options.learning_rate;
          ModelConfig cfg = config;
          cfg.emb_dim = pair.embedding.cols;
          histories[i] = train(data, pair.embedding, cfg, spec, cell, pair.name).history;
        }
      });
  return histories;
}

namespace {

constexpr std::string_view kHistoryHeader =
    "pair,optimizer,learning_rate,seed,epoch,train_loss,train_accuracy,test_loss,"
    "test_accuracy,diverged";

}  // namespace

void write_history_csv(std::span<const TrainingHistory> histories, std::ostream& out) {
  out << kHistoryHeader << '\n';
  for (const auto& h : histories) {
    for (std::size_t i = 0; i < h.epochs.size(); ++i) {
      const auto& e = h.epochs[i];
      const bool flagged = h.diverged && i + 1 == h.epochs.size();
      out << fmt::format("{},{},{:.17g},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", h.key.pair,
                         optimizer_kind_name(h.key.optimizer), h.key.learning_rate, h.key.seed,
                         e.epoch, e.train_loss, e.train_accuracy, e.test_loss, e.test_accuracy,
                         flagged ? 1 : 0);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write error while writing history CSV");
}

std::vector<TrainingHistory> read_history_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kHistoryHeader) {
    throw Error(ErrorCode::kBadFormat, "history CSV header mismatch");
  }
  std::vector<TrainingHistory> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 10) {
      throw Error(ErrorCode::kBadFormat, fmt::format("history CSV line {}: expected 10 fields", line_no),
                  static_cast<std::int64_t>(line_no));
    }
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), seed);
    if (ec != std::errc() || ptr != f[3].data() + f[3].size()) {
      throw Error(ErrorCode::kBadFormat, fmt::format("history CSV line {}: bad seed", line_no),
                  static_cast<std::int64_t>(line_no));
    }
    RunKey key{std::string(f[0]), parse_optimizer_kind(f[1]), parse_real(f[2], "learning rate"),
               seed};
    EpochRecord e;
    e.epoch = static_cast<std::size_t>(parse_real(f[4], "epoch"));
    e.train_loss = parse_real(f[5], "train loss");
    e.train_accuracy = parse_real(f[6], "train accuracy");
    e.test_loss = parse_real(f[7], "test loss");
    e.test_accuracy = parse_real(f[8], "test accuracy");
    const bool new_run = out.empty() || out.back().key.pair != key.pair ||
                         out.back().key.optimizer != key.optimizer ||
                         out.back().key.learning_rate != key.learning_rate ||
                         out.back().key.seed != key.seed || e.epoch == 1;
    if (new_run) out.push_back(TrainingHistory{key, {}, false});
    out.back().epochs.push_back(e);
    if (f[9] == "1") out.back().diverged = true;
  }
  return out;
}

void write_lr_table_csv(std::span<const LrSearchRow> table, std::ostream& out) {
  out << "learning_rate,final_loss,diverged\n";
  for (const auto& row : table) {
    out << fmt::format("{:.17g},{:.17g},{}\n", row.learning_rate, row.final_loss,
                       row.diverged ? 1 : 0);
  }
  if (!out) throw Error(ErrorCode::kIo, "write error while writing lr table");
}

std::vector<LrSearchRow> read_lr_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "learning_rate,final_loss,diverged") {
    throw Error(ErrorCode::kBadFormat, "lr table header mismatch");
  }
  std::vector<LrSearchRow> table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3 || (f[2] != "0" && f[2] != "1")) {
      throw Error(ErrorCode::kBadFormat, fmt::format("lr table line {}: malformed row", line_no),
                  static_cast<std::int64_t>(line_no));
    }
    table.push_back({parse_real(f[0], "learning rate"), parse_real(f[1], "loss"), f[2] == "1"});
  }
  return table;
}

}  // namespace embfuse
