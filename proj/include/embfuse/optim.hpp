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

#ifndef EMBFUSE_OPTIM_HPP_
#define EMBFUSE_OPTIM_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embfuse/corpus.hpp"
#include "embfuse/dense_matrix.hpp"
#include "embfuse/model.hpp"

namespace embfuse {

enum class OptimizerKind { kSgd, kSgdMomentum, kAdagrad, kAdadelta, kAdam };

inline constexpr OptimizerKind kAllOptimizers[] = {
    OptimizerKind::kSgd, OptimizerKind::kSgdMomentum, OptimizerKind::kAdagrad,
    OptimizerKind::kAdadelta, OptimizerKind::kAdam};

/// "sgd", "sgd-momentum", "adagrad", "adadelta", "adam" ("sgd_momentum" is
/// accepted too).
OptimizerKind parse_optimizer_kind(std::string_view name);
std::string_view optimizer_kind_name(OptimizerKind kind);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double adagrad_eps = 1e-10;
  double adadelta_rho = 0.95;
  double adadelta_eps = 1e-6;

  /// Throws kInvalidArgument.
  void validate() const;
};

struct OptimizerState {
  std::vector<double> first;   // velocity, G, E[g^2] or m
  std::vector<double> second;  // E[dx^2] or v
  std::uint64_t t = 0;
};

/// Applies one update rule in place:
///   sgd           w -= lr*g
///   sgd_momentum  v = mu*v + g;  w -= lr*v
///   adagrad       G += g^2;  w -= lr*g/sqrt(G+eps)
///   adadelta      Eg = rho*Eg + (1-rho)*g^2
///                 d = -sqrt(Edx+eps)/sqrt(Eg+eps)*g
///                 Edx = rho*Edx + (1-rho)*d^2;  w += lr*d
///   adam          m, v moving averages, bias corrected by 1-beta^t,
///                 w -= lr*m_hat/(sqrt(v_hat)+eps)
class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, std::size_t size);

  /// Throws kShapeMismatch or kNonFiniteGradient; on error nothing changes.
  void step(std::span<double> params, std::span<const double> grad);

  const OptimizerSpec& spec() const { return spec_; }
  const OptimizerState& state() const { return state_; }

 private:
  OptimizerSpec spec_;
  OptimizerState state_;
  std::size_t expected_size_ = 0;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool evaluate_test = true;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;      // mean over the epoch's batches
  double train_accuracy = 0.0;  // training-mode argmax hits over the epoch
  double test_loss = 0.0;       // NaN when not evaluated
  double test_accuracy = 0.0;
  double seconds = 0.0;  // wall clock; not serialized
};

struct RunKey {
  std::string pair;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
};

/// One training curve. A run that hits a non-finite loss or gradient stops;
/// the failing epoch is kept with a NaN train loss and `diverged` set.
struct TrainingHistory {
  RunKey key;
  std::vector<EpochRecord> epochs;
  bool diverged = false;
};

struct TrainResult {
  ModelParameters params;
  TrainingHistory history;
};

/// Mini-batch training with a per-epoch seeded shuffle. The model is
/// initialized from `options.seed`; config.max_len is taken from the data.
TrainResult train(const PreparedDataset& data, const DenseMatrix& embedding,
                  const ModelConfig& config, const OptimizerSpec& optimizer,
                  const TrainOptions& options, std::string pair_name = {});

/// Learning rates `per_decade` points per decade from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t per_decade);

/// Parses "lo:hi:logN" (log spaced) or a comma-separated list.
std::vector<double> parse_lr_grid(std::string_view spec);

struct LrSearchRow {
  double learning_rate = 0.0;
  double final_loss = 0.0;  // last epoch train loss
  bool diverged = false;
};

struct LrSearchResult {
  double best_lr = 0.0;
  double best_loss = 0.0;
  std::vector<LrSearchRow> table;
};

/// Lowest final loss among non-diverged rows; ties go to the smaller lr.
/// Throws kAllDiverged.
LrSearchRow select_best_lr(std::span<const LrSearchRow> table);

/// Trains a freshly initialized model (same seed) for options.epochs at
/// every grid point. The grid must be non-empty and strictly increasing.
LrSearchResult lr_range_search(const PreparedDataset& data, const DenseMatrix& embedding,
                               const ModelConfig& config, const OptimizerSpec& optimizer,
                               std::span<const double> grid, const TrainOptions& options);

struct EmbeddingPair {
  std::string name;
  DenseMatrix embedding;
};

struct SweepOptions {
  double learning_rate = 0.01;
  TrainOptions train;
  std::vector<OptimizerKind> optimizers{std::begin(kAllOptimizers), std::end(kAllOptimizers)};
  // Cells run concurrently; each cell trains single-threaded, so results
  // do not depend on this value.
  unsigned parallel_cells = 1;
};

/// pairs x optimizers training runs sharing lr and seed, pair-major order.
std::vector<TrainingHistory> optimizer_sweep(const PreparedDataset& data,
                                             std::span<const EmbeddingPair> pairs,
                                             const ModelConfig& config,
                                             const OptimizerSpec& hyper,
                                             const SweepOptions& options);

/// Long-format history CSV:
///   pair,optimizer,learning_rate,seed,epoch,train_loss,train_accuracy,
///   test_loss,test_accuracy,diverged
/// Reals are written with 17 significant digits so reading them back is exact.
void write_history_csv(std::span<const TrainingHistory> histories, std::ostream& out);
std::vector<TrainingHistory> read_history_csv(std::istream& in);

/// `learning_rate,final_loss,diverged` rows.
void write_lr_table_csv(std::span<const LrSearchRow> table, std::ostream& out);
std::vector<LrSearchRow> read_lr_table_csv(std::istream& in);

}  // namespace embfuse

#endif  // EMBFUSE_OPTIM_HPP_
