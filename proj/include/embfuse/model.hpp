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

#ifndef EMBFUSE_MODEL_HPP_
#define EMBFUSE_MODEL_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "embfuse/corpus.hpp"
#include "embfuse/dense_matrix.hpp"

namespace embfuse {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixView = Eigen::Map<const RowMatrix>;
using MatrixView = Eigen::Map<RowMatrix>;
using Vector = Eigen::VectorXd;
using ConstVectorView = Eigen::Map<const Vector>;
using VectorRef = Eigen::Ref<const Vector>;

struct ModelConfig {
  std::size_t max_len = kDefaultMaxLen;
  std::size_t emb_dim = 300;
  std::size_t lstm_units = 512;  // per direction
  std::size_t gru_units = 256;   // per direction
  double spatial_dropout_rate = 0.2;
  double dropout_rate = 0.3;
  std::size_t num_classes = kNumClasses;
  bool trainable_embeddings = false;
  std::uint64_t seed = 0;

  /// Throws kInvalidConfig.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Direction { kForward = 0, kBackward = 1 };

// Block order is the flat-vector order. The embedding comes last so the
// trainable prefix is contiguous whether or not it is frozen.
enum class ParamBlock : std::size_t {
  kLstmFwdW, kLstmFwdU, kLstmFwdB,
  kLstmBwdW, kLstmBwdU, kLstmBwdB,
  kGruFwdW, kGruFwdU, kGruFwdB,
  kGruBwdW, kGruBwdU, kGruBwdB,
  kDenseW, kDenseB,
  kEmbedding,
};
inline constexpr std::size_t kNumParamBlocks = 15;

struct BlockShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const { return rows * cols; }
};

/// Offsets of every parameter block inside the flat vector.
///
/// LSTM gates are stacked i, f, g, o; GRU gates z, r, n. W blocks map the
/// layer input, U blocks the previous hidden state, biases are column
/// vectors. The dense layer reads [maxpool(BiLSTM) ; maxpool(BiGRU)].
class ParameterLayout {
 public:
  ParameterLayout(const ModelConfig& config, std::size_t vocab_rows);

  const BlockShape& block(ParamBlock b) const { return blocks_[static_cast<std::size_t>(b)]; }
  std::span<const BlockShape> blocks() const { return blocks_; }
  std::size_t total_size() const { return total_; }
  std::size_t trainable_size() const { return trainable_; }
  std::size_t vocab_rows() const { return vocab_rows_; }
  /// Blocks covered by the gradient.
  std::size_t trainable_block_count() const { return trainable_blocks_; }

 private:
  std::array<BlockShape, kNumParamBlocks> blocks_;
  std::size_t total_ = 0;
  std::size_t trainable_ = 0;
  std::size_t trainable_blocks_ = 0;
  std::size_t vocab_rows_ = 0;
};

struct LstmWeights {
  ConstMatrixView W;  // 4H x D
  ConstMatrixView U;  // 4H x H
  ConstVectorView b;  // 4H
};

struct GruWeights {
  ConstMatrixView W;  // 3H x D
  ConstMatrixView U;  // 3H x H
  ConstVectorView b;  // 3H
};

/// Every weight of the classifier in one flat buffer.
class ModelParameters {
 public:
  /// All weights zero except the supplied embedding rows.
  ModelParameters(const ModelConfig& config, const DenseMatrix& embedding);

  /// Seeded initialization: Glorot-uniform input and dense kernels,
  /// U(-1/sqrt(H), 1/sqrt(H)) recurrent kernels, zero biases except the
  /// LSTM forget gate (+1).
  static ModelParameters initialize(const ModelConfig& config, const DenseMatrix& embedding,
                                    std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }

  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }
  std::span<double> trainable() { return {flat_.data(), layout_.trainable_size()}; }
  std::span<const double> trainable() const { return {flat_.data(), layout_.trainable_size()}; }

  std::span<double> block(ParamBlock b);
  std::span<const double> block(ParamBlock b) const;
  ConstMatrixView matrix(ParamBlock b) const;

  LstmWeights lstm(Direction d) const;
  GruWeights gru(Direction d) const;

  bool operator==(const ModelParameters& other) const {
    return config_ == other.config_ && flat_ == other.flat_ &&
           layout_.vocab_rows() == other.layout_.vocab_rows();
  }

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<double> flat_;
};

struct LstmStep {
  Vector h;
  Vector c;
  Vector gates;  // activated [i; f; g; o]
};

/// One LSTM step: i, f, o = sigmoid(.), g = tanh(.), c = f*c_prev + i*g,
/// h = o*tanh(c). Throws kShapeMismatch.
LstmStep lstm_cell_step(const VectorRef& x, const VectorRef& h_prev, const VectorRef& c_prev,
                        const LstmWeights& w);

struct GruStep {
  Vector h;
  Vector z;
  Vector r;
  Vector n;
  Vector un;  // U_n h_prev, before the reset gate
};

/// One GRU step with the reset gate inside the candidate's recurrent term:
/// n = tanh(W_n x + r*(U_n h_prev) + b_n), h = (1-z)*n + z*h_prev.
GruStep gru_cell_step(const VectorRef& x, const VectorRef& h_prev, const GruWeights& w);

struct LstmDirectionTrace {
  RowMatrix gates;  // T x 4H, activated
  RowMatrix c;      // T x H
  RowMatrix h;      // T x H
};

struct GruDirectionTrace {
  RowMatrix z, r, n, un, h;  // T x H each
};

/// Everything backward needs for one sequence. Rows are indexed by the
/// position among the sequence's non-padding tokens.
struct SequenceTrace {
  std::vector<std::int32_t> tokens;  // non-padding indices, in order
  Vector spatial_mask;               // per embedding channel
  RowMatrix input;                   // T x E after spatial dropout
  std::array<LstmDirectionTrace, 2> lstm;
  RowMatrix lstm_mask;  // T x 2H1
  RowMatrix lstm_out;   // T x 2H1 after dropout
  std::array<GruDirectionTrace, 2> gru;
  RowMatrix gru_mask;  // T x 2H2
  RowMatrix gru_out;   // T x 2H2 after dropout
  std::vector<Eigen::Index> lstm_argmax;  // per feature; -1 when T == 0
  std::vector<Eigen::Index> gru_argmax;
  Vector features;  // [pool(lstm_out); pool(gru_out)]
  Vector logits;
  Vector probs;
};

struct ForwardTrace {
  std::vector<SequenceTrace> sequences;
};

struct ForwardResult {
  DenseMatrix probabilities;  // batch x num_classes
  std::optional<ForwardTrace> trace;  // set in training mode only
};

/// Embedding lookup -> spatial dropout -> BiLSTM -> dropout -> BiGRU ->
/// dropout, with masked global max pooling of the BiLSTM and BiGRU output
/// sequences, concatenation, dense, softmax. Padding steps (index 0) are
/// skipped by the recurrences and excluded from pooling; an all-padding
/// sequence pools to zeros. Dropout masks are drawn only when `training`
/// and depend on (dropout_seed, position in batch).
ForwardResult forward(std::span<const EncodedExample> batch, const ModelParameters& params,
                      bool training, std::uint64_t dropout_seed = 0, unsigned threads = 1);

struct LossAndGrad {
  double loss = 0.0;            // mean cross-entropy
  std::vector<double> grad;     // trainable_size()
  std::size_t correct = 0;      // argmax hits in this batch
};

/// Training-mode forward plus backpropagation through time. Per-example
/// gradients are reduced in chunk order, so the result depends only on the
/// thread count, never on scheduling.
LossAndGrad loss_and_grad(std::span<const EncodedExample> batch, const ModelParameters& params,
                          std::uint64_t dropout_seed, unsigned threads = 1);

/// Loss only, same masks as loss_and_grad with the same seed.
double batch_loss(std::span<const EncodedExample> batch, const ModelParameters& params,
                  std::uint64_t dropout_seed);

/// Argmax with ties going to the lowest class code.
SentimentLabel argmax_label(std::span<const double> probabilities);

struct Prediction {
  std::vector<SentimentLabel> labels;
  double accuracy = 0.0;
  double loss = 0.0;  // mean cross-entropy, inference mode
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
};

Prediction predict(std::span<const EncodedExample> dataset, const ModelParameters& params,
                   unsigned threads = 1, std::size_t chunk = 256);

/// Checkpoint container, little-endian:
///   "EMBFCKPT" | u32 version=1
///   u64 max_len, emb_dim, lstm_units, gru_units, num_classes, vocab_rows, seed
///   u8 trainable_embeddings | f64 spatial_dropout_rate, dropout_rate
///   u32 block count, then per block:
///     u32 name length | name | u32 ndim=2 | u64 rows | u64 cols | f64 values
void save_checkpoint(const ModelParameters& params, std::ostream& out);
ModelParameters load_checkpoint(std::istream& in);

}  // namespace embfuse

#endif  // EMBFUSE_MODEL_HPP_
