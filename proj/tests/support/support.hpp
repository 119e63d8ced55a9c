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

// Test-only helpers: a synthetic corpus whose labels are fixed by a
// single token, and straightforward reference implementations that the
// library code is checked against.

#ifndef EMBFUSE_TESTS_SUPPORT_HPP_
#define EMBFUSE_TESTS_SUPPORT_HPP_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "embfuse/corpus.hpp"
#include "embfuse/dense_matrix.hpp"
#include "embfuse/embedding_io.hpp"
#include "embfuse/fusion.hpp"
#include "embfuse/model.hpp"
#include "embfuse/rng.hpp"

namespace embfuse::testing {

std::filesystem::path fixture_dir();

/// A fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

struct SyntheticCorpus {
  PreparedDataset data;
  DenseMatrix embedding;
};

/// `examples` sequences of 3..max_len filler tokens with exactly one of
/// three signal tokens inserted; the label is the signal's index. Split
/// 90/10 per class.
SyntheticCorpus make_signal_corpus(std::size_t examples, std::uint64_t seed,
                                   std::size_t max_len = 7, std::size_t emb_dim = 8,
                                   std::size_t fillers = 20);

/// emb 8, lstm 5, gru 4, no dropout.
ModelConfig tiny_config(std::size_t max_len = 7);

struct BlockCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences of batch_loss against loss_and_grad for every
/// trainable parameter, grouped by block. The relative error of one
/// component is |a - n| / max(|a|, |n|, floor).
std::vector<BlockCheck> gradient_check(const ModelParameters& params,
                                       std::span<const EncodedExample> batch,
                                       std::uint64_t dropout_seed, double step = 1e-5,
                                       double floor = 1e-6);

/// Same parameters with forward and backward directions exchanged, for
/// running on reversed sequences.
ModelParameters mirrored(const ModelParameters& params);

/// Non-padding part of each sequence reversed, padding kept on the left.
std::vector<EncodedExample> reversed(std::span<const EncodedExample> batch);

// --- scalar references --------------------------------------------------

struct RefLstm {
  std::vector<double> h, c;
};
/// W is 4H x D, U 4H x H, both row-major; gate order i, f, g, o.
RefLstm ref_lstm_step(const std::vector<double>& x, const std::vector<double>& h,
                      const std::vector<double>& c, const std::vector<double>& W,
                      const std::vector<double>& U, const std::vector<double>& b);

/// Gate order z, r, n with the reset gate applied to U_n h.
std::vector<double> ref_gru_step(const std::vector<double>& x, const std::vector<double>& h,
                                 const std::vector<double>& W, const std::vector<double>& U,
                                 const std::vector<double>& b);

/// Column mean accumulated row by row in file order.
std::vector<double> row_order_mean(const std::vector<std::vector<double>>& rows);

/// Compensated column mean.
std::vector<double> kahan_mean(const std::vector<std::vector<double>>& rows);

struct RefTable {
  std::vector<std::string> tokens;
  std::vector<std::vector<double>> rows;
};

struct RefFusion {
  std::vector<std::vector<double>> rows;  // one per corpus index
  std::vector<int> branch;                // 0 both, 1 first, 2 second, 3 unknown
};

/// Fusion written directly from the formulas, over ASCII tokens: keys are
/// tried as-is, lowercased, capitalized, then via `lemmas`. Both tables
/// must be non-empty.
RefFusion ref_fuse(const std::vector<std::string>& corpus_tokens,
                   const std::vector<std::string>& lemmas, const RefTable& t1,
                   const RefTable& t2, double unknown_fill);

EmbeddingTable to_table(const RefTable& t);

struct FusionInstance {
  std::vector<std::string> tokens;  // corpus tokens, index 2 onwards
  std::vector<std::string> lemmas;
  CorpusDictionaries dicts;
  RefTable t1, t2;
};

/// Corpus of up to `max_vocab` words and two tables of 1..`max_table` words
/// over a shared pool in mixed case, so every fallback key gets exercised.
/// With `dyadic` every value is a multiple of 1/8 in [-8, 8].
FusionInstance random_fusion_instance(Rng& rng, std::size_t max_vocab, std::size_t max_table,
                                      std::size_t max_dim, bool dyadic);

}  // namespace embfuse::testing

#endif  // EMBFUSE_TESTS_SUPPORT_HPP_
