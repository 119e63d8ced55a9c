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

#ifndef EMBFUSE_FUSION_HPP_
#define EMBFUSE_FUSION_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embfuse/corpus.hpp"
#include "embfuse/dense_matrix.hpp"
#include "embfuse/embedding_io.hpp"

namespace embfuse {

/// Alternative spellings tried, in order, when resolving a corpus token.
enum class CandidateKey { kAsIs, kLowercase, kCapitalized, kLemma };

/// Parses a comma-separated chain such as "as-is,lower,capitalized,lemma".
std::vector<CandidateKey> parse_candidate_chain(std::string_view spec);
std::string candidate_chain_to_string(std::span<const CandidateKey> chain);

struct FusionOptions {
  std::vector<CandidateKey> chain{CandidateKey::kAsIs, CandidateKey::kLowercase,
                                  CandidateKey::kCapitalized, CandidateKey::kLemma};
  // Every component of the unknown-word row.
  double unknown_fill = 0.0;
};

/// Which rule produced a word's row.
enum class Branch { kBoth, kFirstOnly, kSecondOnly, kUnknown };

std::string_view branch_name(Branch branch);

struct BranchCounts {
  std::size_t both = 0;
  std::size_t first_only = 0;
  std::size_t second_only = 0;
  std::size_t unknown = 0;
  // Extra tallies of how a key was found; they overlap the four above.
  std::size_t lemma_hit = 0;
  std::size_t case_hit = 0;

  std::size_t words() const { return both + first_only + second_only + unknown; }
  bool operator==(const BranchCounts&) const = default;
};

/// The embedding matrix handed to the model: one row per corpus index.
/// Row 0 (padding) is zero, row 1 and every unresolved word carry
/// `unknown_row_value`.
struct FusedMatrix {
  DenseMatrix matrix;
  std::size_t dim = 0;
  BranchCounts branch_counts;
  std::vector<double> unknown_row_value;
  std::vector<Branch> provenance;  // per corpus index; [0], [1] are kUnknown
};

/// (v1 + (v2 + (m1 - m2))) / 2, the averaged mean-shifted pair.
std::vector<double> fuse_both(std::span<const double> v1, std::span<const double> v2,
                              std::span<const double> m1, std::span<const double> m2);

/// v2 + (m1 - m2): the second table's vector moved onto the first table's mean.
std::vector<double> fuse_second_only(std::span<const double> v2, std::span<const double> m1,
                                     std::span<const double> m2);

/// Fills one row per dictionary word. For each word the first candidate
/// key found in either table decides the branch: both tables -> fuse_both,
/// first only -> first vector verbatim, second only -> fuse_second_only,
/// nothing -> unknown row.
FusedMatrix build_fused_matrix(const CorpusDictionaries& dicts, const EmbeddingTable& emb1,
                               const EmbeddingTable& emb2, std::size_t dim,
                               const FusionOptions& options = {});

/// Human readable coverage summary.
std::string fusion_report_text(const FusedMatrix& fused);
/// `branch,count,percent` rows followed by `unknown_rate,<rate>,`.
std::string fusion_report_csv(const FusedMatrix& fused);
double unknown_rate(const FusedMatrix& fused);

/// The fused matrix as a table keyed by corpus token (`<pad>`, `<unk>`
/// for the reserved rows), ready for write_word2vec_binary.
EmbeddingTable fused_to_table(const FusedMatrix& fused, const CorpusDictionaries& dicts);

/// Rebuilds the per-index matrix from a stored fused table by token lookup.
/// Throws kBadFormat when a dictionary token is missing.
DenseMatrix embedding_matrix_from_table(const EmbeddingTable& table,
                                        const CorpusDictionaries& dicts);

}  // namespace embfuse

#endif  // EMBFUSE_FUSION_HPP_
