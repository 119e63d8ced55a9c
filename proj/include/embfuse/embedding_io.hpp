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

#ifndef EMBFUSE_EMBEDDING_IO_HPP_
#define EMBFUSE_EMBEDDING_IO_HPP_

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace embfuse {

/// A pretrained embedding loaded into memory: token -> row index plus a
/// dense row-major matrix of 64-bit values and its column means.
///
/// Rows are appended in file order; a token seen twice keeps its first
/// row. Once loaded the table is only read, so sharing a const reference
/// across threads is safe.
struct EmbeddingTable {
  std::string name;
  std::size_t dim = 0;
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::string> tokens;  // row -> token
  std::vector<double> matrix;       // rows() * dim, row-major
  std::vector<double> mean;         // length dim

  std::size_t rows() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }

  std::span<const double> row(std::size_t r) const {
    return {matrix.data() + r * dim, dim};
  }

  /// Row for `token`, or nullopt if absent. Byte-exact comparison.
  std::optional<std::span<const double>> find(const std::string& token) const;

  /// Appends a row unless the token is already present. Returns false for
  /// a duplicate. Does not update `mean`.
  bool append(std::string token, std::span<const double> values);

  /// Recomputes `mean` from the matrix. A table with no rows gets a zero
  /// mean of length dim.
  void refresh_mean();
};

enum class EmbeddingFormat { kGlove, kWord2VecBinary, kFastText };

/// Accepts "glove", "w2v-bin" and "fasttext".
EmbeddingFormat parse_embedding_format(std::string_view name);
std::string_view embedding_format_name(EmbeddingFormat format);

/// Non-fatal findings collected while parsing.
struct ParseDiagnostics {
  std::size_t duplicate_tokens = 0;
  // (declared, actual) when a fastText header disagrees with the body.
  std::optional<std::pair<std::size_t, std::size_t>> count_mismatch;
};

/// `token c1 ... cd` per line, no header. Throws kEmptyInput,
/// kDimMismatch(line) or kParseFloat(line).
EmbeddingTable parse_glove_text(std::istream& in,
                                ParseDiagnostics* diagnostics = nullptr);

/// word2vec binary: `vocab dim\n`, then per record `token ` followed by dim
/// little-endian float32 values and an optional newline. Throws
/// kBadHeader, kEmptyInput or kTruncatedRecord(record).
EmbeddingTable parse_word2vec_binary(std::istream& in,
                                     ParseDiagnostics* diagnostics = nullptr);

/// fastText .vec: a `vocab dim` header line, then glove-style lines. A
/// header count that disagrees with the body is reported, not thrown.
EmbeddingTable parse_fasttext_text(std::istream& in,
                                   ParseDiagnostics* diagnostics = nullptr);

EmbeddingTable parse_embedding(std::istream& in, EmbeddingFormat format,
                               ParseDiagnostics* diagnostics = nullptr);

/// Opens `path` and parses it; the table is named after the file stem.
EmbeddingTable load_embedding_file(const std::filesystem::path& path,
                                   EmbeddingFormat format,
                                   ParseDiagnostics* diagnostics = nullptr);

/// Writes the layout read by parse_word2vec_binary, narrowing to float32.
/// No newline follows a record.
void write_word2vec_binary(const EmbeddingTable& table, std::ostream& out);

/// Column-wise arithmetic mean over all rows. Throws kEmptyTable.
std::vector<double> mean_vector(const EmbeddingTable& table);

}  // namespace embfuse

#endif  // EMBFUSE_EMBEDDING_IO_HPP_
