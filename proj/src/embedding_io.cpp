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

#include "embfuse/embedding_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "embfuse/error.hpp"

namespace embfuse {

std::optional<std::span<const double>> EmbeddingTable::find(
    const std::string& token) const {
  const auto it = vocab.find(token);
  if (it == vocab.end()) return std::nullopt;
  return row(it->second);
}

bool EmbeddingTable::append(std::string token, std::span<const double> values) {
  if (values.size() != dim) {
    throw Error(ErrorCode::kDimMismatch,
                fmt::format("row for '{}' has {} components, table dim is {}",
                            token, values.size(), dim));
  }
  if (vocab.contains(token)) return false;
  vocab.emplace(token, tokens.size());
  tokens.push_back(std::move(token));
  matrix.insert(matrix.end(), values.begin(), values.end());
  return true;
}

void EmbeddingTable::refresh_mean() {
  mean = empty() ? std::vector<double>(dim, 0.0) : mean_vector(*this);
}

EmbeddingFormat parse_embedding_format(std::string_view name) {
  if (name == "glove") return EmbeddingFormat::kGlove;
  if (name == "w2v-bin") return EmbeddingFormat::kWord2VecBinary;
  if (name == "fasttext") return EmbeddingFormat::kFastText;
  throw Error(ErrorCode::kInvalidArgument,
              fmt::format("unknown embedding format '{}' (expected glove, "
                          "w2v-bin or fasttext)",
                          name));
}

std::string_view embedding_format_name(EmbeddingFormat format) {
  switch (format) {
    case EmbeddingFormat::kGlove: return "glove";
    case EmbeddingFormat::kWord2VecBinary: return "w2v-bin";
    case EmbeddingFormat::kFastText: return "fasttext";
  }
  return "?";
}

namespace {

bool is_field_space(char c) { return c == ' ' || c == '\t'; }

std::string_view trim_line(std::string_view line) {
  while (!line.empty() &&
         (line.back() == '\r' || line.back() == '\n' || is_field_space(line.back()))) {
    line.remove_suffix(1);
  }
  return line;
}

// Splits on runs of spaces/tabs. `fields` is reused across lines so the
// parser allocates O(dim) once.
void split_fields(std::string_view line, std::vector<std::string_view>& fields) {
  fields.clear();
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_field_space(line[i])) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && !is_field_space(line[j])) ++j;
    fields.push_back(line.substr(i, j - i));
    i = j;
  }
}

bool parse_double(std::string_view text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_size(std::string_view text, std::size_t& out) {
  const auto [ptr, ec] =
      std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

// Shared body of the glove and fastText readers. `expected_dim` of zero
// means "take it from the first line".
void parse_text_rows(std::istream& in, EmbeddingTable& table,
                     std::size_t first_line_no, std::size_t expected_dim,
                     ParseDiagnostics* diagnostics) {
  std::string line;
  std::vector<std::string_view> fields;
  std::vector<double> values;
  std::size_t line_no = first_line_no - 1;
  table.dim = expected_dim;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = trim_line(line);
    if (trimmed.empty()) continue;
    split_fields(trimmed, fields);
    const std::size_t components = fields.size() - 1;
    if (table.dim == 0) {
      if (components == 0) {
        throw Error(ErrorCode::kDimMismatch,
                    fmt::format("line {}: token without components", line_no),
                    static_cast<std::int64_t>(line_no));
      }
      table.dim = components;
    }
    values.resize(components);
    for (std::size_t j = 0; j < components; ++j) {
      if (!parse_double(fields[j + 1], values[j])) {
        throw Error(ErrorCode::kParseFloat,
                    fmt::format("line {}: cannot parse component {} ('{}')",
                                line_no, j + 1, fields[j + 1]),
                    static_cast<std::int64_t>(line_no));
      }
      if (!std::isfinite(values[j])) {
        throw Error(ErrorCode::kParseFloat,
                    fmt::format("line {}: non-finite component {}", line_no, j + 1),
                    static_cast<std::int64_t>(line_no));
      }
    }
    if (components != table.dim) {
      throw Error(ErrorCode::kDimMismatch,
                  fmt::format("line {}: {} components, expected {}", line_no,
                              components, table.dim),
                  static_cast<std::int64_t>(line_no));
    }
    if (!table.append(std::string(fields[0]), values) && diagnostics) {
      ++diagnostics->duplicate_tokens;
    }
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "read error while parsing embeddings");
}

}  // namespace

EmbeddingTable parse_glove_text(std::istream& in, ParseDiagnostics* diagnostics) {
  EmbeddingTable table;
  parse_text_rows(in, table, 1, 0, diagnostics);
  if (table.empty()) throw Error(ErrorCode::kEmptyInput, "embedding file has no rows");
  table.refresh_mean();
  return table;
}

EmbeddingTable parse_fasttext_text(std::istream& in, ParseDiagnostics* diagnostics) {
  std::string header;
  if (!std::getline(in, header)) {
    throw Error(ErrorCode::kEmptyInput, "fastText file is empty");
  }
  std::vector<std::string_view> fields;
  split_fields(trim_line(header), fields);
  std::size_t declared = 0;
  std::size_t dim = 0;
  if (fields.size() != 2 || !parse_size(fields[0], declared) ||
      !parse_size(fields[1], dim) || dim == 0) {
    throw Error(ErrorCode::kBadHeader,
                fmt::format("fastText header must be '<vocab> <dim>', got '{}'",
                            trim_line(header)));
  }
  EmbeddingTable table;
  ParseDiagnostics local;
  parse_text_rows(in, table, 2, dim, &local);
  if (table.empty()) throw Error(ErrorCode::kEmptyInput, "embedding file has no rows");
  // Duplicates still occupy a line, so compare against lines read.
  const std::size_t lines = table.rows() + local.duplicate_tokens;
  if (lines != declared) local.count_mismatch = std::make_pair(declared, lines);
  if (diagnostics) {
    diagnostics->duplicate_tokens += local.duplicate_tokens;
    diagnostics->count_mismatch = local.count_mismatch;
  }
  table.refresh_mean();
  return table;
}

EmbeddingTable parse_word2vec_binary(std::istream& in, ParseDiagnostics* diagnostics) {
  std::string header;
  if (!std::getline(in, header)) {
    throw Error(ErrorCode::kBadHeader, "word2vec file has no header line");
  }
  std::vector<std::string_view> fields;
  split_fields(trim_line(header), fields);
  std::size_t declared = 0;
  std::size_t dim = 0;
  if (fields.size() != 2 || !parse_size(fields[0], declared) ||
      !parse_size(fields[1], dim) || dim == 0) {
    throw Error(ErrorCode::kBadHeader,
                fmt::format("word2vec header must be '<vocab> <dim>', got '{}'",
                            trim_line(header)));
  }
  if (declared == 0) throw Error(ErrorCode::kEmptyInput, "word2vec file declares no rows");

  EmbeddingTable table;
  table.dim = dim;
  std::vector<char> raw(dim * sizeof(float));
  std::vector<double> values(dim);
  std::string token;
  for (std::size_t record = 1; record <= declared; ++record) {
    const auto truncated = [&] {
      return Error(ErrorCode::kTruncatedRecord,
                   fmt::format("record {} of {} is truncated", record, declared),
                   static_cast<std::int64_t>(record));
    };
    token.clear();
    int c;
    while ((c = in.get()) != std::char_traits<char>::eof() && c != ' ') {
      token.push_back(static_cast<char>(c));
    }
    if (c != ' ') throw truncated();
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw truncated();
    for (std::size_t j = 0; j < dim; ++j) {
      values[j] = detail::from_le_bytes<float>(raw.data() + j * sizeof(float));
      if (!std::isfinite(values[j])) {
        throw Error(ErrorCode::kNonFinite,
                    fmt::format("record {}: non-finite component {}", record, j + 1),
                    static_cast<std::int64_t>(record));
      }
    }
    if (in.peek() == '\n') in.get();
    if (!table.append(token, values) && diagnostics) ++diagnostics->duplicate_tokens;
  }
  table.refresh_mean();
  return table;
}

EmbeddingTable parse_embedding(std::istream& in, EmbeddingFormat format,
                               ParseDiagnostics* diagnostics) {
  switch (format) {
    case EmbeddingFormat::kGlove: return parse_glove_text(in, diagnostics);
    case EmbeddingFormat::kWord2VecBinary: return parse_word2vec_binary(in, diagnostics);
    case EmbeddingFormat::kFastText: return parse_fasttext_text(in, diagnostics);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown embedding format");
}

EmbeddingTable load_embedding_file(const std::filesystem::path& path,
                                   EmbeddingFormat format,
                                   ParseDiagnostics* diagnostics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  EmbeddingTable table = parse_embedding(in, format, diagnostics);
  table.name = path.stem().string();
  return table;
}

void write_word2vec_binary(const EmbeddingTable& table, std::ostream& out) {
  out << table.rows() << ' ' << table.dim << '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out.write(table.tokens[r].data(),
              static_cast<std::streamsize>(table.tokens[r].size()));
    out.put(' ');
    for (double v : table.row(r)) detail::write_le(out, static_cast<float>(v));
  }
  if (!out) throw Error(ErrorCode::kIo, "write error while writing word2vec binary");
}

std::vector<double> mean_vector(const EmbeddingTable& table) {
  if (table.empty()) throw Error(ErrorCode::kEmptyTable, "mean of an empty table");
  std::vector<double> mean(table.dim, 0.0);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto v = table.row(r);
    for (std::size_t j = 0; j < table.dim; ++j) mean[j] += v[j];
  }
  for (double& m : mean) m /= static_cast<double>(table.rows());
  return mean;
}

}  // namespace embfuse
