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

#include "embfuse/fusion.hpp"

#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "embfuse/error.hpp"

namespace embfuse {

std::vector<CandidateKey> parse_candidate_chain(std::string_view spec) {
  std::vector<CandidateKey> chain;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string_view item =
        spec.substr(start, comma == std::string_view::npos ? spec.npos : comma - start);
    if (item == "as-is") {
      chain.push_back(CandidateKey::kAsIs);
    } else if (item == "lower") {
      chain.push_back(CandidateKey::kLowercase);
    } else if (item == "capitalized") {
      chain.push_back(CandidateKey::kCapitalized);
    } else if (item == "lemma") {
      chain.push_back(CandidateKey::kLemma);
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("unknown candidate key '{}' (expected as-is, lower, "
                              "capitalized, lemma)",
                              item));
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return chain;
}

std::string candidate_chain_to_string(std::span<const CandidateKey> chain) {
  std::string out;
  for (const auto key : chain) {
    if (!out.empty()) out += ',';
    switch (key) {
      case CandidateKey::kAsIs: out += "as-is"; break;
      case CandidateKey::kLowercase: out += "lower"; break;
      case CandidateKey::kCapitalized: out += "capitalized"; break;
      case CandidateKey::kLemma: out += "lemma"; break;
    }
  }
  return out;
}

std::string_view branch_name(Branch branch) {
  switch (branch) {
    case Branch::kBoth: return "both";
    case Branch::kFirstOnly: return "first_only";
    case Branch::kSecondOnly: return "second_only";
    case Branch::kUnknown: return "unknown";
  }
  return "?";
}

namespace {

void check_dims(std::size_t dim, std::initializer_list<std::span<const double>> vectors) {
  for (const auto& v : vectors) {
    if (v.size() != dim) {
      throw Error(ErrorCode::kDimMismatch,
                  fmt::format("vector of length {} where {} was expected", v.size(), dim));
    }
  }
}

}  // namespace

std::vector<double> fuse_both(std::span<const double> v1, std::span<const double> v2,
                              std::span<const double> m1, std::span<const double> m2) {
  check_dims(v1.size(), {v2, m1, m2});
  std::vector<double> out(v1.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (v1[j] + (v2[j] + (m1[j] - m2[j]))) / 2.0;
  }
  return out;
}

std::vector<double> fuse_second_only(std::span<const double> v2, std::span<const double> m1,
                                     std::span<const double> m2) {
  check_dims(v2.size(), {m1, m2});
  std::vector<double> out(v2.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = v2[j] + (m1[j] - m2[j]);
  return out;
}

FusedMatrix build_fused_matrix(const CorpusDictionaries& dicts, const EmbeddingTable& emb1,
                               const EmbeddingTable& emb2, std::size_t dim,
                               const FusionOptions& options) {
  if (emb1.dim != dim || emb2.dim != dim) {
    throw Error(ErrorCode::kDimMismatch,
                fmt::format("table dims {} and {} do not match requested dim {}", emb1.dim,
                            emb2.dim, dim));
  }
  if (dicts.dict_words.empty()) {
    throw Error(ErrorCode::kEmptyDictionaries, "corpus dictionary has no words");
  }
  if (!std::isfinite(options.unknown_fill)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown fill must be finite");
  }

  const std::size_t vocab = dicts.vocab_size();
  FusedMatrix fused;
  fused.dim = dim;
  fused.matrix = DenseMatrix(vocab, dim);
  fused.unknown_row_value.assign(dim, options.unknown_fill);
  fused.provenance.assign(vocab, Branch::kUnknown);
  std::copy(fused.unknown_row_value.begin(), fused.unknown_row_value.end(),
            fused.matrix.row(kUnknownIndex).begin());

  const auto& m1 = emb1.mean;
  const auto& m2 = emb2.mean;
  for (std::size_t w = 2; w < vocab; ++w) {
    const std::string& token = dicts.index_to_token[w];
    std::optional<std::span<const double>> v1;
    std::optional<std::span<const double>> v2;
    std::optional<CandidateKey> hit;
    for (const CandidateKey kind : options.chain) {
      std::string key;
      switch (kind) {
        case CandidateKey::kAsIs: key = token; break;
        case CandidateKey::kLowercase: key = to_lower_utf8(token); break;
        case CandidateKey::kCapitalized: key = capitalize_utf8(token); break;
        case CandidateKey::kLemma: {
          const auto it = dicts.lemma_dict.find(token);
          if (it == dicts.lemma_dict.end()) continue;
          key = it->second;
          break;
        }
      }
      v1 = emb1.find(key);
      v2 = emb2.find(key);
      if (v1 || v2) {
        hit = kind;
        break;
      }
    }

    std::span<double> out = fused.matrix.row(w);
    Branch branch;
    if (v1 && v2) {
      branch = Branch::kBoth;
      const auto row = fuse_both(*v1, *v2, m1, m2);
      std::copy(row.begin(), row.end(), out.begin());
    } else if (v1) {
      branch = Branch::kFirstOnly;
      std::copy(v1->begin(), v1->end(), out.begin());
    } else if (v2) {
      branch = Branch::kSecondOnly;
      const auto row = fuse_second_only(*v2, m1, m2);
      std::copy(row.begin(), row.end(), out.begin());
    } else {
      branch = Branch::kUnknown;
      std::copy(fused.unknown_row_value.begin(), fused.unknown_row_value.end(), out.begin());
    }
    fused.provenance[w] = branch;

    auto& counts = fused.branch_counts;
    switch (branch) {
      case Branch::kBoth: ++counts.both; break;
      case Branch::kFirstOnly: ++counts.first_only; break;
      case Branch::kSecondOnly: ++counts.second_only; break;
      case Branch::kUnknown: ++counts.unknown; break;
    }
    if (hit == CandidateKey::kLemma) ++counts.lemma_hit;
    if (hit == CandidateKey::kLowercase || hit == CandidateKey::kCapitalized) {
      ++counts.case_hit;
    }
  }
  return fused;
}

double unknown_rate(const FusedMatrix& fused) {
  const std::size_t words = fused.branch_counts.words();
  return words == 0 ? 0.0
                    : static_cast<double>(fused.branch_counts.unknown) /
                          static_cast<double>(words);
}

namespace {

struct ReportRow {
  std::string_view name;
  std::size_t count;
};

std::vector<ReportRow> report_rows(const BranchCounts& c) {
  return {{"both", c.both},           {"first_only", c.first_only},
          {"second_only", c.second_only}, {"unknown", c.unknown},
          {"lemma_hit", c.lemma_hit}, {"case_hit", c.case_hit}};
}

double percent(std::size_t count, std::size_t words) {
  return words == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(words);
}

}  // namespace

std::string fusion_report_text(const FusedMatrix& fused) {
  const std::size_t words = fused.branch_counts.words();
  std::string out = fmt::format("fused {} words into a {}x{} matrix\n", words,
                                fused.matrix.rows, fused.dim);
  for (const auto& r : report_rows(fused.branch_counts)) {
    out += fmt::format("  {:<12} {:>8}  {:6.2f}%\n", r.name, r.count, percent(r.count, words));
  }
  out += fmt::format("  unknown rate {:.4f}\n", unknown_rate(fused));
  return out;
}

std::string fusion_report_csv(const FusedMatrix& fused) {
  const std::size_t words = fused.branch_counts.words();
  std::string out = "branch,count,percent\n";
  for (const auto& r : report_rows(fused.branch_counts)) {
    out += fmt::format("{},{},{:.6f}\n", r.name, r.count, percent(r.count, words));
  }
  out += fmt::format("words,{},100.000000\n", words);
  out += fmt::format("unknown_rate,{:.6f},\n", unknown_rate(fused));
  return out;
}

EmbeddingTable fused_to_table(const FusedMatrix& fused, const CorpusDictionaries& dicts) {
  if (dicts.vocab_size() != fused.matrix.rows) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("dictionary has {} entries, fused matrix {} rows",
                            dicts.vocab_size(), fused.matrix.rows));
  }
  EmbeddingTable table;
  table.name = "fused";
  table.dim = fused.dim;
  for (std::size_t w = 0; w < fused.matrix.rows; ++w) {
    table.append(dicts.index_to_token[w], fused.matrix.row(w));
  }
  table.refresh_mean();
  return table;
}

DenseMatrix embedding_matrix_from_table(const EmbeddingTable& table,
                                        const CorpusDictionaries& dicts) {
  DenseMatrix m(dicts.vocab_size(), table.dim);
  for (std::size_t w = 0; w < dicts.vocab_size(); ++w) {
    const auto row = table.find(dicts.index_to_token[w]);
    if (!row) {
      throw Error(ErrorCode::kBadFormat,
                  fmt::format("fused table has no row for dictionary token '{}'",
                              dicts.index_to_token[w]));
    }
    std::copy(row->begin(), row->end(), m.row(w).begin());
  }
  return m;
}

}  // namespace embfuse
