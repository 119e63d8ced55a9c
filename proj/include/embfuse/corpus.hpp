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

#ifndef EMBFUSE_CORPUS_HPP_
#define EMBFUSE_CORPUS_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace embfuse {

struct ReviewRecord {
  std::string place_name;
  std::string title;
  std::string review_text;
  int rate = 0;  // stars, 1..5
};

enum class SentimentLabel : std::int32_t { kBad = 0, kNeutral = 1, kGood = 2 };

inline constexpr std::size_t kNumClasses = 3;

std::string_view label_name(SentimentLabel label);
/// Throws kOutOfRange for codes outside {0, 1, 2}.
SentimentLabel label_from_code(int code);
inline int label_code(SentimentLabel label) { return static_cast<int>(label); }

/// Counts from load_reviews_csv.
struct LoadReport {
  std::size_t rows = 0;     // data rows seen
  std::size_t dropped = 0;  // rows failing the record invariants
};

/// Reads a review CSV (RFC 4180 quoting, optional UTF-8 BOM). The header
/// must name the place, title, review and rate columns in any order;
/// names are matched after lowercasing and dropping non-alphanumerics, so
/// "Name of the shop place" and "place_name" both resolve to the place.
/// Rows with a rate outside 1..5 or an empty review are dropped.
std::vector<ReviewRecord> load_reviews_csv(std::istream& in,
                                           LoadReport* report = nullptr);

struct PlaceReport {
  std::string modal_place;
  std::size_t kept = 0;
  std::size_t total = 0;
  double share = 0.0;  // kept / total
  bool tie = false;
  std::vector<std::string> tied_places;  // sorted, only when tie
};

struct FilterResult {
  std::vector<ReviewRecord> records;
  PlaceReport report;
};

/// Keeps the records of the most frequent place (trimmed, byte-exact).
/// A tie resolves to the lexicographically smallest name and is flagged.
FilterResult filter_dominant_place(std::span<const ReviewRecord> records);

/// Star -> class mapping. Defaults to 1-2 bad, 3 neutral, 4-5 good.
struct RateBuckets {
  int bad_max = 2;
  int neutral_max = 3;

  /// Parses "1-2/3/4-5" style specs; the three ranges must tile 1..5.
  static RateBuckets parse(std::string_view spec);
  std::string to_string() const;
};

/// Throws kOutOfRange for rates outside 1..5.
SentimentLabel rate_to_label(int rate, const RateBuckets& buckets = {});

/// Splits on Unicode whitespace and punctuation, drops punctuation, keeps
/// the original case. An apostrophe (' or U+2019) between two word
/// characters stays inside the token.
std::vector<std::string> tokenize(std::string_view text);

/// Case mapping over ASCII and Latin-1 letters; other bytes pass through.
std::string to_lower_utf8(std::string_view text);
/// First letter upper-cased, the rest lower-cased.
std::string capitalize_utf8(std::string_view text);

using Lemmatizer = std::function<std::string(std::string_view)>;

/// Rule-based English suffix stripper over an already lowercased token:
/// -ies/-ied -> y, -sses/-xes/-zes/-ches/-shes drop "es", plain -s drops
/// (not after s, u or i), -ing and -ed drop and undouble a trailing
/// doubled consonant other than l, s, z. Tokens of three bytes or fewer
/// are returned unchanged.
std::string rule_lemmatize(std::string_view lowercase_token);

/// Lemmatizer backed by `token TAB lemma` lines. Lookups are on the
/// lowercased token; misses return the lowercased token itself.
Lemmatizer load_lemma_table(std::istream& in);

inline constexpr std::int32_t kPadIndex = 0;
inline constexpr std::int32_t kUnknownIndex = 1;
inline constexpr std::size_t kDefaultMaxLen = 60;

struct CorpusDictionaries {
  std::unordered_map<std::string, std::int32_t> dict_words;
  std::unordered_map<std::string, std::string> lemma_dict;
  // index -> token; entries 0 and 1 are "<pad>" and "<unk>".
  std::vector<std::string> index_to_token{"<pad>", "<unk>"};

  std::size_t vocab_size() const { return index_to_token.size(); }
};

/// Assigns indices 2.. in first-seen order over original-case tokens and
/// maps every distinct token to lemmatizer(lowercase(token)).
CorpusDictionaries build_dictionaries(
    std::span<const std::vector<std::string>> token_lists,
    const Lemmatizer& lemmatizer = rule_lemmatize);

struct EncodedExample {
  std::vector<std::int32_t> indices;
  SentimentLabel label = SentimentLabel::kBad;
};

/// Maps tokens to indices (unknown -> 1), keeps the first max_len and
/// left-pads with 0 up to max_len.
std::vector<std::int32_t> encode_sequence(std::span<const std::string> tokens,
                                          const CorpusDictionaries& dicts,
                                          std::size_t max_len = kDefaultMaxLen);

struct TrainTestSplit {
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> test;
};

/// Stratified split: each label contributes round(n_label * train_fraction)
/// examples to train, chosen by a seeded shuffle. Both halves keep the
/// input order. Throws kTooFewExamples below 10 examples.
TrainTestSplit split_train_test(std::span<const EncodedExample> examples,
                                double train_fraction, std::uint64_t seed);

struct PrepareOptions {
  RateBuckets buckets;
  bool use_title = true;
  std::size_t max_len = kDefaultMaxLen;
  double train_fraction = 0.9;
  std::uint64_t seed = 0;
  Lemmatizer lemmatizer = rule_lemmatize;
};

/// Encoded corpus: dictionaries plus train/test examples. This is what the
/// dataset file stores.
struct PreparedDataset {
  CorpusDictionaries dicts;
  std::size_t max_len = kDefaultMaxLen;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> test;
};

struct PrepareReport {
  LoadReport load;
  PlaceReport place;
};

/// filter -> tokenize -> dictionaries -> encode -> split.
PreparedDataset prepare_dataset(std::span<const ReviewRecord> records,
                                const PrepareOptions& options,
                                PlaceReport* place_report = nullptr);

/// Dataset file, version 1. Line oriented text:
///
///   embfuse-dataset 1
///   vocab_size <V>
///   max_len <L>
///   train <n>
///   test <m>
///   dictionary
///   <index> TAB <token> TAB <lemma>        (V-2 lines, index 2..V-1)
///   examples train
///   <label> TAB <i1> <i2> ... <iL>          (n lines)
///   examples test
///   ...                                     (m lines)
///   end
void write_dataset(const PreparedDataset& dataset, std::ostream& out);
PreparedDataset read_dataset(std::istream& in);

}  // namespace embfuse

#endif  // EMBFUSE_CORPUS_HPP_
