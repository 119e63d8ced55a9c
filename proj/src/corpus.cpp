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

#include "embfuse/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "embfuse/error.hpp"
#include "embfuse/rng.hpp"

namespace embfuse {

std::string_view label_name(SentimentLabel label) {
  switch (label) {
    case SentimentLabel::kBad: return "bad";
    case SentimentLabel::kNeutral: return "neutral";
    case SentimentLabel::kGood: return "good";
  }
  return "?";
}

SentimentLabel label_from_code(int code) {
  if (code < 0 || code > 2) {
    throw Error(ErrorCode::kOutOfRange, fmt::format("label code {} not in 0..2", code), code);
  }
  return static_cast<SentimentLabel>(code);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

// One CSV record, or nullopt at end of input. Quoted fields may span lines.
std::optional<std::vector<std::string>> read_csv_record(std::istream& in) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool any = false;
  int c;
  while ((c = in.get()) != std::char_traits<char>::eof()) {
    any = true;
    const char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields.push_back(std::move(field));
      return fields;
    } else {
      field.push_back(ch);
    }
  }
  if (!any) return std::nullopt;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  fields.push_back(std::move(field));
  return fields;
}

std::string normalize_header(std::string_view name) {
  std::string out;
  for (char c : name) {
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) out.push_back(c);
    if (c >= 'A' && c <= 'Z') out.push_back(static_cast<char>(c + 0x20));
  }
  return out;
}

enum Column { kPlace = 0, kTitle = 1, kReview = 2, kRate = 3 };

constexpr std::array<std::string_view, 4> kCanonicalColumn{"Place", "Title", "Review",
                                                           "Rate"};

std::optional<Column> classify_header(std::string_view raw) {
  static const std::map<std::string, Column, std::less<>> aliases{
      {"nameoftheshopplace", kPlace}, {"place", kPlace},        {"placename", kPlace},
      {"shopplace", kPlace},          {"shop", kPlace},         {"shopname", kPlace},
      {"name", kPlace},               {"title", kTitle},        {"titleofthereview", kTitle},
      {"reviewtitle", kTitle},        {"review", kReview},      {"reviewtext", kReview},
      {"text", kReview},              {"rate", kRate},          {"rating", kRate},
      {"stars", kRate},
  };
  const auto it = aliases.find(normalize_header(raw));
  if (it == aliases.end()) return std::nullopt;
  return it->second;
}

std::optional<int> parse_rate(std::string_view text) {
  text = trim(text);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
  if (value != std::floor(value) || value < -1e9 || value > 1e9) return std::nullopt;
  return static_cast<int>(value);
}

}  // namespace

std::vector<ReviewRecord> load_reviews_csv(std::istream& in, LoadReport* report) {
  auto header = read_csv_record(in);
  if (!header) throw Error(ErrorCode::kEmptyFile, "review CSV is empty");
  if (!header->empty() && header->front().starts_with("\xEF\xBB\xBF")) {
    header->front().erase(0, 3);
  }
  std::array<std::optional<std::size_t>, 4> position;
  for (std::size_t i = 0; i < header->size(); ++i) {
    if (const auto col = classify_header((*header)[i]); col && !position[*col]) {
      position[*col] = i;
    }
  }
  for (std::size_t c = 0; c < position.size(); ++c) {
    if (!position[c]) {
      throw Error(ErrorCode::kMissingColumn,
                  fmt::format("missing column \"{}\"", kCanonicalColumn[c]));
    }
  }

  LoadReport counts;
  std::vector<ReviewRecord> records;
  while (auto row = read_csv_record(in)) {
    if (row->size() == 1 && trim(row->front()).empty()) continue;  // blank line
    ++counts.rows;
    const auto field = [&](Column c) -> std::string_view {
      const std::size_t p = *position[c];
      return p < row->size() ? std::string_view((*row)[p]) : std::string_view();
    };
    const auto rate = parse_rate(field(kRate));
    const std::string_view review = trim(field(kReview));
    if (!rate || *rate < 1 || *rate > 5 || review.empty()) {
      ++counts.dropped;
      continue;
    }
    records.push_back(ReviewRecord{std::string(trim(field(kPlace))),
                                   std::string(trim(field(kTitle))),
                                   std::string(review), *rate});
  }
  if (report) *report = counts;
  return records;
}

FilterResult filter_dominant_place(std::span<const ReviewRecord> records) {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "no records to filter");
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& r : records) ++counts[std::string(trim(r.place_name))];

  std::size_t best = 0;
  for (const auto& [name, n] : counts) best = std::max(best, n);
  FilterResult result;
  for (const auto& [name, n] : counts) {
    if (n == best) result.report.tied_places.push_back(name);
  }
  // std::map iterates in byte order, so the first modal name is the smallest.
  result.report.modal_place = result.report.tied_places.front();
  result.report.tie = result.report.tied_places.size() > 1;
  if (!result.report.tie) result.report.tied_places.clear();

  for (const auto& r : records) {
    if (trim(r.place_name) == result.report.modal_place) result.records.push_back(r);
  }
  result.report.kept = result.records.size();
  result.report.total = records.size();
  result.report.share =
      static_cast<double>(result.report.kept) / static_cast<double>(result.report.total);
  return result;
}

namespace {

// "a-b" or "a" -> [a, b]
std::optional<std::pair<int, int>> parse_range(std::string_view s) {
  const auto dash = s.find('-');
  const auto to_int = [](std::string_view t) -> std::optional<int> {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
  };
  if (dash == std::string_view::npos) {
    const auto v = to_int(s);
    if (!v) return std::nullopt;
    return std::make_pair(*v, *v);
  }
  const auto lo = to_int(s.substr(0, dash));
  const auto hi = to_int(s.substr(dash + 1));
  if (!lo || !hi) return std::nullopt;
  return std::make_pair(*lo, *hi);
}

}  // namespace

RateBuckets RateBuckets::parse(std::string_view spec) {
  const auto fail = [&] {
    return Error(ErrorCode::kInvalidArgument,
                 fmt::format("bucket spec '{}' must tile 1..5 as bad/neutral/good, "
                             "e.g. 1-2/3/4-5",
                             spec));
  };
  std::vector<std::pair<int, int>> ranges;
  std::size_t start = 0;
  while (true) {
    const auto slash = spec.find('/', start);
    const auto range = parse_range(
        spec.substr(start, slash == std::string_view::npos ? spec.npos : slash - start));
    if (!range) throw fail();
    ranges.push_back(*range);
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  if (ranges.size() != 3 || ranges[0].first != 1 || ranges[2].second != 5) throw fail();
  for (std::size_t i = 0; i < 3; ++i) {
    if (ranges[i].first > ranges[i].second) throw fail();
    if (i > 0 && ranges[i].first != ranges[i - 1].second + 1) throw fail();
  }
  return RateBuckets{ranges[0].second, ranges[1].second};
}

std::string RateBuckets::to_string() const {
  const auto range = [](int lo, int hi) {
    return lo == hi ? fmt::format("{}", lo) : fmt::format("{}-{}", lo, hi);
  };
  return range(1, bad_max) + "/" + range(bad_max + 1, neutral_max) + "/" +
         range(neutral_max + 1, 5);
}

SentimentLabel rate_to_label(int rate, const RateBuckets& buckets) {
  if (rate < 1 || rate > 5) {
    throw Error(ErrorCode::kOutOfRange, fmt::format("rate {} not in 1..5", rate), rate);
  }
  if (rate <= buckets.bad_max) return SentimentLabel::kBad;
  if (rate <= buckets.neutral_max) return SentimentLabel::kNeutral;
  return SentimentLabel::kGood;
}

CorpusDictionaries build_dictionaries(std::span<const std::vector<std::string>> token_lists,
                                      const Lemmatizer& lemmatizer) {
  CorpusDictionaries dicts;
  for (const auto& tokens : token_lists) {
    for (const auto& token : tokens) {
      const auto index = static_cast<std::int32_t>(dicts.index_to_token.size());
      if (dicts.dict_words.emplace(token, index).second) {
        dicts.index_to_token.push_back(token);
        dicts.lemma_dict.emplace(token, lemmatizer(to_lower_utf8(token)));
      }
    }
  }
  return dicts;
}

std::vector<std::int32_t> encode_sequence(std::span<const std::string> tokens,
                                          const CorpusDictionaries& dicts,
                                          std::size_t max_len) {
  const std::size_t n = std::min(tokens.size(), max_len);
  std::vector<std::int32_t> out(max_len, kPadIndex);
  const std::size_t offset = max_len - n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = dicts.dict_words.find(tokens[i]);
    out[offset + i] = it == dicts.dict_words.end() ? kUnknownIndex : it->second;
  }
  return out;
}

TrainTestSplit split_train_test(std::span<const EncodedExample> examples,
                                double train_fraction, std::uint64_t seed) {
  if (examples.size() < 10) {
    throw Error(ErrorCode::kTooFewExamples,
                fmt::format("need at least 10 examples to split, got {}", examples.size()),
                static_cast<std::int64_t>(examples.size()));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("train fraction {} not in (0, 1)", train_fraction));
  }
  std::vector<bool> in_train(examples.size(), false);
  for (std::size_t label = 0; label < kNumClasses; ++label) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      if (static_cast<std::size_t>(label_code(examples[i].label)) == label) members.push_back(i);
    }
    Rng rng(derive_seed(seed, {0x5b117, label}));
    rng.shuffle(std::span<std::size_t>(members));
    const auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(members.size()) * train_fraction));
    for (std::size_t k = 0; k < n_train; ++k) in_train[members[k]] = true;
  }
  TrainTestSplit split;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    (in_train[i] ? split.train : split.test).push_back(examples[i]);
  }
  return split;
}

PreparedDataset prepare_dataset(std::span<const ReviewRecord> records,
                                const PrepareOptions& options, PlaceReport* place_report) {
  FilterResult filtered = filter_dominant_place(records);
  if (place_report) *place_report = filtered.report;

  std::vector<std::vector<std::string>> token_lists;
  token_lists.reserve(filtered.records.size());
  for (const auto& r : filtered.records) {
    token_lists.push_back(tokenize(options.use_title ? r.title + " " + r.review_text
                                                     : r.review_text));
  }

  PreparedDataset dataset;
  dataset.max_len = options.max_len;
  dataset.dicts = build_dictionaries(token_lists, options.lemmatizer);

  std::vector<EncodedExample> encoded;
  encoded.reserve(token_lists.size());
  for (std::size_t i = 0; i < token_lists.size(); ++i) {
    encoded.push_back({encode_sequence(token_lists[i], dataset.dicts, options.max_len),
                       rate_to_label(filtered.records[i].rate, options.buckets)});
  }
  auto split = split_train_test(encoded, options.train_fraction, options.seed);
  dataset.train = std::move(split.train);
  dataset.test = std::move(split.test);
  return dataset;
}

namespace {

constexpr std::string_view kDatasetMagic = "embfuse-dataset";
constexpr int kDatasetVersion = 1;

void write_examples(std::ostream& out, const std::vector<EncodedExample>& examples) {
  for (const auto& ex : examples) {
    out << label_code(ex.label) << '\t';
    for (std::size_t i = 0; i < ex.indices.size(); ++i) {
      if (i) out << ' ';
      out << ex.indices[i];
    }
    out << '\n';
  }
}

class DatasetReader {
 public:
  explicit DatasetReader(std::istream& in) : in_(in) {}

  std::string line() {
    std::string s;
    if (!std::getline(in_, s)) fail("unexpected end of file");
    ++line_no_;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
  }

  void expect(std::string_view want) {
    if (line() != want) fail(fmt::format("expected '{}'", want));
  }

  std::size_t keyed(std::string_view key) {
    const std::string s = line();
    std::istringstream ls(s);
    std::string k;
    long long v = -1;
    if (!(ls >> k >> v) || k != key || v < 0) fail(fmt::format("expected '{} <n>'", key));
    return static_cast<std::size_t>(v);
  }

  EncodedExample example(std::size_t max_len, std::size_t vocab_size) {
    const std::string s = line();
    const auto tab = s.find('\t');
    if (tab == std::string::npos) fail("example line without label");
    EncodedExample ex;
    int code = -1;
    std::from_chars(s.data(), s.data() + tab, code);
    if (code < 0 || code > 2) fail("bad label code");
    ex.label = static_cast<SentimentLabel>(code);
    std::istringstream ls(s.substr(tab + 1));
    std::int64_t idx;
    while (ls >> idx) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= vocab_size) fail("index out of range");
      ex.indices.push_back(static_cast<std::int32_t>(idx));
    }
    if (ex.indices.size() != max_len) fail("example length differs from max_len");
    return ex;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::kBadFormat,
                fmt::format("dataset file line {}: {}", line_no_, what),
                static_cast<std::int64_t>(line_no_));
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

}  // namespace

void write_dataset(const PreparedDataset& dataset, std::ostream& out) {
  out << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  out << "vocab_size " << dataset.dicts.vocab_size() << '\n';
  out << "max_len " << dataset.max_len << '\n';
  out << "train " << dataset.train.size() << '\n';
  out << "test " << dataset.test.size() << '\n';
  out << "dictionary\n";
  for (std::size_t i = 2; i < dataset.dicts.vocab_size(); ++i) {
    const std::string& token = dataset.dicts.index_to_token[i];
    const auto lemma = dataset.dicts.lemma_dict.find(token);
    out << i << '\t' << token << '\t'
        << (lemma == dataset.dicts.lemma_dict.end() ? token : lemma->second) << '\n';
  }
  out << "examples train\n";
  write_examples(out, dataset.train);
  out << "examples test\n";
  write_examples(out, dataset.test);
  out << "end\n";
  if (!out) throw Error(ErrorCode::kIo, "write error while writing dataset");
}

PreparedDataset read_dataset(std::istream& in) {
  DatasetReader reader(in);
  reader.expect(fmt::format("{} {}", kDatasetMagic, kDatasetVersion));
  PreparedDataset dataset;
  const std::size_t vocab_size = reader.keyed("vocab_size");
  dataset.max_len = reader.keyed("max_len");
  const std::size_t n_train = reader.keyed("train");
  const std::size_t n_test = reader.keyed("test");
  if (vocab_size < 2 || dataset.max_len == 0) reader.fail("bad header values");
  reader.expect("dictionary");
  for (std::size_t i = 2; i < vocab_size; ++i) {
    const std::string s = reader.line();
    const auto t1 = s.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : s.find('\t', t1 + 1);
    if (t2 == std::string::npos) reader.fail("dictionary line needs index, token, lemma");
    if (s.substr(0, t1) != std::to_string(i)) reader.fail("dictionary indices not contiguous");
    std::string token = s.substr(t1 + 1, t2 - t1 - 1);
    dataset.dicts.lemma_dict.emplace(token, s.substr(t2 + 1));
    if (!dataset.dicts.dict_words.emplace(token, static_cast<std::int32_t>(i)).second) {
      reader.fail("duplicate dictionary token");
    }
    dataset.dicts.index_to_token.push_back(std::move(token));
  }
  reader.expect("examples train");
  for (std::size_t i = 0; i < n_train; ++i) {
    dataset.train.push_back(reader.example(dataset.max_len, vocab_size));
  }
  reader.expect("examples test");
  for (std::size_t i = 0; i < n_test; ++i) {
    dataset.test.push_back(reader.example(dataset.max_len, vocab_size));
  }
  reader.expect("end");
  return dataset;
}

}  // namespace embfuse
