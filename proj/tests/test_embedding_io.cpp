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

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <fstream>
#include <sstream>
#include <streambuf>

#include "embfuse/embedding_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/rng.hpp"
#include "support.hpp"

using namespace embfuse;

namespace {

EmbeddingTable glove(const std::string& text, ParseDiagnostics* diag = nullptr) {
  std::istringstream in(text);
  return parse_glove_text(in, diag);
}

EmbeddingTable fasttext(const std::string& text, ParseDiagnostics* diag = nullptr) {
  std::istringstream in(text);
  return parse_fasttext_text(in, diag);
}

EmbeddingTable w2v(const std::string& bytes, ParseDiagnostics* diag = nullptr) {
  std::istringstream in(bytes, std::ios::binary);
  return parse_word2vec_binary(in, diag);
}

std::string le32(float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  std::string s(4, '\0');
  for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  return s;
}

std::string write_bin(const EmbeddingTable& t) {
  std::ostringstream out(std::ios::binary);
  write_word2vec_binary(t, out);
  return out.str();
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kInvalidArgument;
}

std::int64_t detail_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.detail();
  }
  FAIL("no error thrown");
  return -1;
}

// Produces glove lines on demand; never holds more than one line.
class GeneratedLines : public std::streambuf {
 public:
  GeneratedLines(std::size_t lines, std::size_t dim) : lines_(lines), dim_(dim) {}
  std::size_t high_water() const { return high_water_; }

 protected:
  int_type underflow() override {
    if (gptr() < egptr()) return traits_type::to_int_type(*gptr());
    if (next_ == lines_) return traits_type::eof();
    line_ = "t" + std::to_string(next_);
    for (std::size_t j = 0; j < dim_; ++j) line_ += " " + std::to_string((next_ + j) % 7);
    line_ += '\n';
    ++next_;
    high_water_ = std::max(high_water_, line_.size());
    setg(line_.data(), line_.data(), line_.data() + line_.size());
    return traits_type::to_int_type(*gptr());
  }

 private:
  std::size_t lines_, dim_, next_ = 0, high_water_ = 0;
  std::string line_;
};

}  // namespace

TEST_CASE("glove two lines give vocab and mean") {
  const auto t = glove("a 1.0 2.0\nb 3.0 4.0\n");
  CHECK(t.dim == 2);
  CHECK(t.rows() == 2);
  CHECK(t.vocab.at("a") == 0);
  CHECK(t.vocab.at("b") == 1);
  CHECK(t.mean == std::vector<double>{2.0, 3.0});
}

TEST_CASE("glove rejects empty input, ragged lines and bad numbers") {
  CHECK(code_of([] { glove(""); }) == ErrorCode::kEmptyInput);
  CHECK(code_of([] { glove("a 1.0\nb 2.0 3.0\n"); }) == ErrorCode::kDimMismatch);
  CHECK(detail_of([] { glove("a 1.0\nb 2.0 3.0\n"); }) == 2);
  CHECK(code_of([] { glove("a 1.0 x\n"); }) == ErrorCode::kParseFloat);
  CHECK(code_of([] { glove("a 1.0 nan\n"); }) == ErrorCode::kParseFloat);
  // A truncated final line fails loudly.
  CHECK(code_of([] { glove("a 1.0 2.0\nb 3.0\n"); }) == ErrorCode::kDimMismatch);
}

TEST_CASE("glove keeps the first of duplicate tokens") {
  ParseDiagnostics diag;
  const auto t = glove("a 1 1\nb 2 2\na 9 9\n", &diag);
  CHECK(t.rows() == 2);
  CHECK(t.row(0)[0] == 1.0);
  CHECK(diag.duplicate_tokens == 1);
  CHECK(t.mean == std::vector<double>{1.5, 1.5});
}

TEST_CASE("glove tolerates CRLF, tabs and blank lines") {
  const auto t = glove("a\t1 2\r\n\r\nb 3  4 \r\n");
  CHECK(t.rows() == 2);
  CHECK(t.row(1)[1] == 4.0);
}

TEST_CASE("fasttext header is checked against the body") {
  ParseDiagnostics diag;
  auto t = fasttext("1 2\nq 5.0 7.0\n", &diag);
  CHECK(t.rows() == 1);
  CHECK(t.mean == std::vector<double>{5.0, 7.0});
  CHECK_FALSE(diag.count_mismatch.has_value());

  t = fasttext("3 2\nq 5.0 7.0\n", &diag);
  CHECK(t.rows() == 1);
  REQUIRE(diag.count_mismatch.has_value());
  CHECK(diag.count_mismatch->first == 3);
  CHECK(diag.count_mismatch->second == 1);

  CHECK(code_of([] { fasttext("0 300\n"); }) == ErrorCode::kEmptyInput);
  CHECK(code_of([] { fasttext("three 2\nq 1 2\n"); }) == ErrorCode::kBadHeader);
  CHECK(code_of([] { fasttext("1 2\nq 1 2 3\n"); }) == ErrorCode::kDimMismatch);
}

TEST_CASE("word2vec binary records") {
  const std::string bytes = "2 3\nx " + le32(1) + le32(0) + le32(0) + "y " + le32(0) + le32(1) +
                            le32(0);
  const auto t = w2v(bytes);
  CHECK(t.dim == 3);
  CHECK(t.rows() == 2);
  CHECK(t.mean == std::vector<double>{0.5, 0.5, 0.0});

  // Newline after each record is consumed.
  const auto t2 = w2v("2 3\nx " + le32(1) + le32(0) + le32(0) + "\ny " + le32(0) + le32(1) +
                      le32(0) + "\n");
  CHECK(t2.mean == t.mean);
  CHECK(t2.tokens == t.tokens);
}

TEST_CASE("word2vec binary errors") {
  const std::string one = "x " + le32(1) + le32(0) + le32(0);
  CHECK(code_of([&] { w2v("2 3\n" + one); }) == ErrorCode::kTruncatedRecord);
  CHECK(detail_of([&] { w2v("2 3\n" + one); }) == 2);
  CHECK(code_of([&] { w2v("2 3\n" + one + "y " + le32(1)); }) == ErrorCode::kTruncatedRecord);
  CHECK(code_of([] { w2v("abc\n"); }) == ErrorCode::kBadHeader);
  CHECK(code_of([] { w2v(""); }) == ErrorCode::kBadHeader);
  CHECK(code_of([] { w2v("1 1\nx " + le32(INFINITY)); }) == ErrorCode::kNonFinite);
}

TEST_CASE("word2vec writer layout") {
  EmbeddingTable t;
  t.dim = 1;
  t.append("x", std::vector<double>{2.5});
  CHECK(write_bin(t) == "1 1\nx " + le32(2.5f));

  EmbeddingTable empty;
  empty.dim = 4;
  CHECK(write_bin(empty) == "0 4\n");
}

TEST_CASE("word2vec write(parse(B)) reproduces B") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t rows = 1 + rng.index(30);
    const std::size_t dim = 1 + rng.index(12);
    std::string bytes = std::to_string(rows) + " " + std::to_string(dim) + "\n";
    for (std::size_t r = 0; r < rows; ++r) {
      bytes += "tok" + std::to_string(r) + "_" + std::to_string(rng.index(1000)) + " ";
      for (std::size_t j = 0; j < dim; ++j) bytes += le32(static_cast<float>(rng.normal() * 3));
    }
    const auto t = w2v(bytes);
    CHECK(write_bin(t) == bytes);
    // parse(write(parse(B))) == parse(B)
    const auto again = w2v(write_bin(t));
    CHECK(again.tokens == t.tokens);
    CHECK(again.matrix == t.matrix);
    CHECK(again.mean == t.mean);
  }
}

TEST_CASE("text formats survive a binary round trip") {
  // Values exact in float32 keep every field.
  const auto t = glove("a 0.5 -1.25\nb 3 4\nc -0.125 8\n");
  const auto back = w2v(write_bin(t));
  CHECK(back.tokens == t.tokens);
  CHECK(back.matrix == t.matrix);
  CHECK(back.mean == t.mean);
}

TEST_CASE("fixture files match the expected tables") {
  std::ifstream in(testing::fixture_dir() / "embeddings_expected.json");
  const auto expected = nlohmann::json::parse(in);
  for (const auto& [file, spec] : expected.items()) {
    CAPTURE(file);
    const auto t = load_embedding_file(testing::fixture_dir() / file,
                                       parse_embedding_format(spec["format"].get<std::string>()));
    CHECK(t.dim == spec["dim"].get<std::size_t>());
    CHECK(t.tokens == spec["tokens"].get<std::vector<std::string>>());
    const auto rows = spec["rows"].get<std::vector<std::vector<double>>>();
    REQUIRE(rows.size() == t.rows());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      CHECK(std::vector<double>(t.row(r).begin(), t.row(r).end()) == rows[r]);
    }
    CHECK(t.name == std::filesystem::path(file).stem().string());
  }
}

TEST_CASE("mean vector") {
  CHECK(mean_vector(glove("a 1 1\nb 3 3\n")) == std::vector<double>{2, 2});
  CHECK(mean_vector(glove("a 7 -7\n")) == std::vector<double>{7, -7});
  EmbeddingTable empty;
  empty.dim = 3;
  CHECK(code_of([&] { mean_vector(empty); }) == ErrorCode::kEmptyTable);
}

TEST_CASE("mean vector agrees with a compensated sum") {
  Rng rng(5);
  std::vector<std::vector<double>> rows;
  EmbeddingTable t;
  t.dim = 6;
  for (int r = 0; r < 100; ++r) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));
    rows.push_back(v);
    t.append("w" + std::to_string(r), v);
  }
  const auto mean = mean_vector(t);
  const auto oracle = testing::kahan_mean(rows);
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(std::abs(mean[j] - oracle[j]) <= 1e-9 * std::max(1.0, std::abs(oracle[j])));
  }
}

TEST_CASE("mean vector shifts with the rows") {
  // Dyadic values keep every sum exact, so the identity holds bit for bit.
  Rng rng(6);
  EmbeddingTable t, shifted;
  t.dim = shifted.dim = 4;
  const std::vector<double> c{0.25, -3.0, 1.5, 64.0};
  for (int r = 0; r < 16; ++r) {
    std::vector<double> v(4), w(4);
    for (int j = 0; j < 4; ++j) {
      v[j] = static_cast<double>(static_cast<int>(rng.index(257)) - 128) / 32.0;
      w[j] = v[j] + c[j];
    }
    t.append("w" + std::to_string(r), v);
    shifted.append("w" + std::to_string(r), w);
  }
  const auto m = mean_vector(t);
  const auto ms = mean_vector(shifted);
  for (int j = 0; j < 4; ++j) CHECK(ms[j] == m[j] + c[j]);
}

TEST_CASE("parsing streams line by line") {
  GeneratedLines gen(20000, 16);
  std::istream in(&gen);
  const auto t = parse_glove_text(in);
  CHECK(t.rows() == 20000);
  CHECK(t.dim == 16);
  CHECK(gen.high_water() < 128);
}

TEST_CASE("format names") {
  CHECK(parse_embedding_format("glove") == EmbeddingFormat::kGlove);
  CHECK(parse_embedding_format("w2v-bin") == EmbeddingFormat::kWord2VecBinary);
  CHECK(parse_embedding_format("fasttext") == EmbeddingFormat::kFastText);
  CHECK(code_of([] { parse_embedding_format("npy"); }) == ErrorCode::kInvalidArgument);
  CHECK(embedding_format_name(EmbeddingFormat::kWord2VecBinary) == "w2v-bin");
}
