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

#include "support.hpp"

#include <cctype>
#include <algorithm>
#include <cmath>

#include "embfuse/rng.hpp"

#ifndef EMBFUSE_FIXTURE_DIR
#error "EMBFUSE_FIXTURE_DIR must be defined"
#endif

namespace embfuse::testing {

std::filesystem::path fixture_dir() { return EMBFUSE_FIXTURE_DIR; }

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("embfuse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SyntheticCorpus make_signal_corpus(std::size_t examples, std::uint64_t seed, std::size_t max_len,
                                   std::size_t emb_dim, std::size_t fillers) {
  Rng rng(seed);
  SyntheticCorpus out;
  auto& dicts = out.data.dicts;
  const char* signals[] = {"awful", "fine", "superb"};
  for (const char* s : signals) {
    dicts.dict_words.emplace(s, static_cast<std::int32_t>(dicts.index_to_token.size()));
    dicts.lemma_dict.emplace(s, s);
    dicts.index_to_token.emplace_back(s);
  }
  for (std::size_t f = 0; f < fillers; ++f) {
    const std::string w = "w" + std::to_string(f);
    dicts.dict_words.emplace(w, static_cast<std::int32_t>(dicts.index_to_token.size()));
    dicts.lemma_dict.emplace(w, w);
    dicts.index_to_token.push_back(w);
  }

  std::vector<EncodedExample> all;
  for (std::size_t e = 0; e < examples; ++e) {
    const auto label = static_cast<int>(e % 3);
    const std::size_t len = 3 + rng.index(max_len - 2);
    std::vector<std::int32_t> seq;
    for (std::size_t i = 0; i + 1 < len; ++i) {
      seq.push_back(static_cast<std::int32_t>(5 + rng.index(fillers)));
    }
    seq.insert(seq.begin() + static_cast<std::ptrdiff_t>(rng.index(seq.size() + 1)),
               static_cast<std::int32_t>(2 + label));
    EncodedExample ex;
    ex.label = static_cast<SentimentLabel>(label);
    ex.indices.assign(max_len - seq.size(), kPadIndex);
    ex.indices.insert(ex.indices.end(), seq.begin(), seq.end());
    all.push_back(std::move(ex));
  }
  auto split = split_train_test(all, 0.9, derive_seed(seed, {1}));
  out.data.max_len = max_len;
  out.data.train = std::move(split.train);
  out.data.test = std::move(split.test);

  out.embedding = DenseMatrix(dicts.vocab_size(), emb_dim);
  for (std::size_t r = 2; r < dicts.vocab_size(); ++r) {
    for (double& v : out.embedding.row(r)) v = rng.normal() * 0.5;
  }
  return out;
}

ModelConfig tiny_config(std::size_t max_len) {
  ModelConfig c;
  c.max_len = max_len;
  c.emb_dim = 8;
  c.lstm_units = 5;
  c.gru_units = 4;
  c.spatial_dropout_rate = 0.0;
  c.dropout_rate = 0.0;
  return c;
}

std::vector<BlockCheck> gradient_check(const ModelParameters& params,
                                       std::span<const EncodedExample> batch,
                                       std::uint64_t dropout_seed, double step, double floor) {
  const auto analytic = loss_and_grad(batch, params, dropout_seed).grad;
  ModelParameters probe = params;
  std::vector<BlockCheck> out;
  const auto& layout = params.layout();
  for (std::size_t b = 0; b < layout.trainable_block_count(); ++b) {
    const BlockShape& shape = layout.blocks()[b];
    BlockCheck check{shape.name, 0.0, 0};
    for (std::size_t k = 0; k < shape.size(); ++k) {
      const std::size_t i = shape.offset + k;
      const double w = probe.flat()[i];
      probe.flat()[i] = w + step;
      const double up = batch_loss(batch, probe, dropout_seed);
      probe.flat()[i] = w - step;
      const double down = batch_loss(batch, probe, dropout_seed);
      probe.flat()[i] = w;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      check.max_rel_error = std::max(check.max_rel_error, rel);
      ++check.checked;
    }
    out.push_back(check);
  }
  return out;
}

ModelParameters mirrored(const ModelParameters& params) {
  ModelParameters m = params;
  const auto swap_blocks = [&](ParamBlock a, ParamBlock b) {
    auto x = m.block(a);
    auto y = m.block(b);
    std::swap_ranges(x.begin(), x.end(), y.begin());
  };
  swap_blocks(ParamBlock::kLstmFwdW, ParamBlock::kLstmBwdW);
  swap_blocks(ParamBlock::kLstmFwdU, ParamBlock::kLstmBwdU);
  swap_blocks(ParamBlock::kLstmFwdB, ParamBlock::kLstmBwdB);
  swap_blocks(ParamBlock::kGruFwdW, ParamBlock::kGruBwdW);
  swap_blocks(ParamBlock::kGruFwdU, ParamBlock::kGruBwdU);
  swap_blocks(ParamBlock::kGruFwdB, ParamBlock::kGruBwdB);

  // Swap column ranges [from, from+len) and [from+len, from+2len) of a block.
  const auto swap_columns = [&](ParamBlock blk, std::size_t from, std::size_t len) {
    const auto& shape = m.layout().block(blk);
    auto data = m.block(blk);
    for (std::size_t r = 0; r < shape.rows; ++r) {
      auto row = data.subspan(r * shape.cols, shape.cols);
      std::swap_ranges(row.begin() + static_cast<std::ptrdiff_t>(from),
                       row.begin() + static_cast<std::ptrdiff_t>(from + len),
                       row.begin() + static_cast<std::ptrdiff_t>(from + len));
    }
  };
  const std::size_t h1 = params.config().lstm_units;
  const std::size_t h2 = params.config().gru_units;
  swap_columns(ParamBlock::kGruFwdW, 0, h1);
  swap_columns(ParamBlock::kGruBwdW, 0, h1);
  swap_columns(ParamBlock::kDenseW, 0, h1);
  swap_columns(ParamBlock::kDenseW, 2 * h1, h2);
  return m;
}

std::vector<EncodedExample> reversed(std::span<const EncodedExample> batch) {
  std::vector<EncodedExample> out(batch.begin(), batch.end());
  for (auto& e : out) {
    const auto first = std::find_if(e.indices.begin(), e.indices.end(),
                                    [](std::int32_t i) { return i != kPadIndex; });
    std::reverse(first, e.indices.end());
  }
  return out;
}

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// row r of an R x C row-major matrix dotted with v
double dot_row(const std::vector<double>& m, std::size_t r, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += m[r * v.size() + k] * v[k];
  return s;
}

std::string ascii_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string ascii_capitalize(std::string s) {
  s = ascii_lower(std::move(s));
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

const std::vector<double>* lookup(const RefTable& t, const std::string& key) {
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    if (t.tokens[i] == key) return &t.rows[i];
  }
  return nullptr;
}

}  // namespace

RefLstm ref_lstm_step(const std::vector<double>& x, const std::vector<double>& h,
                      const std::vector<double>& c, const std::vector<double>& W,
                      const std::vector<double>& U, const std::vector<double>& b) {
  const std::size_t H = h.size();
  RefLstm out{std::vector<double>(H), std::vector<double>(H)};
  for (std::size_t j = 0; j < H; ++j) {
    double a[4];
    for (std::size_t g = 0; g < 4; ++g) {
      const std::size_t r = g * H + j;
      a[g] = dot_row(W, r, x) + dot_row(U, r, h) + b[r];
    }
    const double i = sigmoid(a[0]);
    const double f = sigmoid(a[1]);
    const double gg = std::tanh(a[2]);
    const double o = sigmoid(a[3]);
    out.c[j] = f * c[j] + i * gg;
    out.h[j] = o * std::tanh(out.c[j]);
  }
  return out;
}

std::vector<double> ref_gru_step(const std::vector<double>& x, const std::vector<double>& h,
                                 const std::vector<double>& W, const std::vector<double>& U,
                                 const std::vector<double>& b) {
  const std::size_t H = h.size();
  std::vector<double> out(H);
  for (std::size_t j = 0; j < H; ++j) {
    const double z = sigmoid(dot_row(W, j, x) + dot_row(U, j, h) + b[j]);
    const double r = sigmoid(dot_row(W, H + j, x) + dot_row(U, H + j, h) + b[H + j]);
    const double n = std::tanh(dot_row(W, 2 * H + j, x) + r * dot_row(U, 2 * H + j, h) + b[2 * H + j]);
    out[j] = (1.0 - z) * n + z * h[j];
  }
  return out;
}

std::vector<double> kahan_mean(const std::vector<std::vector<double>>& rows) {
  const std::size_t d = rows.front().size();
  std::vector<double> mean(d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    double comp = 0.0;
    for (const auto& r : rows) {
      const double y = r[j] - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    mean[j] = sum / static_cast<double>(rows.size());
  }
  return mean;
}

std::vector<double> row_order_mean(const std::vector<std::vector<double>>& rows) {
  std::vector<double> mean(rows.front().size(), 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] = mean[j] + r[j];
  }
  for (double& m : mean) m = m / static_cast<double>(rows.size());
  return mean;
}

RefFusion ref_fuse(const std::vector<std::string>& corpus_tokens,
                   const std::vector<std::string>& lemmas, const RefTable& t1,
                   const RefTable& t2, double unknown_fill) {
  const std::size_t d = t1.rows[0].size();
  const std::vector<double> m1 = row_order_mean(t1.rows);
  const std::vector<double> m2 = row_order_mean(t2.rows);
  RefFusion out;
  out.rows.push_back(std::vector<double>(d, 0.0));
  out.rows.push_back(std::vector<double>(d, unknown_fill));
  out.branch = {3, 3};
  for (std::size_t w = 0; w < corpus_tokens.size(); ++w) {
    const std::string& tok = corpus_tokens[w];
    const std::string keys[] = {tok, ascii_lower(tok), ascii_capitalize(tok), lemmas[w]};
    const std::vector<double>* v1 = nullptr;
    const std::vector<double>* v2 = nullptr;
    for (const auto& k : keys) {
      v1 = lookup(t1, k);
      v2 = lookup(t2, k);
      if (v1 || v2) break;
    }
    std::vector<double> row(d);
    int branch;
    if (v1 && v2) {
      branch = 0;
      for (std::size_t j = 0; j < d; ++j) row[j] = ((*v1)[j] + ((*v2)[j] + (m1[j] - m2[j]))) / 2.0;
    } else if (v1) {
      branch = 1;
      row = *v1;
    } else if (v2) {
      branch = 2;
      for (std::size_t j = 0; j < d; ++j) row[j] = (*v2)[j] + (m1[j] - m2[j]);
    } else {
      branch = 3;
      row.assign(d, unknown_fill);
    }
    out.rows.push_back(std::move(row));
    out.branch.push_back(branch);
  }
  return out;
}

EmbeddingTable to_table(const RefTable& t) {
  EmbeddingTable table;
  table.dim = t.rows.empty() ? 0 : t.rows[0].size();
  for (std::size_t i = 0; i < t.tokens.size(); ++i) table.append(t.tokens[i], t.rows[i]);
  table.refresh_mean();
  return table;
}

FusionInstance random_fusion_instance(Rng& rng, std::size_t max_vocab, std::size_t max_table,
                                      std::size_t max_dim, bool dyadic) {
  static const char* kPool[] = {"souk",  "tea",   "mint",  "stall", "spice", "lamp",  "rug",
                                "olive", "date",  "drum",  "snake", "juice", "henna", "scarf",
                                "tagine", "bread", "honey", "argan", "cedar", "brass"};
  const auto variant = [&](const std::string& base) {
    std::string w = base;
    switch (rng.index(5)) {
      case 0: break;
      case 1: w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0]))); break;
      case 2:
        for (char& c : w) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        break;
      case 3: w += "s"; break;
      default:
        w[w.size() - 1] = static_cast<char>(std::toupper(static_cast<unsigned char>(w.back())));
    }
    return w;
  };
  const std::size_t dim = 1 + rng.index(max_dim);
  const auto value = [&] {
    return dyadic ? static_cast<double>(static_cast<int>(rng.index(129)) - 64) / 8.0
                  : rng.uniform(-2.0, 2.0);
  };

  FusionInstance inst;
  const std::size_t vocab = 1 + rng.index(max_vocab);
  for (std::size_t i = 0; inst.tokens.size() < vocab && i < 10 * max_vocab; ++i) {
    const std::string base = kPool[rng.index(std::size(kPool))];
    const std::string w = variant(base);
    if (inst.dicts.dict_words.count(w)) continue;
    const std::string lemma = w.size() > base.size() ? base : ascii_lower(w);
    inst.dicts.dict_words.emplace(w, static_cast<std::int32_t>(inst.dicts.index_to_token.size()));
    inst.dicts.index_to_token.push_back(w);
    inst.dicts.lemma_dict.emplace(w, lemma);
    inst.tokens.push_back(w);
    inst.lemmas.push_back(lemma);
  }
  for (RefTable* t : {&inst.t1, &inst.t2}) {
    const std::size_t n = 1 + rng.index(max_table);
    for (std::size_t i = 0; t->tokens.size() < n && i < 10 * max_table; ++i) {
      const std::string w = variant(kPool[rng.index(std::size(kPool))]);
      if (std::find(t->tokens.begin(), t->tokens.end(), w) != t->tokens.end()) continue;
      std::vector<double> row(dim);
      for (double& v : row) v = value();
      t->tokens.push_back(w);
      t->rows.push_back(std::move(row));
    }
  }
  return inst;
}

}  // namespace embfuse::testing
