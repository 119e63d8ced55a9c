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

#include "embfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "embfuse/error.hpp"
#include "embfuse/rng.hpp"
#include "parallel.hpp"

namespace embfuse {

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) {
    return Error(ErrorCode::kInvalidConfig, "model config: " + what);
  };
  if (max_len == 0) throw fail("max_len must be >= 1");
  if (emb_dim == 0) throw fail("emb_dim must be >= 1");
  if (lstm_units == 0) throw fail("lstm_units must be >= 1");
  if (gru_units == 0) throw fail("gru_units must be >= 1");
  if (!(spatial_dropout_rate >= 0.0 && spatial_dropout_rate < 1.0)) {
    throw fail("spatial dropout rate must be in [0, 1)");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw fail("dropout rate must be in [0, 1)");
  if (num_classes != kNumClasses) throw fail("num_classes must be 3");
}

ParameterLayout::ParameterLayout(const ModelConfig& config, std::size_t vocab_rows)
    : vocab_rows_(vocab_rows) {
  const std::size_t E = config.emb_dim;
  const std::size_t H1 = config.lstm_units;
  const std::size_t H2 = config.gru_units;
  const std::size_t C = config.num_classes;
  const auto set = [&](ParamBlock b, std::string name, std::size_t rows, std::size_t cols) {
    blocks_[static_cast<std::size_t>(b)] = BlockShape{std::move(name), rows, cols, 0};
  };
  set(ParamBlock::kLstmFwdW, "lstm_fwd.W", 4 * H1, E);
  set(ParamBlock::kLstmFwdU, "lstm_fwd.U", 4 * H1, H1);
  set(ParamBlock::kLstmFwdB, "lstm_fwd.b", 4 * H1, 1);
  set(ParamBlock::kLstmBwdW, "lstm_bwd.W", 4 * H1, E);
  set(ParamBlock::kLstmBwdU, "lstm_bwd.U", 4 * H1, H1);
  set(ParamBlock::kLstmBwdB, "lstm_bwd.b", 4 * H1, 1);
  set(ParamBlock::kGruFwdW, "gru_fwd.W", 3 * H2, 2 * H1);
  set(ParamBlock::kGruFwdU, "gru_fwd.U", 3 * H2, H2);
  set(ParamBlock::kGruFwdB, "gru_fwd.b", 3 * H2, 1);
  set(ParamBlock::kGruBwdW, "gru_bwd.W", 3 * H2, 2 * H1);
  set(ParamBlock::kGruBwdU, "gru_bwd.U", 3 * H2, H2);
  set(ParamBlock::kGruBwdB, "gru_bwd.b", 3 * H2, 1);
  set(ParamBlock::kDenseW, "dense.W", C, 2 * H1 + 2 * H2);
  set(ParamBlock::kDenseB, "dense.b", C, 1);
  set(ParamBlock::kEmbedding, "embedding", vocab_rows, E);
  for (auto& b : blocks_) {
    b.offset = total_;
    total_ += b.size();
  }
  trainable_blocks_ = config.trainable_embeddings ? kNumParamBlocks : kNumParamBlocks - 1;
  trainable_ = config.trainable_embeddings ? total_ : block(ParamBlock::kEmbedding).offset;
}

ModelParameters::ModelParameters(const ModelConfig& config, const DenseMatrix& embedding)
    : config_(config), layout_(config, embedding.rows) {
  config_.validate();
  if (embedding.cols != config.emb_dim) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("embedding matrix has {} columns, model expects {}",
                            embedding.cols, config.emb_dim));
  }
  if (embedding.rows < 2) {
    throw Error(ErrorCode::kShapeMismatch, "embedding matrix needs padding and unknown rows");
  }
  flat_.assign(layout_.total_size(), 0.0);
  std::copy(embedding.data.begin(), embedding.data.end(), block(ParamBlock::kEmbedding).begin());
}

ModelParameters ModelParameters::initialize(const ModelConfig& config,
                                            const DenseMatrix& embedding, std::uint64_t seed) {
  ModelParameters p(config, embedding);
  Rng rng(derive_seed(seed, {0x1417}));
  const auto uniform = [&](ParamBlock b, double limit) {
    for (double& v : p.block(b)) v = rng.uniform(-limit, limit);
  };
  const auto glorot = [&](ParamBlock b) {
    const auto& s = p.layout().block(b);
    uniform(b, std::sqrt(6.0 / static_cast<double>(s.rows + s.cols)));
  };
  const double lstm_rec = 1.0 / std::sqrt(static_cast<double>(config.lstm_units));
  const double gru_rec = 1.0 / std::sqrt(static_cast<double>(config.gru_units));
  for (const auto b : {ParamBlock::kLstmFwdW, ParamBlock::kLstmBwdW, ParamBlock::kGruFwdW,
                       ParamBlock::kGruBwdW, ParamBlock::kDenseW}) {
    glorot(b);
  }
  uniform(ParamBlock::kLstmFwdU, lstm_rec);
  uniform(ParamBlock::kLstmBwdU, lstm_rec);
  uniform(ParamBlock::kGruFwdU, gru_rec);
  uniform(ParamBlock::kGruBwdU, gru_rec);
  const std::size_t H1 = config.lstm_units;
  for (const auto b : {ParamBlock::kLstmFwdB, ParamBlock::kLstmBwdB}) {
    auto bias = p.block(b);
    std::fill(bias.begin() + static_cast<std::ptrdiff_t>(H1),
              bias.begin() + static_cast<std::ptrdiff_t>(2 * H1), 1.0);
  }
  return p;
}

std::span<double> ModelParameters::block(ParamBlock b) {
  const auto& s = layout_.block(b);
  return {flat_.data() + s.offset, s.size()};
}

std::span<const double> ModelParameters::block(ParamBlock b) const {
  const auto& s = layout_.block(b);
  return {flat_.data() + s.offset, s.size()};
}

ConstMatrixView ModelParameters::matrix(ParamBlock b) const {
  const auto& s = layout_.block(b);
  return ConstMatrixView(flat_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                         static_cast<Eigen::Index>(s.cols));
}

namespace {

ConstVectorView vector_view(const ModelParameters& p, ParamBlock b) {
  const auto s = p.block(b);
  return ConstVectorView(s.data(), static_cast<Eigen::Index>(s.size()));
}

}  // namespace

LstmWeights ModelParameters::lstm(Direction d) const {
  const bool fwd = d == Direction::kForward;
  return {matrix(fwd ? ParamBlock::kLstmFwdW : ParamBlock::kLstmBwdW),
          matrix(fwd ? ParamBlock::kLstmFwdU : ParamBlock::kLstmBwdU),
          vector_view(*this, fwd ? ParamBlock::kLstmFwdB : ParamBlock::kLstmBwdB)};
}

GruWeights ModelParameters::gru(Direction d) const {
  const bool fwd = d == Direction::kForward;
  return {matrix(fwd ? ParamBlock::kGruFwdW : ParamBlock::kGruBwdW),
          matrix(fwd ? ParamBlock::kGruFwdU : ParamBlock::kGruBwdU),
          vector_view(*this, fwd ? ParamBlock::kGruFwdB : ParamBlock::kGruBwdB)};
}

namespace {

Eigen::ArrayXd sigmoid(const Eigen::ArrayXd& a) { return 1.0 / (1.0 + (-a).exp()); }

// Activated gates and new cell state from the pre-activation a = Wx+Uh+b.
void lstm_activate(const Vector& a, const VectorRef& c_prev, Eigen::Index H, LstmStep& out) {
  out.gates.resize(4 * H);
  out.gates.segment(0, H) = sigmoid(a.segment(0, H).array()).matrix();
  out.gates.segment(H, H) = sigmoid(a.segment(H, H).array()).matrix();
  out.gates.segment(2 * H, H) = a.segment(2 * H, H).array().tanh().matrix();
  out.gates.segment(3 * H, H) = sigmoid(a.segment(3 * H, H).array()).matrix();
  const auto i = out.gates.segment(0, H).array();
  const auto f = out.gates.segment(H, H).array();
  const auto g = out.gates.segment(2 * H, H).array();
  const auto o = out.gates.segment(3 * H, H).array();
  out.c = (f * c_prev.array() + i * g).matrix();
  out.h = (o * out.c.array().tanh()).matrix();
}

// Shared GRU tail given the input projection xw = W x + b.
void gru_activate(const Vector& xw, const VectorRef& h_prev, const GruWeights& w,
                  Eigen::Index H, GruStep& out) {
  const Vector uh = w.U * h_prev;
  out.z = sigmoid(xw.segment(0, H).array() + uh.segment(0, H).array()).matrix();
  out.r = sigmoid(xw.segment(H, H).array() + uh.segment(H, H).array()).matrix();
  out.un = uh.segment(2 * H, H);
  out.n = (xw.segment(2 * H, H).array() + out.r.array() * out.un.array()).tanh().matrix();
  out.h = ((1.0 - out.z.array()) * out.n.array() + out.z.array() * h_prev.array()).matrix();
}

void check_step_shapes(Eigen::Index gates, const VectorRef& x, const VectorRef& h_prev,
                       const ConstMatrixView& W, const ConstMatrixView& U,
                       const ConstVectorView& b, Eigen::Index H) {
  if (W.rows() != gates * H || U.rows() != gates * H || U.cols() != H || b.size() != gates * H ||
      W.cols() != x.size() || h_prev.size() != H) {
    throw Error(ErrorCode::kShapeMismatch, "recurrent cell inputs do not match weight shapes");
  }
}

}  // namespace

LstmStep lstm_cell_step(const VectorRef& x, const VectorRef& h_prev, const VectorRef& c_prev,
                        const LstmWeights& w) {
  const Eigen::Index H = w.U.cols();
  check_step_shapes(4, x, h_prev, w.W, w.U, w.b, H);
  if (c_prev.size() != H) throw Error(ErrorCode::kShapeMismatch, "cell state size mismatch");
  const Vector a = w.W * x + w.U * h_prev + w.b;
  LstmStep out;
  lstm_activate(a, c_prev, H, out);
  return out;
}

GruStep gru_cell_step(const VectorRef& x, const VectorRef& h_prev, const GruWeights& w) {
  const Eigen::Index H = w.U.cols();
  check_step_shapes(3, x, h_prev, w.W, w.U, w.b, H);
  const Vector xw = w.W * x + w.b;
  GruStep out;
  gru_activate(xw, h_prev, w, H, out);
  return out;
}

namespace {

// Position processed before k in direction d, or -1 at the start.
Eigen::Index previous_step(Direction d, Eigen::Index k, Eigen::Index T) {
  if (d == Direction::kForward) return k - 1;
  return k + 1 < T ? k + 1 : -1;
}

Eigen::Index step_position(Direction d, Eigen::Index s, Eigen::Index T) {
  return d == Direction::kForward ? s : T - 1 - s;
}

void lstm_direction(const RowMatrix& input, const LstmWeights& w, Direction d,
                    LstmDirectionTrace& tr) {
  const Eigen::Index T = input.rows();
  const Eigen::Index H = w.U.cols();
  tr.gates.resize(T, 4 * H);
  tr.c.resize(T, H);
  tr.h.resize(T, H);
  if (T == 0) return;
  RowMatrix xw = input * w.W.transpose();
  xw.rowwise() += w.b.transpose();
  Vector h = Vector::Zero(H);
  Vector c = Vector::Zero(H);
  LstmStep step;
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index k = step_position(d, s, T);
    const Vector a = xw.row(k).transpose() + w.U * h;
    lstm_activate(a, c, H, step);
    tr.gates.row(k) = step.gates.transpose();
    tr.c.row(k) = step.c.transpose();
    tr.h.row(k) = step.h.transpose();
    h = step.h;
    c = step.c;
  }
}

void gru_direction(const RowMatrix& input, const GruWeights& w, Direction d,
                   GruDirectionTrace& tr) {
  const Eigen::Index T = input.rows();
  const Eigen::Index H = w.U.cols();
  for (RowMatrix* m : {&tr.z, &tr.r, &tr.n, &tr.un, &tr.h}) m->resize(T, H);
  if (T == 0) return;
  RowMatrix xw = input * w.W.transpose();
  xw.rowwise() += w.b.transpose();
  Vector h = Vector::Zero(H);
  GruStep step;
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index k = step_position(d, s, T);
    gru_activate(xw.row(k).transpose(), h, w, H, step);
    tr.z.row(k) = step.z.transpose();
    tr.r.row(k) = step.r.transpose();
    tr.n.row(k) = step.n.transpose();
    tr.un.row(k) = step.un.transpose();
    tr.h.row(k) = step.h.transpose();
    h = step.h;
  }
}

// Inverted dropout: kept entries are scaled by 1/(1-rate).
RowMatrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, bool training,
                       Rng& rng) {
  RowMatrix mask = RowMatrix::Ones(rows, cols);
  if (!training || rate <= 0.0) return mask;
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = rng.uniform() < rate ? 0.0 : scale;
  }
  return mask;
}

// Column-wise max over rows; zeros and -1 indices when there are no rows.
Vector masked_max_pool(const RowMatrix& seq, std::vector<Eigen::Index>& argmax) {
  const Eigen::Index F = seq.cols();
  Vector pooled = Vector::Zero(F);
  argmax.assign(static_cast<std::size_t>(F), -1);
  if (seq.rows() == 0) return pooled;
  for (Eigen::Index j = 0; j < F; ++j) {
    Eigen::Index best = 0;
    double value = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < seq.rows(); ++t) {
      if (seq(t, j) > value) {
        value = seq(t, j);
        best = t;
      }
    }
    pooled[j] = value;
    argmax[static_cast<std::size_t>(j)] = best;
  }
  return pooled;
}

void run_sequence(const EncodedExample& ex, const ModelParameters& p, bool training,
                  std::uint64_t seed, SequenceTrace& t) {
  const ModelConfig& cfg = p.config();
  const auto E = static_cast<Eigen::Index>(cfg.emb_dim);
  const auto H1 = static_cast<Eigen::Index>(cfg.lstm_units);
  const auto H2 = static_cast<Eigen::Index>(cfg.gru_units);
  const std::size_t vocab = p.layout().vocab_rows();

  t.tokens.clear();
  for (const std::int32_t idx : ex.indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= vocab) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  fmt::format("token index {} outside embedding rows [0, {})", idx, vocab), idx);
    }
    if (idx != kPadIndex) t.tokens.push_back(idx);
  }
  const auto T = static_cast<Eigen::Index>(t.tokens.size());

  Rng rng(seed);
  t.spatial_mask = dropout_mask(E, 1, cfg.spatial_dropout_rate, training, rng);
  const ConstMatrixView emb = p.matrix(ParamBlock::kEmbedding);
  t.input.resize(T, E);
  for (Eigen::Index k = 0; k < T; ++k) {
    t.input.row(k) = emb.row(t.tokens[static_cast<std::size_t>(k)]).cwiseProduct(
        t.spatial_mask.transpose());
  }

  lstm_direction(t.input, p.lstm(Direction::kForward), Direction::kForward, t.lstm[0]);
  lstm_direction(t.input, p.lstm(Direction::kBackward), Direction::kBackward, t.lstm[1]);
  t.lstm_mask = dropout_mask(T, 2 * H1, cfg.dropout_rate, training, rng);
  t.lstm_out.resize(T, 2 * H1);
  t.lstm_out << t.lstm[0].h, t.lstm[1].h;
  t.lstm_out = t.lstm_out.cwiseProduct(t.lstm_mask);

  gru_direction(t.lstm_out, p.gru(Direction::kForward), Direction::kForward, t.gru[0]);
  gru_direction(t.lstm_out, p.gru(Direction::kBackward), Direction::kBackward, t.gru[1]);
  t.gru_mask = dropout_mask(T, 2 * H2, cfg.dropout_rate, training, rng);
  t.gru_out.resize(T, 2 * H2);
  t.gru_out << t.gru[0].h, t.gru[1].h;
  t.gru_out = t.gru_out.cwiseProduct(t.gru_mask);

  t.features.resize(2 * H1 + 2 * H2);
  t.features << masked_max_pool(t.lstm_out, t.lstm_argmax),
      masked_max_pool(t.gru_out, t.gru_argmax);
  t.logits = p.matrix(ParamBlock::kDenseW) * t.features +
             ConstVectorView(p.block(ParamBlock::kDenseB).data(),
                             static_cast<Eigen::Index>(cfg.num_classes));
  const double top = t.logits.maxCoeff();
  t.probs = (t.logits.array() - top).exp().matrix();
  t.probs /= t.probs.sum();
}

double cross_entropy(const SequenceTrace& t, SentimentLabel label) {
  const double top = t.logits.maxCoeff();
  const double lse = top + std::log((t.logits.array() - top).exp().sum());
  return lse - t.logits[label_code(label)];
}

std::uint64_t example_seed(std::uint64_t dropout_seed, std::size_t position) {
  return derive_seed(dropout_seed, {0xd409, position});
}

std::vector<SequenceTrace> run_batch(std::span<const EncodedExample> batch,
                                     const ModelParameters& params, bool training,
                                     std::uint64_t dropout_seed, unsigned threads) {
  std::vector<SequenceTrace> traces(batch.size());
  detail::for_each_chunk(batch.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      run_sequence(batch[i], params, training, example_seed(dropout_seed, i), traces[i]);
    }
  });
  return traces;
}

// Mutable views of a gradient buffer laid out like the parameters.
class GradView {
 public:
  GradView(std::vector<double>& grad, const ParameterLayout& layout)
      : grad_(grad), layout_(layout) {}

  MatrixView matrix(ParamBlock b) {
    const auto& s = layout_.block(b);
    return MatrixView(grad_.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                      static_cast<Eigen::Index>(s.cols));
  }
  Eigen::Map<Vector> vector(ParamBlock b) {
    const auto& s = layout_.block(b);
    return Eigen::Map<Vector>(grad_.data() + s.offset, static_cast<Eigen::Index>(s.size()));
  }

 private:
  std::vector<double>& grad_;
  const ParameterLayout& layout_;
};

ParamBlock lstm_block(Direction d, int which) {
  static constexpr ParamBlock fwd[] = {ParamBlock::kLstmFwdW, ParamBlock::kLstmFwdU,
                                       ParamBlock::kLstmFwdB};
  static constexpr ParamBlock bwd[] = {ParamBlock::kLstmBwdW, ParamBlock::kLstmBwdU,
                                       ParamBlock::kLstmBwdB};
  return d == Direction::kForward ? fwd[which] : bwd[which];
}

ParamBlock gru_block(Direction d, int which) {
  static constexpr ParamBlock fwd[] = {ParamBlock::kGruFwdW, ParamBlock::kGruFwdU,
                                       ParamBlock::kGruFwdB};
  static constexpr ParamBlock bwd[] = {ParamBlock::kGruBwdW, ParamBlock::kGruBwdU,
                                       ParamBlock::kGruBwdB};
  return d == Direction::kForward ? fwd[which] : bwd[which];
}

// dH: T x H gradient w.r.t. this direction's outputs. Accumulates weight
// gradients into g and input gradients into d_input.
void lstm_backward(const LstmDirectionTrace& tr, const RowMatrix& input, const LstmWeights& w,
                   Direction d, const RowMatrix& dH, GradView& g, RowMatrix& d_input) {
  const Eigen::Index T = input.rows();
  const Eigen::Index H = w.U.cols();
  if (T == 0) return;
  RowMatrix dA(T, 4 * H);
  MatrixView gU = g.matrix(lstm_block(d, 1));
  Vector dh_next = Vector::Zero(H);
  Vector dc_next = Vector::Zero(H);
  for (Eigen::Index s = T - 1; s >= 0; --s) {
    const Eigen::Index k = step_position(d, s, T);
    const Eigen::Index prev = previous_step(d, k, T);
    const Eigen::ArrayXd c_prev = prev >= 0 ? Eigen::ArrayXd(tr.c.row(prev).transpose().array())
                                            : Eigen::ArrayXd::Zero(H);
    const Eigen::ArrayXd gates = tr.gates.row(k).transpose().array();
    const Eigen::ArrayXd i = gates.segment(0, H);
    const Eigen::ArrayXd f = gates.segment(H, H);
    const Eigen::ArrayXd gg = gates.segment(2 * H, H);
    const Eigen::ArrayXd o = gates.segment(3 * H, H);
    const Eigen::ArrayXd tc = tr.c.row(k).transpose().array().tanh();

    const Eigen::ArrayXd dh = dH.row(k).transpose().array() + dh_next.array();
    const Eigen::ArrayXd dc = dc_next.array() + dh * o * (1.0 - tc * tc);
    Vector da(4 * H);
    da.segment(0, H) = (dc * gg * i * (1.0 - i)).matrix();
    da.segment(H, H) = (dc * c_prev * f * (1.0 - f)).matrix();
    da.segment(2 * H, H) = (dc * i * (1.0 - gg * gg)).matrix();
    da.segment(3 * H, H) = (dh * tc * o * (1.0 - o)).matrix();
    dA.row(k) = da.transpose();
    if (prev >= 0) gU.noalias() += da * tr.h.row(prev);
    dh_next.noalias() = w.U.transpose() * da;
    dc_next = (dc * f).matrix();
  }
  g.matrix(lstm_block(d, 0)).noalias() += dA.transpose() * input;
  g.vector(lstm_block(d, 2)) += dA.colwise().sum().transpose();
  d_input.noalias() += dA * w.W;
}

void gru_backward(const GruDirectionTrace& tr, const RowMatrix& input, const GruWeights& w,
                  Direction d, const RowMatrix& dH, GradView& g, RowMatrix& d_input) {
  const Eigen::Index T = input.rows();
  const Eigen::Index H = w.U.cols();
  if (T == 0) return;
  RowMatrix dAx(T, 3 * H);
  MatrixView gU = g.matrix(gru_block(d, 1));
  Vector dh_next = Vector::Zero(H);
  for (Eigen::Index s = T - 1; s >= 0; --s) {
    const Eigen::Index k = step_position(d, s, T);
    const Eigen::Index prev = previous_step(d, k, T);
    const Eigen::ArrayXd h_prev = prev >= 0 ? Eigen::ArrayXd(tr.h.row(prev).transpose().array())
                                            : Eigen::ArrayXd::Zero(H);
    const Eigen::ArrayXd z = tr.z.row(k).transpose().array();
    const Eigen::ArrayXd r = tr.r.row(k).transpose().array();
    const Eigen::ArrayXd n = tr.n.row(k).transpose().array();
    const Eigen::ArrayXd un = tr.un.row(k).transpose().array();

    const Eigen::ArrayXd dh = dH.row(k).transpose().array() + dh_next.array();
    const Eigen::ArrayXd dan = dh * (1.0 - z) * (1.0 - n * n);
    const Eigen::ArrayXd daz = dh * (h_prev - n) * z * (1.0 - z);
    const Eigen::ArrayXd dar = dan * un * r * (1.0 - r);
    Vector dax(3 * H);
    dax << daz.matrix(), dar.matrix(), dan.matrix();
    Vector dau(3 * H);
    dau << daz.matrix(), dar.matrix(), (dan * r).matrix();
    dAx.row(k) = dax.transpose();
    if (prev >= 0) gU.noalias() += dau * tr.h.row(prev);
    dh_next = (dh * z).matrix();
    dh_next.noalias() += w.U.transpose() * dau;
  }
  g.matrix(gru_block(d, 0)).noalias() += dAx.transpose() * input;
  g.vector(gru_block(d, 2)) += dAx.colwise().sum().transpose();
  d_input.noalias() += dAx * w.W;
}

void backward_sequence(const SequenceTrace& t, const Vector& dlogits,
                       const ModelParameters& p, GradView& g) {
  const ModelConfig& cfg = p.config();
  const auto H1 = static_cast<Eigen::Index>(cfg.lstm_units);
  const auto H2 = static_cast<Eigen::Index>(cfg.gru_units);
  const auto T = static_cast<Eigen::Index>(t.tokens.size());

  g.matrix(ParamBlock::kDenseW).noalias() += dlogits * t.features.transpose();
  g.vector(ParamBlock::kDenseB) += dlogits;
  const Vector dfeat = p.matrix(ParamBlock::kDenseW).transpose() * dlogits;
  if (T == 0) return;

  RowMatrix d_lstm_out = RowMatrix::Zero(T, 2 * H1);
  for (Eigen::Index j = 0; j < 2 * H1; ++j) {
    d_lstm_out(t.lstm_argmax[static_cast<std::size_t>(j)], j) += dfeat[j];
  }
  RowMatrix d_gru_out = RowMatrix::Zero(T, 2 * H2);
  for (Eigen::Index j = 0; j < 2 * H2; ++j) {
    d_gru_out(t.gru_argmax[static_cast<std::size_t>(j)], j) += dfeat[2 * H1 + j];
  }
  d_gru_out = d_gru_out.cwiseProduct(t.gru_mask);
  const RowMatrix dgf = d_gru_out.leftCols(H2);
  const RowMatrix dgb = d_gru_out.rightCols(H2);
  gru_backward(t.gru[0], t.lstm_out, p.gru(Direction::kForward), Direction::kForward, dgf, g,
               d_lstm_out);
  gru_backward(t.gru[1], t.lstm_out, p.gru(Direction::kBackward), Direction::kBackward, dgb, g,
               d_lstm_out);

  d_lstm_out = d_lstm_out.cwiseProduct(t.lstm_mask);
  const RowMatrix dlf = d_lstm_out.leftCols(H1);
  const RowMatrix dlb = d_lstm_out.rightCols(H1);
  RowMatrix d_input = RowMatrix::Zero(T, static_cast<Eigen::Index>(cfg.emb_dim));
  lstm_backward(t.lstm[0], t.input, p.lstm(Direction::kForward), Direction::kForward, dlf, g,
                d_input);
  lstm_backward(t.lstm[1], t.input, p.lstm(Direction::kBackward), Direction::kBackward, dlb, g,
                d_input);

  if (cfg.trainable_embeddings) {
    MatrixView demb = g.matrix(ParamBlock::kEmbedding);
    for (Eigen::Index k = 0; k < T; ++k) {
      demb.row(t.tokens[static_cast<std::size_t>(k)]) +=
          d_input.row(k).cwiseProduct(t.spatial_mask.transpose());
    }
  }
}

}  // namespace

ForwardResult forward(std::span<const EncodedExample> batch, const ModelParameters& params,
                      bool training, std::uint64_t dropout_seed, unsigned threads) {
  auto traces = run_batch(batch, params, training, dropout_seed, threads);
  ForwardResult result;
  result.probabilities = DenseMatrix(batch.size(), params.config().num_classes);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    std::copy(traces[i].probs.data(), traces[i].probs.data() + traces[i].probs.size(),
              result.probabilities.row(i).begin());
  }
  if (training) result.trace = ForwardTrace{std::move(traces)};
  return result;
}

LossAndGrad loss_and_grad(std::span<const EncodedExample> batch, const ModelParameters& params,
                          std::uint64_t dropout_seed, unsigned threads) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  const ParameterLayout& layout = params.layout();
  const std::size_t chunks = detail::chunk_count(batch.size(), threads);
  std::vector<std::vector<double>> grads(chunks);
  std::vector<double> losses(batch.size());
  std::vector<char> hits(batch.size());
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  detail::for_each_chunk(batch.size(), threads, [&](std::size_t c, std::size_t b, std::size_t e) {
    grads[c].assign(layout.trainable_size(), 0.0);
    GradView g(grads[c], layout);
    SequenceTrace t;
    for (std::size_t i = b; i < e; ++i) {
      run_sequence(batch[i], params, true, example_seed(dropout_seed, i), t);
      losses[i] = cross_entropy(t, batch[i].label);
      const std::span<const double> probs(t.probs.data(), static_cast<std::size_t>(t.probs.size()));
      hits[i] = argmax_label(probs) == batch[i].label;
      Vector dlogits = t.probs;
      dlogits[label_code(batch[i].label)] -= 1.0;
      dlogits *= inv_batch;
      backward_sequence(t, dlogits, params, g);
    }
  });

  LossAndGrad out;
  out.grad = std::move(grads[0]);
  for (std::size_t c = 1; c < chunks; ++c) {
    for (std::size_t j = 0; j < out.grad.size(); ++j) out.grad[j] += grads[c][j];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.loss += losses[i];
    out.correct += static_cast<std::size_t>(hits[i]);
  }
  out.loss *= inv_batch;
  return out;
}

double batch_loss(std::span<const EncodedExample> batch, const ModelParameters& params,
                  std::uint64_t dropout_seed) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  double loss = 0.0;
  SequenceTrace t;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    run_sequence(batch[i], params, true, example_seed(dropout_seed, i), t);
    loss += cross_entropy(t, batch[i].label);
  }
  return loss / static_cast<double>(batch.size());
}

SentimentLabel argmax_label(std::span<const double> probabilities) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probabilities.size(); ++k) {
    if (probabilities[k] > probabilities[best]) best = k;
  }
  return label_from_code(static_cast<int>(best));
}

Prediction predict(std::span<const EncodedExample> dataset, const ModelParameters& params,
                   unsigned threads, std::size_t chunk) {
  Prediction out;
  out.labels.resize(dataset.size());
  std::vector<double> losses(dataset.size());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    const auto part = dataset.subspan(start, std::min(chunk, dataset.size() - start));
    detail::for_each_chunk(part.size(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
      SequenceTrace t;
      for (std::size_t i = b; i < e; ++i) {
        run_sequence(part[i], params, false, 0, t);
        const std::span<const double> probs(t.probs.data(),
                                            static_cast<std::size_t>(t.probs.size()));
        out.labels[start + i] = argmax_label(probs);
        losses[start + i] = cross_entropy(t, part[i].label);
      }
    });
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto truth = static_cast<std::size_t>(label_code(dataset[i].label));
    const auto guess = static_cast<std::size_t>(label_code(out.labels[i]));
    ++out.confusion[truth][guess];
    correct += truth == guess;
    out.loss += losses[i];
  }
  if (!dataset.empty()) {
    out.accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    out.loss /= static_cast<double>(dataset.size());
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'M', 'B', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
T read_checked(std::istream& in) {
  T v{};
  if (!detail::read_le(in, v)) throw Error(ErrorCode::kBadFormat, "checkpoint is truncated");
  return v;
}

}  // namespace

void save_checkpoint(const ModelParameters& params, std::ostream& out) {
  const ModelConfig& c = params.config();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  for (const std::uint64_t v : {std::uint64_t{c.max_len}, std::uint64_t{c.emb_dim},
                                std::uint64_t{c.lstm_units}, std::uint64_t{c.gru_units},
                                std::uint64_t{c.num_classes},
                                std::uint64_t{params.layout().vocab_rows()}, c.seed}) {
    detail::write_le(out, v);
  }
  detail::write_le<std::uint8_t>(out, c.trainable_embeddings ? 1 : 0);
  detail::write_le(out, c.spatial_dropout_rate);
  detail::write_le(out, c.dropout_rate);
  const auto blocks = params.layout().blocks();
  detail::write_le(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    detail::write_le(out, static_cast<std::uint32_t>(b.name.size()));
    out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    detail::write_le<std::uint32_t>(out, 2);
    detail::write_le<std::uint64_t>(out, b.rows);
    detail::write_le<std::uint64_t>(out, b.cols);
    for (std::size_t i = 0; i < b.size(); ++i) detail::write_le(out, params.flat()[b.offset + i]);
  }
  if (!out) throw Error(ErrorCode::kIo, "write error while saving checkpoint");
}

ModelParameters load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw Error(ErrorCode::kBadFormat, "not an embfuse checkpoint");
  }
  if (read_checked<std::uint32_t>(in) != kCheckpointVersion) {
    throw Error(ErrorCode::kBadFormat, "unsupported checkpoint version");
  }
  ModelConfig c;
  c.max_len = read_checked<std::uint64_t>(in);
  c.emb_dim = read_checked<std::uint64_t>(in);
  c.lstm_units = read_checked<std::uint64_t>(in);
  c.gru_units = read_checked<std::uint64_t>(in);
  c.num_classes = read_checked<std::uint64_t>(in);
  const auto vocab_rows = read_checked<std::uint64_t>(in);
  c.seed = read_checked<std::uint64_t>(in);
  c.trainable_embeddings = read_checked<std::uint8_t>(in) != 0;
  c.spatial_dropout_rate = read_checked<double>(in);
  c.dropout_rate = read_checked<double>(in);
  c.validate();
  if (vocab_rows < 2 || vocab_rows > (std::uint64_t{1} << 40)) {
    throw Error(ErrorCode::kBadFormat, "checkpoint vocabulary size is implausible");
  }

  ModelParameters params(c, DenseMatrix(vocab_rows, c.emb_dim));
  const auto blocks = params.layout().blocks();
  if (read_checked<std::uint32_t>(in) != blocks.size()) {
    throw Error(ErrorCode::kBadFormat, "checkpoint block count mismatch");
  }
  for (const auto& b : blocks) {
    const auto name_len = read_checked<std::uint32_t>(in);
    std::string name(name_len, '\0');
    if (name_len > 256 || !in.read(name.data(), name_len) || name != b.name) {
      throw Error(ErrorCode::kBadFormat, fmt::format("expected checkpoint block '{}'", b.name));
    }
    const auto ndim = read_checked<std::uint32_t>(in);
    const auto rows = read_checked<std::uint64_t>(in);
    const auto cols = read_checked<std::uint64_t>(in);
    if (ndim != 2 || rows != b.rows || cols != b.cols) {
      throw Error(ErrorCode::kBadFormat, fmt::format("block '{}' has the wrong shape", b.name));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      params.flat()[b.offset + i] = read_checked<double>(in);
    }
  }
  return params;
}

}  // namespace embfuse
