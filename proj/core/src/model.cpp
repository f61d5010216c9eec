#include "mhad/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mhad {

namespace names {
constexpr std::string_view embedding = "embedding";
constexpr std::string_view enc_fw_kernel = "encoder.forward.kernel";
constexpr std::string_view enc_fw_recurrent = "encoder.forward.recurrent";
constexpr std::string_view enc_fw_bias = "encoder.forward.bias";
constexpr std::string_view enc_bw_kernel = "encoder.backward.kernel";
constexpr std::string_view enc_bw_recurrent = "encoder.backward.recurrent";
constexpr std::string_view enc_bw_bias = "encoder.backward.bias";
constexpr std::string_view att_keys = "attention.keys";
constexpr std::string_view att_query = "attention.query";
constexpr std::string_view att_score = "attention.score";
constexpr std::string_view dec_kernel = "decoder.kernel";
constexpr std::string_view dec_recurrent = "decoder.recurrent";
constexpr std::string_view dec_bias = "decoder.bias";
constexpr std::string_view out_kernel = "output.kernel";
constexpr std::string_view out_bias = "output.bias";
}  // namespace names

ModelConfig make_model_config(const HyperParams& hp, const Vocabulary& vocab) {
  return ModelConfig{vocab.size(), vocab.dim(), hp.hidden, hp.heads, hp.scoring, hp.train_embeddings};
}

std::vector<std::uint8_t> Prediction::labels() const {
  std::vector<std::uint8_t> out(prob.size());
  std::transform(prob.begin(), prob.end(), out.begin(), threshold_label);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed, const Tensor<T>* embedding) {
  if (config.embed_dim == 0 || config.hidden == 0 || config.heads == 0) {
    throw std::invalid_argument("init_params: embed_dim, hidden and heads must be >= 1");
  }
  const std::size_t d = config.embed_dim, h = config.hidden;
  Rng rng(seed);
  ModelParams<T> p;
  p.config = config;

  auto glorot = [&](std::string_view name, std::size_t rows, std::size_t cols) {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor<T> t(rows, cols);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
    p.names.emplace_back(name);
    p.tensors.push_back(std::move(t));
  };
  auto gate_bias = [&](std::string_view name) {
    Tensor<T> b(1, 4 * h);
    for (std::size_t c = h; c < 2 * h; ++c) b[c] = T(1);  // forget gate
    p.names.emplace_back(name);
    p.tensors.push_back(std::move(b));
  };

  if (config.train_embeddings) {
    if (!embedding || embedding->rows() != config.vocab_size || embedding->cols() != d) {
      throw std::invalid_argument("init_params: trainable embeddings need a vocab_size x embed_dim table");
    }
    p.names.emplace_back(names::embedding);
    p.tensors.push_back(*embedding);
  }
  glorot(names::enc_fw_kernel, d, 4 * h);
  glorot(names::enc_fw_recurrent, h, 4 * h);
  gate_bias(names::enc_fw_bias);
  glorot(names::enc_bw_kernel, d, 4 * h);
  glorot(names::enc_bw_recurrent, h, 4 * h);
  gate_bias(names::enc_bw_bias);
  if (config.scoring == AttentionScoring::additive) {
    glorot(names::att_keys, 2 * h, h);
    glorot(names::att_query, h, h);
    glorot(names::att_score, h, 1);
  } else {
    glorot(names::att_query, h, 2 * h);
  }
  glorot(names::dec_kernel, 2 * h, 4 * h);
  glorot(names::dec_recurrent, h, 4 * h);
  gate_bias(names::dec_bias);
  glorot(names::out_kernel, h, 1);
  p.names.emplace_back(names::out_bias);
  p.tensors.emplace_back(1, 1);
  return p;
}

template <typename T>
std::vector<Tensor<T>> BoundParams<T>::gradients(const ad::Gradients<T>& grads) const {
  std::vector<Tensor<T>> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(grads.of(v));
  return out;
}

template <typename T>
BoundParams<T> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad) {
  BoundParams<T> b;
  b.params = &params;
  b.vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) b.vars.push_back(tape.leaf(t, requires_grad));
  return b;
}

namespace {

template <typename T>
struct LstmState {
  ad::Var<T> h;
  ad::Var<T> c;
};

template <typename T>
LstmState<T> lstm_cell(const ad::Var<T>& gates, const ad::Var<T>* c_prev, std::size_t h) {
  const auto i = ad::sigmoid(ad::slice(gates, 1, 0, h));
  const auto f = ad::sigmoid(ad::slice(gates, 1, h, 2 * h));
  const auto g = ad::tanh(ad::slice(gates, 1, 2 * h, 3 * h));
  const auto o = ad::sigmoid(ad::slice(gates, 1, 3 * h, 4 * h));
  auto c = ad::mul(i, g);
  if (c_prev) c = ad::add(ad::mul(f, *c_prev), c);
  return {ad::mul(o, ad::tanh(c)), c};
}

/// Runs one direction over step-major inputs; returns h at each original position.
template <typename T>
std::vector<ad::Var<T>> encode_direction(const ad::Var<T>& inputs, std::size_t steps, std::size_t batch,
                                         std::size_t h, const ad::Var<T>& kernel, const ad::Var<T>& recurrent,
                                         const ad::Var<T>& bias, bool reverse) {
  const auto projected = ad::add(ad::matmul(inputs, kernel), bias);
  std::vector<ad::Var<T>> out(steps);
  LstmState<T> state;
  bool started = false;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t t = reverse ? steps - 1 - k : k;
    auto gates = ad::slice(projected, 0, t * batch, (t + 1) * batch);
    if (started) gates = ad::add(gates, ad::matmul(state.h, recurrent));
    state = lstm_cell(gates, started ? &state.c : nullptr, h);
    started = true;
    out[t] = state.h;
  }
  return out;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const BoundParams<T>& bound, const TokenBatch& batch, const Tensor<T>& frozen_embedding,
                         const ForwardOptions& options) {
  const ModelConfig& cfg = bound.params->config;
  const std::size_t B = batch.rows, L = batch.cols, h = cfg.hidden;
  if (B == 0 || L == 0) throw ad::AutodiffError("forward: empty batch");
  if (batch.ids.size() != B * L) throw ad::AutodiffError("forward: batch ids do not match its shape");
  const bool use_dropout = options.train && options.dropout > 0.0;
  if (use_dropout && options.rng == nullptr) throw std::invalid_argument("forward: dropout requires an rng");
  auto& tape = *bound.vars.front().tape();

  // Step-major token order: row t*B + b.
  std::vector<std::int32_t> step_major(B * L);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t) step_major[t * B + b] = batch.ids[b * L + t];

  ad::Var<T> embedded;
  if (cfg.train_embeddings) {
    embedded = ad::gather_rows(bound.get(names::embedding), std::span<const std::int32_t>(step_major));
  } else {
    if (frozen_embedding.cols() != cfg.embed_dim) {
      throw ad::AutodiffError("forward: embedding width " + std::to_string(frozen_embedding.cols()) +
                              " does not match model " + std::to_string(cfg.embed_dim));
    }
    embedded = ad::gather_rows(tape, frozen_embedding, std::span<const std::int32_t>(step_major));
  }
  if (use_dropout) embedded = ad::dropout(embedded, options.dropout, *options.rng);

  const auto fw = encode_direction(embedded, L, B, h, bound.get(names::enc_fw_kernel),
                                   bound.get(names::enc_fw_recurrent), bound.get(names::enc_fw_bias), false);
  const auto bw = encode_direction(embedded, L, B, h, bound.get(names::enc_bw_kernel),
                                   bound.get(names::enc_bw_recurrent), bound.get(names::enc_bw_bias), true);
  auto states = ad::concat({ad::concat<T>(std::span<const ad::Var<T>>(fw), 0),
                            ad::concat<T>(std::span<const ad::Var<T>>(bw), 0)},
                           1);  // (L*B) x 2H
  if (use_dropout) states = ad::dropout(states, options.dropout, *options.rng);

  std::vector<std::uint8_t> mask(B * L);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = batch.ids[i] != kPadId ? 1 : 0;
  std::vector<std::int32_t> repeat(B * L);
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t b = 0; b < B; ++b) repeat[t * B + b] = static_cast<std::int32_t>(b);

  const bool additive = cfg.scoring == AttentionScoring::additive;
  ad::Var<T> keys;
  if (additive) keys = ad::matmul(states, bound.get(names::att_keys));

  ForwardResult<T> result;
  LstmState<T> dec;
  bool started = false;
  for (std::size_t step = 0; step < cfg.heads; ++step) {
    ad::Var<T> scores;  // B x L
    if (additive) {
      auto pre = keys;
      if (started) {
        const auto q = ad::matmul(dec.h, bound.get(names::att_query));
        pre = ad::add(pre, ad::gather_rows(q, std::span<const std::int32_t>(repeat)));
      }
      const auto s = ad::matmul(ad::tanh(pre), bound.get(names::att_score));
      scores = ad::transpose(ad::reshape(s, L, B));
    } else if (started) {
      const auto q = ad::matmul(dec.h, bound.get(names::att_query));
      const auto s = ad::sum_rows(ad::mul(states, ad::gather_rows(q, std::span<const std::int32_t>(repeat))));
      scores = ad::transpose(ad::reshape(s, L, B));
    } else {
      scores = tape.constant(Tensor<T>(B, L));
    }
    const auto weights = ad::softmax_rows(scores, &mask);
    result.heads.push_back(weights);

    const auto context = ad::weighted_rows(weights, states);
    auto gates = ad::matmul(context, bound.get(names::dec_kernel));
    if (started) gates = ad::add(gates, ad::matmul(dec.h, bound.get(names::dec_recurrent)));
    gates = ad::add(gates, bound.get(names::dec_bias));
    dec = lstm_cell(gates, started ? &dec.c : nullptr, h);
    started = true;
  }
  result.prob = ad::sigmoid(ad::add(ad::matmul(dec.h, bound.get(names::out_kernel)), bound.get(names::out_bias)));
  return result;
}

template <typename T>
std::pair<Prediction, AttentionStack> Classifier<T>::infer(const TokenBatch& batch) const {
  ad::Tape<T> tape;
  const auto bound = bind(tape, params_, false);
  const auto out = forward(bound, batch, *embedding_, ForwardOptions{});
  Prediction pred;
  const double lo = ad::kProbEpsilon, hi = 1.0 - ad::kProbEpsilon;
  for (const T p : out.prob.value().values()) pred.prob.push_back(std::clamp(static_cast<double>(p), lo, hi));
  AttentionStack stack;
  for (const auto& head : out.heads) stack.heads.push_back(head.value().template cast<double>());
  return {std::move(pred), std::move(stack)};
}

template <typename T>
Prediction Classifier<T>::predict(const EncodedCorpus& corpus, std::size_t batch_size) const {
  Prediction all;
  all.prob.reserve(corpus.size());
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    const auto end = std::min(corpus.size(), begin + batch_size);
    auto [pred, _] = infer(make_batch(corpus, begin, end));
    all.prob.insert(all.prob.end(), pred.prob.begin(), pred.prob.end());
  }
  return all;
}

template <typename T>
std::vector<ExampleAttention> attend_report(const Classifier<T>& model, const TokenBatch& batch,
                                            const Vocabulary& vocab, std::size_t top_k) {
  if (top_k < 1) throw std::invalid_argument("attend_report: top_k must be >= 1");
  const auto [pred, stack] = model.infer(batch);
  std::vector<ExampleAttention> out(batch.rows);
  for (std::size_t b = 0; b < batch.rows; ++b) {
    out[b].prob = pred.prob[b];
    const auto ids = batch.row(b);
    for (const auto& head : stack.heads) {
      // token id -> (mass, first position)
      std::map<std::int32_t, std::pair<double, std::size_t>> mass;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] == kPadId || ids[t] == kUnkId) continue;
        auto [it, fresh] = mass.try_emplace(ids[t], 0.0, t);
        it->second.first += head(b, t);
      }
      std::vector<std::pair<std::int32_t, std::pair<double, std::size_t>>> ranked(mass.begin(), mass.end());
      std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.second.first != y.second.first) return x.second.first > y.second.first;
        return x.second.second < y.second.second;
      });
      std::vector<AttendedToken> tokens;
      for (std::size_t k = 0; k < std::min(top_k, ranked.size()); ++k) {
        tokens.push_back({vocab.token(ranked[k].first), ranked[k].second.first});
      }
      out[b].heads.push_back(std::move(tokens));
    }
  }
  return out;
}

#define MHAD_INSTANTIATE_MODEL(T)                                                                              \
  template struct ModelParams<T>;                                                                              \
  template struct BoundParams<T>;                                                                              \
  template class Classifier<T>;                                                                                \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t, const Tensor<T>*);                 \
  template BoundParams<T> bind<T>(ad::Tape<T>&, const ModelParams<T>&, bool);                                  \
  template ForwardResult<T> forward<T>(const BoundParams<T>&, const TokenBatch&, const Tensor<T>&,             \
                                       const ForwardOptions&);                                                 \
  template std::vector<ExampleAttention> attend_report<T>(const Classifier<T>&, const TokenBatch&,             \
                                                          const Vocabulary&, std::size_t);

MHAD_INSTANTIATE_MODEL(float)
MHAD_INSTANTIATE_MODEL(double)

#undef MHAD_INSTANTIATE_MODEL

}  // namespace mhad
