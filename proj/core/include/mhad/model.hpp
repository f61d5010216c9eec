#pragma once

// Bidirectional LSTM encoder followed by a chain of attention heads. Head t
// scores the encoder states against the decoder state left by head t-1,
// the resulting context vector drives one decoder LSTM step, and the final
// decoder output feeds a sigmoid unit.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mhad/autodiff.hpp"
#include "mhad/corpus.hpp"
#include "mhad/hyperparams.hpp"
#include "mhad/rng.hpp"
#include "mhad/tensor.hpp"

namespace mhad {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;
  std::size_t hidden = 64;
  std::size_t heads = 5;
  AttentionScoring scoring = AttentionScoring::additive;
  bool train_embeddings = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig make_model_config(const HyperParams& hp, const Vocabulary& vocab);

/// Named trainable arrays in a fixed order.
template <typename T>
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  [[nodiscard]] std::size_t index_of(std::string_view name) const;
  [[nodiscard]] const Tensor<T>& get(std::string_view name) const { return tensors[index_of(name)]; }
  [[nodiscard]] Tensor<T>& get(std::string_view name) { return tensors[index_of(name)]; }
  [[nodiscard]] std::size_t parameter_count() const;

  template <typename U>
  [[nodiscard]] ModelParams<U> cast() const {
    ModelParams<U> out{config, names, {}};
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    return out;
  }
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform kernels, zero biases with forget-gate biases set to 1.
/// `embedding` seeds the trainable table when config.train_embeddings is set.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed, const Tensor<T>* embedding = nullptr);

/// Parameters placed on a tape as leaves, in the same order as ModelParams.
template <typename T>
struct BoundParams {
  const ModelParams<T>* params = nullptr;
  std::vector<ad::Var<T>> vars;

  [[nodiscard]] const ad::Var<T>& get(std::string_view name) const { return vars[params->index_of(name)]; }
  [[nodiscard]] std::vector<Tensor<T>> gradients(const ad::Gradients<T>& grads) const;
};

template <typename T>
BoundParams<T> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);

struct ForwardOptions {
  bool train = false;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when train && dropout > 0
};

template <typename T>
struct ForwardResult {
  ad::Var<T> prob;                  // B×1
  std::vector<ad::Var<T>> heads;    // T_y arrays, each B×T_x, row-stochastic
};

/// `frozen_embedding` is used unless the parameters carry their own table.
template <typename T>
ForwardResult<T> forward(const BoundParams<T>& bound, const TokenBatch& batch, const Tensor<T>& frozen_embedding,
                         const ForwardOptions& options);

/// T_y matrices of B×T_x attention weights.
struct AttentionStack {
  std::vector<Tensor<double>> heads;
};

struct Prediction {
  std::vector<double> prob;  // clamped to [1e-7, 1 - 1e-7]
  [[nodiscard]] std::vector<std::uint8_t> labels() const;
};

[[nodiscard]] inline std::uint8_t threshold_label(double prob) { return prob > 0.5 ? 1 : 0; }

/// Trained parameters together with the embedding table they read.
template <typename T>
class Classifier {
 public:
  Classifier() = default;
  Classifier(ModelParams<T> params, std::shared_ptr<const Tensor<T>> embedding)
      : params_(std::move(params)), embedding_(std::move(embedding)) {}

  [[nodiscard]] ModelParams<T>& params() noexcept { return params_; }
  [[nodiscard]] const ModelParams<T>& params() const noexcept { return params_; }
  [[nodiscard]] const Tensor<T>& embedding() const { return *embedding_; }
  [[nodiscard]] const std::shared_ptr<const Tensor<T>>& embedding_ptr() const noexcept { return embedding_; }

  /// Eval-mode forward on one batch.
  [[nodiscard]] std::pair<Prediction, AttentionStack> infer(const TokenBatch& batch) const;

  /// Eval-mode probabilities for a whole corpus, in row order.
  [[nodiscard]] Prediction predict(const EncodedCorpus& corpus, std::size_t batch_size = 256) const;

 private:
  ModelParams<T> params_;
  std::shared_ptr<const Tensor<T>> embedding_;
};

struct AttendedToken {
  std::string token;
  double weight = 0.0;
};

struct ExampleAttention {
  double prob = 0.0;
  std::vector<std::vector<AttendedToken>> heads;  // per head, strongest first
};

/// Per head, the top_k tokens by attention mass (occurrences of one token are
/// summed). PAD and UNK are excluded.
template <typename T>
std::vector<ExampleAttention> attend_report(const Classifier<T>& model, const TokenBatch& batch,
                                            const Vocabulary& vocab, std::size_t top_k);

}  // namespace mhad
