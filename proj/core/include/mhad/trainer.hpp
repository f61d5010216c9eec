#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "mhad/corpus.hpp"
#include "mhad/hyperparams.hpp"
#include "mhad/losses.hpp"
#include "mhad/model.hpp"

namespace mhad {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejects corpora that must never reach a training entry point (target-domain
/// test data) and unlabeled corpora.
void require_training_corpus(const EncodedCorpus& corpus, std::string_view who);

/// Inverse-time decay: lr0 / (1 + decay * t), where t counts updates already applied.
double decayed_learning_rate(double lr0, double decay, std::size_t t);

template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::size_t step = 0;
  double lr0 = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double decay = 0.01;

  static OptimizerState create(const ModelParams<T>& params, const HyperParams& hp);
  [[nodiscard]] double learning_rate() const { return decayed_learning_rate(lr0, decay, step); }
};

/// One Adam update with bias correction; increments state.step.
template <typename T>
void adam_step(OptimizerState<T>& state, ModelParams<T>& params, std::span<const Tensor<T>> grads);

/// Scales gradients in place so their global L2 norm is at most max_norm. Returns the norm before scaling.
template <typename T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm);

/// Patience counter on a monitored loss. An epoch improves when its loss is
/// below the best so far by more than min_delta.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Returns true when `loss` is a new best.
  bool update(double loss);
  [[nodiscard]] bool should_stop() const { return patience_ > 0 && stale_ >= patience_; }
  [[nodiscard]] double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();

  /// `epoch,train_loss,val_loss,train_acc,val_acc` with a header row.
  void write_csv(std::ostream& out) const;
};

/// Eval-mode loss over a labeled corpus: BCE and L_d, total = bce + gamma * L_d.
template <typename T>
LossBreakdown evaluate_loss(const Classifier<T>& model, const EncodedCorpus& corpus, double gamma,
                            std::size_t batch_size = 256);

/// Fraction of examples with (prob > 0.5) == label, eval mode.
template <typename T>
double evaluate_accuracy(const Classifier<T>& model, const EncodedCorpus& corpus);

/// Mini-batch Adam on bce + gamma * L_d with early stopping on validation loss.
/// The best-validation parameters are restored before returning. An empty
/// `val` disables early stopping.
template <typename T>
TrainReport fit(Classifier<T>& model, const EncodedCorpus& train, const EncodedCorpus& val, const HyperParams& hp,
                std::uint64_t seed);

}  // namespace mhad
