#include "mhad/trainer.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "mhad/rng.hpp"

namespace mhad {

void require_training_corpus(const EncodedCorpus& corpus, std::string_view who) {
  if (corpus.origin == Origin::target_test) {
    throw TrainingError(std::string(who) + ": target-domain test data cannot be used for training");
  }
  if (!corpus.labeled()) throw TrainingError(std::string(who) + ": training corpus must be labeled");
}

double decayed_learning_rate(double lr0, double decay, std::size_t t) {
  return lr0 / (1.0 + decay * static_cast<double>(t));
}

template <typename T>
OptimizerState<T> OptimizerState<T>::create(const ModelParams<T>& params, const HyperParams& hp) {
  OptimizerState s;
  for (const auto& t : params.tensors) {
    s.first_moment.push_back(Tensor<T>::zeros_like(t));
    s.second_moment.push_back(Tensor<T>::zeros_like(t));
  }
  s.lr0 = hp.lr;
  s.beta1 = hp.adam_beta1;
  s.beta2 = hp.adam_beta2;
  s.epsilon = hp.adam_epsilon;
  s.decay = hp.lr_decay;
  return s;
}

template <typename T>
void adam_step(OptimizerState<T>& state, ModelParams<T>& params, std::span<const Tensor<T>> grads) {
  if (grads.size() != params.tensors.size() || state.first_moment.size() != params.tensors.size()) {
    throw TrainingError("adam_step: gradient/parameter count mismatch");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (const T g : grads[k].values()) {
      if (!std::isfinite(g)) throw TrainingError("adam_step: non-finite gradient for " + params.names[k]);
    }
  }
  const double lr = state.learning_rate();
  const double t = static_cast<double>(state.step + 1);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    auto& p = params.tensors[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    const auto& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / c1;
      const double v_hat = static_cast<double>(v[i]) / c2;
      p[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
  ++state.step;
}

template <typename T>
double clip_global_norm(std::span<Tensor<T>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (const T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& g : grads)
      for (auto& v : g.values()) v *= f;
  }
  return norm;
}

bool EarlyStopping::update(double loss) {
  if (loss < best_ - min_delta_) {
    best_ = loss;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

void TrainReport::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,val_loss,train_acc,val_acc\n";
  for (const auto& e : epochs) {
    out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.val_loss, e.train_acc,
                       e.val_acc);
  }
}

template <typename T>
LossBreakdown evaluate_loss(const Classifier<T>& model, const EncodedCorpus& corpus, double gamma,
                            std::size_t batch_size) {
  if (!corpus.labeled()) throw TrainingError("evaluate_loss: corpus must be labeled");
  if (corpus.empty()) throw TrainingError("evaluate_loss: empty corpus");
  LossBreakdown total;
  for (std::size_t begin = 0; begin < corpus.size(); begin += batch_size) {
    const auto end = std::min(corpus.size(), begin + batch_size);
    const auto batch = make_batch(corpus, begin, end);
    ad::Tape<T> tape;
    const auto bound = bind(tape, model.params(), false);
    const auto out = forward(bound, batch, model.embedding(), ForwardOptions{});
    const auto bce = ad::bce(out.prob, std::span<const std::uint8_t>(batch.labels));
    const auto div = diversity_loss<T>(tape, out.heads);
    const double w = static_cast<double>(end - begin);
    total.bce += w * bce.value().item();
    total.diversity += w * div.value().item();
  }
  const auto n = static_cast<double>(corpus.size());
  total.bce /= n;
  total.diversity /= n;
  total.total = total_loss(total.bce, total.diversity, gamma);
  return total;
}

template <typename T>
double evaluate_accuracy(const Classifier<T>& model, const EncodedCorpus& corpus) {
  if (!corpus.labeled()) throw TrainingError("evaluate_accuracy: labels required");
  if (corpus.empty()) throw TrainingError("evaluate_accuracy: empty corpus");
  const auto labels = model.predict(corpus).labels();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == (*corpus.labels)[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

template <typename T>
TrainReport fit(Classifier<T>& model, const EncodedCorpus& train, const EncodedCorpus& val, const HyperParams& hp,
                std::uint64_t seed) {
  hp.validate();
  require_training_corpus(train, "fit");
  if (train.empty()) throw TrainingError("fit: empty training set");
  const bool monitor = !val.empty();
  if (monitor) require_training_corpus(val, "fit (validation)");

  Rng order_rng(derive_seed(seed, 1));
  Rng dropout_rng(derive_seed(seed, 2));
  auto opt = OptimizerState<T>::create(model.params(), hp);
  EarlyStopping stopper(hp.patience, hp.min_delta);
  ModelParams<T> best = model.params();

  TrainReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= hp.max_epoch; ++epoch) {
    order_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch) {
      const auto end = std::min(order.size(), begin + hp.batch);
      const auto batch = make_batch(train, std::span<const std::size_t>(order).subspan(begin, end - begin));
      ad::Tape<T> tape;
      const auto bound = bind(tape, model.params(), true);
      const auto out = forward(bound, batch, model.embedding(), ForwardOptions{true, hp.dropout, &dropout_rng});
      const auto bce = ad::bce(out.prob, std::span<const std::uint8_t>(batch.labels));
      const auto loss = total_loss(bce, diversity_loss<T>(tape, out.heads), hp.gamma);
      auto grads = bound.gradients(tape.backward(loss));
      if (hp.max_grad_norm > 0.0) clip_global_norm(std::span<Tensor<T>>(grads), hp.max_grad_norm);
      adam_step(opt, model.params(), std::span<const Tensor<T>>(grads));
      loss_sum += loss.value().item() * static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_acc = evaluate_accuracy(model, train);
    if (monitor) {
      rec.val_loss = evaluate_loss(model, val, hp.gamma).total;
      rec.val_acc = evaluate_accuracy(model, val);
    }
    report.epochs.push_back(rec);
    report.stopped_epoch = epoch;
    if (!monitor) continue;
    if (stopper.update(rec.val_loss)) {
      best = model.params();
      report.best_epoch = epoch;
      report.best_val_loss = rec.val_loss;
    }
    if (stopper.should_stop()) break;
  }
  if (monitor) model.params() = std::move(best);
  return report;
}

#define MHAD_INSTANTIATE_TRAINER(T)                                                                            \
  template struct OptimizerState<T>;                                                                           \
  template void adam_step<T>(OptimizerState<T>&, ModelParams<T>&, std::span<const Tensor<T>>);                 \
  template double clip_global_norm<T>(std::span<Tensor<T>>, double);                                           \
  template LossBreakdown evaluate_loss<T>(const Classifier<T>&, const EncodedCorpus&, double, std::size_t);    \
  template double evaluate_accuracy<T>(const Classifier<T>&, const EncodedCorpus&);                            \
  template TrainReport fit<T>(Classifier<T>&, const EncodedCorpus&, const EncodedCorpus&, const HyperParams&,  \
                              std::uint64_t);

MHAD_INSTANTIATE_TRAINER(float)
MHAD_INSTANTIATE_TRAINER(double)

#undef MHAD_INSTANTIATE_TRAINER

}  // namespace mhad
