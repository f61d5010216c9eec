#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "mhad/synthetic.hpp"
#include "mhad/trainer.hpp"
#include "test_support.hpp"

namespace {

using namespace mhad;

ModelParams<double> single_tensor(Tensor<double> t) {
  return ModelParams<double>{ModelConfig{}, {"x"}, {std::move(t)}};
}

HyperParams small_hp() {
  HyperParams hp;
  hp.heads = 3;
  hp.max_len = 8;
  hp.hidden = 4;
  hp.batch = 8;
  hp.max_epoch = 4;
  hp.dropout = 0.2;
  return hp;
}

struct Data {
  Vocabulary vocab = make_random_vocabulary(30, 6, 2);
  std::shared_ptr<const Tensor<float>> embedding = std::make_shared<const Tensor<float>>(vocab.embeddings());
  EncodedCorpus corpus = encode(make_random_examples(40, 30, 8, 9), vocab, 8, Origin::source_labeled);

  Classifier<float> model(const HyperParams& hp, std::uint64_t seed) const {
    return Classifier<float>(init_params<float>(make_model_config(hp, vocab), seed), embedding);
  }
};

TEST(Trainer, DecayedLearningRate) {
  EXPECT_DOUBLE_EQ(decayed_learning_rate(0.005, 0.01, 0), 0.005);
  EXPECT_DOUBLE_EQ(decayed_learning_rate(0.005, 0.01, 100), 0.0025);
  EXPECT_DOUBLE_EQ(decayed_learning_rate(0.005, 0.0, 100), 0.005);
}

TEST(Trainer, FirstAdamStepMovesByLearningRate) {
  // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
  HyperParams hp;
  auto params = single_tensor(Tensor<double>{{0.0}});
  auto state = OptimizerState<double>::create(params, hp);
  const std::vector<Tensor<double>> grads = {Tensor<double>{{1.0}}};
  adam_step<double>(state, params, grads);
  const double expected = -0.005 * 1.0 / (1.0 + 1e-7);
  EXPECT_NEAR(params.tensors[0].item(), expected, 1e-15);
  EXPECT_EQ(state.step, 1u);
}

TEST(Trainer, AdamUsesDecayedRateAtStepT) {
  HyperParams hp;
  auto params = single_tensor(Tensor<double>{{0.0}});
  auto state = OptimizerState<double>::create(params, hp);
  state.step = 100;
  EXPECT_DOUBLE_EQ(state.learning_rate(), 0.0025);
}

TEST(Trainer, ZeroGradientLeavesParamsUnchanged) {
  HyperParams hp;
  auto params = single_tensor(Tensor<double>{{0.3, -0.7}});
  const auto before = params;
  auto state = OptimizerState<double>::create(params, hp);
  const std::vector<Tensor<double>> grads = {Tensor<double>(1, 2)};
  for (int i = 0; i < 5; ++i) adam_step<double>(state, params, grads);
  EXPECT_EQ(params, before);
}

TEST(Trainer, NonFiniteGradientNamesTensor) {
  HyperParams hp;
  auto params = single_tensor(Tensor<double>{{0.0}});
  auto state = OptimizerState<double>::create(params, hp);
  const std::vector<Tensor<double>> grads = {Tensor<double>{{std::nan("")}}};
  try {
    adam_step<double>(state, params, grads);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("x"), std::string::npos);
  }
}

TEST(TrainerProperty, AdamDecreasesConvexQuadratic) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    Tensor<double> x(1, n);
    std::vector<double> a(n);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.uniform(-2.0, 2.0);
      a[i] = rng.uniform(0.1, 3.0);
      c[i] = rng.uniform(-2.0, 2.0);
    }
    auto f = [&](const Tensor<double>& v) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += a[i] * (v[i] - c[i]) * (v[i] - c[i]);
      return s;
    };
    HyperParams hp;
    hp.lr = 1e-3;
    auto params = single_tensor(x);
    auto state = OptimizerState<double>::create(params, hp);
    const double before = f(params.tensors[0]);
    for (int step = 0; step < 10; ++step) {
      Tensor<double> g(1, n);
      for (std::size_t i = 0; i < n; ++i) g[i] = 2.0 * a[i] * (params.tensors[0][i] - c[i]);
      const std::vector<Tensor<double>> grads = {g};
      adam_step<double>(state, params, grads);
    }
    EXPECT_LT(f(params.tensors[0]), before) << "trial " << trial;
  }
}

TEST(Trainer, ClipGlobalNorm) {
  std::vector<Tensor<double>> g = {Tensor<double>{{3.0}}, Tensor<double>{{4.0}}};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(g, 1.0), 5.0);
  EXPECT_NEAR(g[0].item(), 0.6, 1e-15);
  EXPECT_NEAR(g[1].item(), 0.8, 1e-15);
  std::vector<Tensor<double>> h = {Tensor<double>{{3.0}}};
  EXPECT_DOUBLE_EQ(clip_global_norm<double>(h, 0.0), 3.0);
  EXPECT_DOUBLE_EQ(h[0].item(), 3.0);
}

TEST(Trainer, EarlyStoppingCounter) {
  EarlyStopping es(3, 1e-5);
  const std::vector<double> losses = {1.0, 1.1, 1.1, 1.1};
  std::size_t stopped = 0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    es.update(losses[e]);
    if (es.should_stop()) {
      stopped = e + 1;
      break;
    }
  }
  EXPECT_EQ(stopped, 4u);
  EXPECT_DOUBLE_EQ(es.best(), 1.0);
}

TEST(Trainer, EarlyStoppingIgnoresImprovementsBelowMinDelta) {
  EarlyStopping es(2, 1e-5);
  EXPECT_TRUE(es.update(1.0));
  EXPECT_FALSE(es.update(1.0 - 5e-6));
  EXPECT_FALSE(es.update(1.0 - 9e-6));
  EXPECT_TRUE(es.should_stop());
  EarlyStopping off(0, 1e-5);
  for (int i = 0; i < 10; ++i) off.update(2.0);
  EXPECT_FALSE(off.should_stop());
}

TEST(Trainer, FitIsDeterministic) {
  Data d;
  const auto hp = small_hp();
  const auto [train, val] = train_val_split(d.corpus, 0.25, 1);
  auto a = d.model(hp, 3);
  auto b = d.model(hp, 3);
  const auto ra = fit(a, train, val, hp, 11);
  const auto rb = fit(b, train, val, hp, 11);
  EXPECT_EQ(ra.epochs, rb.epochs);
  EXPECT_EQ(ra.stopped_epoch, rb.stopped_epoch);
  EXPECT_EQ(a.params(), b.params());
  std::ostringstream ca;
  std::ostringstream cb;
  ra.write_csv(ca);
  rb.write_csv(cb);
  EXPECT_EQ(ca.str(), cb.str());
}

TEST(Trainer, FitReportShape) {
  Data d;
  auto hp = small_hp();
  const auto [train, val] = train_val_split(d.corpus, 0.25, 1);
  auto m = d.model(hp, 3);
  const auto r = fit(m, train, val, hp, 11);
  EXPECT_LE(r.stopped_epoch, hp.max_epoch);
  EXPECT_EQ(r.epochs.size(), r.stopped_epoch);
  EXPECT_GE(r.best_epoch, 1u);
  double best = 1e300;
  for (const auto& e : r.epochs) best = std::min(best, e.val_loss);
  EXPECT_DOUBLE_EQ(r.best_val_loss, best);
  std::ostringstream csv;
  r.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "epoch,train_loss,val_loss,train_acc,val_acc");
}

TEST(Trainer, FitRestoresBestValidationParams) {
  Data d;
  auto hp = small_hp();
  hp.max_epoch = 6;
  const auto [train, val] = train_val_split(d.corpus, 0.25, 1);
  auto m = d.model(hp, 3);
  const auto r = fit(m, train, val, hp, 11);
  const auto restored = evaluate_loss(m, val, hp.gamma);
  EXPECT_NEAR(restored.total, r.best_val_loss, 1e-9);
}

TEST(Trainer, FitStopsEarlyWithPatience) {
  Data d;
  auto hp = small_hp();
  hp.max_epoch = 200;
  hp.patience = 1;
  hp.lr = 0.05;
  const auto [train, val] = train_val_split(d.corpus, 0.25, 1);
  auto m = d.model(hp, 3);
  const auto r = fit(m, train, val, hp, 11);
  EXPECT_LT(r.stopped_epoch, 200u);
  EXPECT_EQ(r.stopped_epoch, r.best_epoch + 1);
}

TEST(Trainer, FitRejectsEmptyTrainingSet) {
  Data d;
  const auto hp = small_hp();
  auto m = d.model(hp, 1);
  EncodedCorpus empty;
  empty.max_len = 8;
  empty.labels.emplace();
  EXPECT_THROW((void)fit(m, empty, d.corpus, hp, 1), TrainingError);
}

TEST(Trainer, TrainingEntryPointsRejectTargetTestData) {
  Data d;
  const auto hp = small_hp();
  auto m = d.model(hp, 1);
  auto target = d.corpus;
  target.origin = Origin::target_test;
  EXPECT_THROW((void)fit(m, target, d.corpus, hp, 1), TrainingError);
  EXPECT_THROW((void)fit(m, d.corpus, target, hp, 1), TrainingError);
  EXPECT_THROW(require_training_corpus(target, "test"), TrainingError);
}

TEST(Trainer, AccuracyOfSelfLabeledCorpusIsOne) {
  Data d;
  const auto m = d.model(small_hp(), 4);
  auto corpus = d.corpus;
  corpus.labels = m.predict(corpus).labels();
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, corpus), 1.0);
  for (auto& l : *corpus.labels) l = 1 - l;
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, corpus), 0.0);
}

TEST(Trainer, AccuracyErrors) {
  Data d;
  const auto m = d.model(small_hp(), 4);
  EncodedCorpus empty;
  empty.max_len = 8;
  empty.labels.emplace();
  EXPECT_THROW((void)evaluate_accuracy(m, empty), TrainingError);
  auto unlabeled = d.corpus;
  unlabeled.labels.reset();
  EXPECT_THROW((void)evaluate_accuracy(m, unlabeled), TrainingError);
}

TEST(Trainer, RandomModelsAreNearChanceOnBalancedData) {
  // 200 balanced examples: an untrained model's accuracy over 5 seeds stays in [0.35, 0.65].
  Data d;
  const auto corpus = encode(make_random_examples(200, 30, 8, 21), d.vocab, 8, Origin::source_labeled);
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) total += evaluate_accuracy(d.model(small_hp(), seed), corpus);
  const double mean = total / 5.0;
  EXPECT_GE(mean, 0.35);
  EXPECT_LE(mean, 0.65);
}

TEST(Trainer, EvaluateLossBreakdown) {
  Data d;
  const auto hp = small_hp();
  const auto m = d.model(hp, 4);
  const auto l = evaluate_loss(m, d.corpus, 0.5);
  EXPECT_NEAR(l.total, l.bce + 0.5 * l.diversity, 1e-12);
  EXPECT_GE(l.diversity, 0.0);
  EXPECT_GT(l.bce, 0.0);
}

}  // namespace
