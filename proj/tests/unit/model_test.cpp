#include <cmath>
#include <memory>
#include <numeric>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "mhad/model.hpp"
#include "mhad/synthetic.hpp"
#include "test_support.hpp"

namespace {

using namespace mhad;

struct Fixture {
  Vocabulary vocab = make_random_vocabulary(20, 6, 3);
  std::shared_ptr<const Tensor<float>> embedding = std::make_shared<const Tensor<float>>(vocab.embeddings());

  ModelConfig config(std::size_t heads = 3, AttentionScoring scoring = AttentionScoring::additive) const {
    return ModelConfig{vocab.size(), vocab.dim(), 4, heads, scoring, false};
  }
  Classifier<float> model(std::size_t heads = 3, std::uint64_t seed = 1,
                          AttentionScoring scoring = AttentionScoring::additive) const {
    return Classifier<float>(init_params<float>(config(heads, scoring), seed), embedding);
  }
  TokenBatch batch(std::size_t rows, std::size_t len, std::uint64_t seed = 5) const {
    const auto raw = make_random_examples(rows, 20, len, seed);
    return make_batch(encode(raw, vocab, len, Origin::source_labeled), 0, rows);
  }
};

TEST(Model, ParameterShapes) {
  Fixture f;
  const auto p = init_params<float>(f.config(5), 1);
  const std::size_t d = 6;
  const std::size_t h = 4;
  EXPECT_EQ(p.get("encoder.forward.kernel").shape(), (std::vector<std::size_t>{d, 4 * h}));
  EXPECT_EQ(p.get("encoder.backward.recurrent").shape(), (std::vector<std::size_t>{h, 4 * h}));
  EXPECT_EQ(p.get("decoder.kernel").shape(), (std::vector<std::size_t>{2 * h, 4 * h}));
  EXPECT_EQ(p.get("attention.keys").shape(), (std::vector<std::size_t>{2 * h, h}));
  EXPECT_EQ(p.get("output.kernel").shape(), (std::vector<std::size_t>{h, 1}));
  EXPECT_THROW((void)p.index_of("embedding"), std::out_of_range);
}

TEST(Model, InitIsGlorotWithUnitForgetBias) {
  Fixture f;
  const auto p = init_params<double>(ModelConfig{f.vocab.size(), 6, 4, 3, AttentionScoring::additive, false}, 9);
  const auto& k = p.get("encoder.forward.kernel");
  const double limit = std::sqrt(6.0 / (6.0 + 16.0));
  for (const double v : k.values()) EXPECT_LE(std::abs(v), limit);
  for (const char* name : {"encoder.forward.bias", "encoder.backward.bias", "decoder.bias"}) {
    const auto& b = p.get(name);
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(b(0, c), (c >= 4 && c < 8) ? 1.0 : 0.0) << name << c;
  }
}

TEST(Model, SameSeedSameParams) {
  Fixture f;
  EXPECT_EQ(init_params<float>(f.config(5), 7), init_params<float>(f.config(5), 7));
  EXPECT_NE(init_params<float>(f.config(5), 7), init_params<float>(f.config(5), 8));
}

TEST(Model, DefaultHeadCountIsFive) {
  const Vocabulary vocab(300, 1);
  const auto cfg = make_model_config(HyperParams{}, vocab);
  EXPECT_EQ(cfg.heads, 5u);
  EXPECT_EQ(cfg.embed_dim, 300u);
  const auto p = init_params<float>(cfg, 1);
  EXPECT_EQ(p.get("encoder.forward.kernel").rows(), 300u);
}

TEST(Model, InvalidDimsAreRejected) {
  Fixture f;
  auto cfg = f.config();
  cfg.heads = 0;
  EXPECT_THROW((void)init_params<float>(cfg, 1), std::invalid_argument);
}

TEST(Model, AttentionStackShapeAndNormalization) {
  Fixture f;
  const auto m = f.model(5);
  const auto b = f.batch(2, 12);
  const auto [pred, stack] = m.infer(b);
  ASSERT_EQ(stack.heads.size(), 5u);
  ASSERT_EQ(pred.prob.size(), 2u);
  for (const auto& h : stack.heads) {
    EXPECT_EQ(h.rows(), 2u);
    EXPECT_EQ(h.cols(), 12u);
    for (std::size_t r = 0; r < 2; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 12; ++c) {
        EXPECT_GE(h(r, c), 0.0);
        if (b.row(r)[c] == kPadId) {
          EXPECT_EQ(h(r, c), 0.0);
        }
        total += h(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Model, AllPadRowAttendsPositionZero) {
  Fixture f;
  const auto m = f.model(3);
  TokenBatch b{1, 4, {kPadId, kPadId, kPadId, kPadId}, {}};
  const auto [pred, stack] = m.infer(b);
  for (const auto& h : stack.heads) {
    EXPECT_DOUBLE_EQ(h(0, 0), 1.0);
    EXPECT_EQ(h(0, 1), 0.0);
  }
  EXPECT_TRUE(std::isfinite(pred.prob[0]));
}

TEST(Model, SingleHeadModelWorks) {
  Fixture f;
  const auto m = f.model(1);
  const auto [pred, stack] = m.infer(f.batch(3, 6));
  EXPECT_EQ(stack.heads.size(), 1u);
  EXPECT_EQ(pred.prob.size(), 3u);
}

TEST(Model, EvalForwardIsDeterministic) {
  Fixture f;
  const auto m = f.model(3);
  const auto b = f.batch(4, 8);
  EXPECT_EQ(m.infer(b).first.prob, m.infer(b).first.prob);
}

TEST(Model, DotScoringRuns) {
  Fixture f;
  const auto m = f.model(3, 2, AttentionScoring::dot);
  EXPECT_NO_THROW((void)m.infer(f.batch(2, 5)));
  EXPECT_EQ(m.params().get("attention.query").shape(), (std::vector<std::size_t>{4, 8}));
}

TEST(Model, PredictionsAreClampedAndThresholdIsStrict) {
  EXPECT_EQ(threshold_label(0.5), 0);
  EXPECT_EQ(threshold_label(0.5000001), 1);
  Fixture f;
  const auto p = f.model().infer(f.batch(4, 6)).first;
  for (const double v : p.prob) {
    EXPECT_GE(v, 1e-7);
    EXPECT_LE(v, 1.0 - 1e-7);
  }
}

TEST(ModelProperty, PermutingBatchPermutesPredictions) {
  Fixture f;
  const auto m = f.model(3, 4);
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = f.batch(6, 9, 100 + trial);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    TokenBatch pb{6, 9, {}, {}};
    for (const auto r : perm) pb.ids.insert(pb.ids.end(), b.row(r).begin(), b.row(r).end());
    const auto p = m.infer(b).first.prob;
    const auto q = m.infer(pb).first.prob;
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(q[i], p[perm[i]], 1e-6);
  }
}

TEST(Model, PredictMatchesInferAcrossBatches) {
  Fixture f;
  const auto m = f.model();
  const auto raw = make_random_examples(10, 20, 7, 3);
  const auto corpus = encode(raw, f.vocab, 7, Origin::source_labeled);
  const auto whole = m.predict(corpus, 256).prob;
  const auto chunked = m.predict(corpus, 3).prob;
  ASSERT_EQ(whole.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(whole[i], chunked[i], 1e-6);
}

TEST(Model, TrainModeDropoutNeedsRng) {
  Fixture f;
  const auto m = f.model();
  ad::Tape<float> tape;
  const auto bound = bind(tape, m.params(), false);
  ForwardOptions opts{true, 0.4, nullptr};
  EXPECT_THROW((void)forward(bound, f.batch(2, 5), m.embedding(), opts), std::invalid_argument);
}

TEST(Model, TrainableEmbeddingsAddATable) {
  Fixture f;
  auto cfg = f.config();
  cfg.train_embeddings = true;
  const auto p = init_params<float>(cfg, 1, f.embedding.get());
  EXPECT_EQ(p.get("embedding"), *f.embedding);
  EXPECT_THROW((void)init_params<float>(cfg, 1), std::invalid_argument);
}

// Single-head model whose attention over ["excellent", "ok", "meh"] is known.
TEST(AttendReport, RanksTokensByMass) {
  Vocabulary vocab(2, 1);
  const std::vector<float> z = {0.0f, 0.0f};
  for (const char* w : {"excellent", "ok", "meh"}) vocab.add(w, z);
  auto embedding = std::make_shared<const Tensor<float>>(vocab.embeddings());
  const std::vector<RawExample> raw = {{"excellent ok meh", 1}};
  const auto corpus = encode(raw, vocab, 3, Origin::target_test);
  const auto batch = make_batch(corpus, 0, 1);
  const Classifier<float> model(init_params<float>(ModelConfig{vocab.size(), 2, 3, 1, AttentionScoring::additive, false}, 1),
                                embedding);
  const auto report = attend_report(model, batch, vocab, 1);
  ASSERT_EQ(report.size(), 1u);
  ASSERT_EQ(report[0].heads.size(), 1u);
  ASSERT_EQ(report[0].heads[0].size(), 1u);
  const auto stack = model.infer(batch).second;
  std::size_t best = 0;
  for (std::size_t k = 1; k < 3; ++k) {
    if (stack.heads[0](0, k) > stack.heads[0](0, best)) best = k;
  }
  EXPECT_EQ(report[0].heads[0][0].token, vocab.token(batch.row(0)[best]));
  EXPECT_NEAR(report[0].heads[0][0].weight, stack.heads[0](0, best), 1e-12);
  EXPECT_NEAR(report[0].prob, model.infer(batch).first.prob[0], 1e-12);
}

TEST(AttendReport, ShapesAndExclusions) {
  Fixture f;
  const auto m = f.model(5);
  TokenBatch b = f.batch(2, 8);
  b.ids[1] = kUnkId;
  const auto report = attend_report(m, b, f.vocab, 3);
  ASSERT_EQ(report.size(), 2u);
  for (const auto& ex : report) {
    ASSERT_EQ(ex.heads.size(), 5u);
    for (const auto& head : ex.heads) {
      EXPECT_LE(head.size(), 3u);
      for (std::size_t i = 1; i < head.size(); ++i) EXPECT_GE(head[i - 1].weight, head[i].weight);
      for (const auto& t : head) {
        EXPECT_NE(t.token, f.vocab.token(kPadId));
        EXPECT_NE(t.token, f.vocab.token(kUnkId));
      }
    }
  }
}

TEST(AttendReport, LargeTopKListsEveryDistinctRealToken) {
  Fixture f;
  const auto m = f.model(2);
  const auto b = f.batch(1, 10);
  std::set<std::int32_t> distinct;
  for (const auto id : b.row(0)) {
    if (id != kPadId && id != kUnkId) distinct.insert(id);
  }
  const auto report = attend_report(m, b, f.vocab, 50);
  EXPECT_EQ(report[0].heads[0].size(), distinct.size());
}

TEST(AttendReport, TopKMustBePositive) {
  Fixture f;
  EXPECT_THROW((void)attend_report(f.model(), f.batch(1, 4), f.vocab, 0), std::invalid_argument);
}

}  // namespace
