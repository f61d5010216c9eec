#include <cstddef>
#include <memory>
#include <vector>

#include <benchmark/benchmark.h>

#include "mhad/autodiff.hpp"
#include "mhad/losses.hpp"
#include "mhad/model.hpp"
#include "mhad/synthetic.hpp"

namespace {

using namespace mhad;

Tensor<float> random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor<float> t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = random_matrix(n, n, rng);
  const auto b = random_matrix(n, n, rng);
  for (auto _ : state) {
    ad::Tape<float> tape;
    const auto c = ad::matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(c.value().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

struct ModelFixture {
  Vocabulary vocab = make_random_vocabulary(2000, 32, 3);
  std::shared_ptr<const Tensor<float>> embedding = std::make_shared<const Tensor<float>>(vocab.embeddings());
  ModelParams<float> params;
  TokenBatch batch;

  explicit ModelFixture(std::size_t len) {
    params = init_params<float>(ModelConfig{vocab.size(), 32, 32, 5, AttentionScoring::additive, false}, 1);
    const auto raw = make_random_examples(32, 2000, len, 4);
    batch = make_batch(encode(raw, vocab, len, Origin::source_labeled), 0, raw.size());
  }
};

void BM_ModelForward(benchmark::State& state) {
  const ModelFixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    ad::Tape<float> tape;
    const auto bound = bind(tape, f.params, false);
    const auto out = forward(bound, f.batch, *f.embedding, ForwardOptions{});
    benchmark::DoNotOptimize(out.prob.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ModelForward)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_ModelForwardBackward(benchmark::State& state) {
  const ModelFixture f(static_cast<std::size_t>(state.range(0)));
  Rng rng(7);
  for (auto _ : state) {
    ad::Tape<float> tape;
    const auto bound = bind(tape, f.params, true);
    const auto out = forward(bound, f.batch, *f.embedding, ForwardOptions{true, 0.4, &rng});
    const auto bce = ad::bce(out.prob, std::span<const std::uint8_t>(f.batch.labels));
    const auto loss = total_loss(bce, diversity_loss<float>(tape, out.heads), 0.01);
    const auto grads = bound.gradients(tape.backward(loss));
    benchmark::DoNotOptimize(grads.front().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ModelForwardBackward)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

void BM_DiversityLoss(benchmark::State& state) {
  const auto heads = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  AttentionStack stack;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<double> a(32, 200);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform() / 200.0;
    stack.heads.push_back(std::move(a));
  }
  for (auto _ : state) benchmark::DoNotOptimize(diversity_loss(stack));
}
BENCHMARK(BM_DiversityLoss)->Arg(3)->Arg(5)->Arg(10);

}  // namespace

BENCHMARK_MAIN();
