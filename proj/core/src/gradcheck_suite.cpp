#include "mhad/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <string>

#include "mhad/losses.hpp"
#include "mhad/model.hpp"
#include "mhad/rng.hpp"

namespace mhad {

using ad::Var;
using VarList = std::span<const Var<double>>;

ad::Var<double> faulty_square(const ad::Var<double>& x) {
  Tensor<double> out = x.value();
  for (auto& v : out.values()) v *= v;
  auto* tp = x.tape();
  const auto ix = x.id();
  return tp->record(ad::PrimitiveKind::custom, std::move(out), {ix},
                    [tp, ix](const Tensor<double>& g, std::span<Tensor<double>* const> gin) {
                      const auto& x = tp->at(ix).value;
                      for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += 3.0 * x[i] * g[i];
                    });
}

namespace {

Tensor<double> random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(rows, cols);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

struct Component {
  std::string name;
  std::size_t points;
  std::function<std::vector<Tensor<double>>(Rng&)> sample;
  // Built per point so fixed masks and index lists can be captured.
  std::function<ScalarFn(Rng&)> make_fn;
};

// Reduces an arbitrary-shape output to a scalar with fixed random weights so
// every output coordinate influences the checked gradient.
Var<double> project(const Var<double>& y, const Tensor<double>& weights) {
  return ad::dot(y, y.tape()->constant(weights));
}

Component primitive(std::string name, std::size_t points, std::function<std::vector<Tensor<double>>(Rng&)> sample,
                    std::function<Var<double>(VarList, Rng&)> op) {
  Component c;
  c.name = "primitive/" + std::move(name);
  c.points = points;
  c.sample = std::move(sample);
  c.make_fn = [op = std::move(op)](Rng& rng) -> ScalarFn {
    // Run the op once to learn its output shape, then freeze projection weights.
    auto local = std::make_shared<Rng>(rng.next_u64());
    auto weights = std::make_shared<Tensor<double>>();
    auto op_seed = rng.next_u64();
    return [op, weights, local, op_seed](ad::Tape<double>&, VarList in) {
      Rng op_rng(op_seed);
      const auto y = op(in, op_rng);
      if (weights->empty()) *weights = random_tensor(*local, y.rows(), y.cols(), 0.5, 1.5);
      return project(y, *weights);
    };
  };
  return c;
}

std::vector<Tensor<double>> softmax_stack(Rng& rng, std::size_t heads, std::size_t batch, std::size_t len) {
  std::vector<Tensor<double>> out;
  for (std::size_t i = 0; i < heads; ++i) out.push_back(random_tensor(rng, batch, len, -2.0, 2.0));
  return out;
}

std::vector<Var<double>> softmax_all(VarList logits) {
  std::vector<Var<double>> heads;
  for (const auto& l : logits) heads.push_back(ad::softmax_rows(l));
  return heads;
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckSuiteOptions& o) {
  const std::size_t P = o.points_per_primitive;
  const std::size_t B = o.batch, L = o.max_len, H = o.hidden, D = o.dim, Ty = o.heads;
  std::vector<Component> components;

  auto shape = [](std::size_t r, std::size_t c) {
    return [r, c](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, r, c)}; };
  };
  auto shapes2 = [](std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2) {
    return [=](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, r1, c1), random_tensor(rng, r2, c2)}; };
  };

  components.push_back(primitive("matmul", P, shapes2(3, 4, 4, 2), [](VarList in, Rng&) { return ad::matmul(in[0], in[1]); }));
  components.push_back(primitive("add", P, shapes2(3, 4, 3, 4), [](VarList in, Rng&) { return ad::add(in[0], in[1]); }));
  components.push_back(primitive("add_row_broadcast", P, shapes2(3, 4, 1, 4),
                                 [](VarList in, Rng&) { return ad::add(in[0], in[1]); }));
  components.push_back(primitive("mul", P, shapes2(3, 4, 3, 4), [](VarList in, Rng&) { return ad::mul(in[0], in[1]); }));
  components.push_back(primitive("scale", P, shape(3, 4), [](VarList in, Rng&) { return ad::scale(in[0], -1.7); }));
  components.push_back(primitive("concat_rows", P, shapes2(2, 3, 4, 3),
                                 [](VarList in, Rng&) { return ad::concat<double>(in, 0); }));
  components.push_back(primitive("concat_cols", P, shapes2(3, 2, 3, 4),
                                 [](VarList in, Rng&) { return ad::concat<double>(in, 1); }));
  components.push_back(primitive("slice_rows", P, shape(5, 3), [](VarList in, Rng&) { return ad::slice(in[0], 0, 1, 4); }));
  components.push_back(primitive("slice_cols", P, shape(3, 5), [](VarList in, Rng&) { return ad::slice(in[0], 1, 2, 5); }));
  components.push_back(primitive("tanh", P, shape(3, 4), [](VarList in, Rng&) { return ad::tanh(in[0]); }));
  components.push_back(primitive("sigmoid", P, shape(3, 4), [](VarList in, Rng&) { return ad::sigmoid(in[0]); }));
  components.push_back(primitive("softmax_rows", P, shape(3, 5), [](VarList in, Rng&) { return ad::softmax_rows(in[0]); }));
  components.push_back(primitive("softmax_rows_masked", P, shape(3, 5), [](VarList in, Rng& rng) {
    std::vector<std::uint8_t> mask(15);
    for (auto& m : mask) m = rng.bernoulli(0.7) ? 1 : 0;
    mask[5] = mask[6] = mask[7] = mask[8] = mask[9] = 0;  // one fully masked row
    mask[0] = 1;
    return ad::softmax_rows(in[0], &mask);
  }));
  components.push_back(primitive("dropout_mask", P, shape(3, 4), [](VarList in, Rng& rng) {
    return ad::dropout(in[0], 0.4, rng);  // op_rng is reseeded per evaluation, so the mask is frozen
  }));
  components.push_back(primitive("sum", P, shape(3, 4), [](VarList in, Rng&) { return ad::sum(in[0]); }));
  components.push_back(primitive("mean", P, shape(3, 4), [](VarList in, Rng&) { return ad::mean(in[0]); }));
  components.push_back(primitive("square", P, shape(3, 4), [fault = o.inject_fault](VarList in, Rng&) {
    return fault ? faulty_square(in[0]) : ad::square(in[0]);
  }));
  components.push_back(primitive("dot", P, shapes2(3, 4, 3, 4), [](VarList in, Rng&) { return ad::dot(in[0], in[1]); }));
  components.push_back(primitive(
      "bce", P, [](Rng& rng) { return std::vector<Tensor<double>>{random_tensor(rng, 6, 1, 0.1, 0.9)}; },
      [](VarList in, Rng&) {
        const std::vector<std::uint8_t> y = {1, 0, 0, 1, 1, 0};
        return ad::bce(in[0], std::span<const std::uint8_t>(y));
      }));
  components.push_back(primitive("sum_rows", P, shape(3, 4), [](VarList in, Rng&) { return ad::sum_rows(in[0]); }));
  components.push_back(primitive("gather_rows", P, shape(4, 3), [](VarList in, Rng&) {
    const std::vector<std::int32_t> idx = {2, 0, 2, 3, 1, 2};
    return ad::gather_rows(in[0], std::span<const std::int32_t>(idx));
  }));
  components.push_back(primitive("transpose", P, shape(3, 4), [](VarList in, Rng&) { return ad::transpose(in[0]); }));
  components.push_back(primitive("reshape", P, shape(3, 4), [](VarList in, Rng&) { return ad::reshape(in[0], 6, 2); }));
  components.push_back(primitive("weighted_rows", P, shapes2(2, 3, 6, 4),
                                 [](VarList in, Rng&) { return ad::weighted_rows(in[0], in[1]); }));

  // Losses on softmax-normalized random stacks.
  auto loss_component = [&](std::string name, std::size_t inputs, std::function<Var<double>(ad::Tape<double>&, VarList)> fn) {
    Component c;
    c.name = "loss/" + std::move(name);
    c.points = P;
    c.sample = [=](Rng& rng) { return softmax_stack(rng, inputs, B, L); };
    c.make_fn = [fn](Rng&) -> ScalarFn { return [fn](ad::Tape<double>& t, VarList in) { return fn(t, in); }; };
    components.push_back(std::move(c));
  };
  loss_component("diversity", Ty, [](ad::Tape<double>& t, VarList in) {
    return diversity_loss<double>(t, softmax_all(in));
  });
  loss_component("total_single", Ty + 1, [Ty](ad::Tape<double>& t, VarList in) {
    // Last input doubles as prediction logits: first column through sigmoid.
    const auto heads = softmax_all(in.first(Ty));
    const auto prob = ad::sigmoid(ad::slice(in[Ty], 1, 0, 1));
    std::vector<std::uint8_t> y(prob.rows());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint8_t>(i % 2);
    return total_loss(ad::bce(prob, std::span<const std::uint8_t>(y)), diversity_loss<double>(t, heads), 0.5);
  });
  loss_component("orthogonality", 2 * Ty, [Ty](ad::Tape<double>&, VarList in) {
    return cross_orthogonality_loss<double>(softmax_all(in.first(Ty)), softmax_all(in.subspan(Ty)));
  });
  loss_component("tri_diversity", 2 * Ty, [Ty](ad::Tape<double>& t, VarList in) {
    const auto a = softmax_all(in.first(Ty));
    const auto b = softmax_all(in.subspan(Ty));
    return tri_diversity_loss(cross_orthogonality_loss<double>(a, b), diversity_loss<double>(t, a),
                              diversity_loss<double>(t, b), 0.7, 0.3);
  });
  loss_component("joint", 2 * Ty + 1, [Ty](ad::Tape<double>& t, VarList in) {
    const auto a = softmax_all(in.first(Ty));
    const auto b = softmax_all(in.subspan(Ty, Ty));
    const auto p1 = ad::sigmoid(ad::slice(in[2 * Ty], 1, 0, 1));
    const auto p2 = ad::sigmoid(ad::slice(in[2 * Ty], 1, 1, 2));
    std::vector<std::uint8_t> y(p1.rows());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<std::uint8_t>((i + 1) % 2);
    const std::span<const std::uint8_t> ys(y);
    const auto tri = tri_diversity_loss(cross_orthogonality_loss<double>(a, b), diversity_loss<double>(t, a),
                                        diversity_loss<double>(t, b), 0.7, 0.3);
    return joint_loss(ad::bce(p1, ys), ad::bce(p2, ys), 2.0, 1.0, tri);
  });

  // Full model objectives. The batch has padding in its second row.
  auto model_batch = [B, L, V = o.vocab](Rng& rng) {
    TokenBatch batch;
    batch.rows = B;
    batch.cols = L;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t real = b % 2 == 1 ? std::max<std::size_t>(1, L - 2) : L;
      for (std::size_t t = 0; t < L; ++t) {
        batch.ids.push_back(t < real ? static_cast<std::int32_t>(2 + rng.below(V - 2)) : kPadId);
      }
      batch.labels.push_back(static_cast<std::uint8_t>(b % 2 == 0 ? 1 : 0));
    }
    return batch;
  };

  struct ModelCase {
    std::string name;
    AttentionScoring scoring;
    bool train_embeddings;
    bool joint;
  };
  const std::vector<ModelCase> cases = {
      {"model/single_additive", AttentionScoring::additive, false, false},
      {"model/single_dot", AttentionScoring::dot, false, false},
      {"model/single_trainable_embeddings", AttentionScoring::additive, true, false},
      {"model/joint_additive", AttentionScoring::additive, false, true},
  };
  for (const auto& mc : cases) {
    auto holder = std::make_shared<std::vector<ModelParams<double>>>();
    auto embedding = std::make_shared<Tensor<double>>();
    auto batch = std::make_shared<TokenBatch>();
    Component c;
    c.name = mc.name;
    c.points = o.points_per_model;
    c.sample = [=, &o](Rng& rng) {
      ModelConfig cfg{o.vocab, D, H, Ty, mc.scoring, mc.train_embeddings};
      *embedding = random_tensor(rng, o.vocab, D);
      for (auto& v : embedding->row(kPadId)) v = 0.0;
      *batch = model_batch(rng);
      holder->clear();
      holder->push_back(init_params<double>(cfg, rng.next_u64(), embedding.get()));
      if (mc.joint) holder->push_back(init_params<double>(cfg, rng.next_u64(), embedding.get()));
      std::vector<Tensor<double>> point;
      for (const auto& p : *holder)
        for (const auto& t : p.tensors) point.push_back(t);
      return point;
    };
    c.make_fn = [=](Rng&) -> ScalarFn {
      return [=](ad::Tape<double>& t, VarList in) {
        const std::span<const std::uint8_t> ys(batch->labels);
        std::vector<ForwardResult<double>> outs;
        std::size_t offset = 0;
        for (const auto& p : *holder) {
          BoundParams<double> bound{&p, std::vector<Var<double>>(in.begin() + static_cast<std::ptrdiff_t>(offset),
                                                                  in.begin() + static_cast<std::ptrdiff_t>(offset + p.tensors.size()))};
          offset += p.tensors.size();
          outs.push_back(forward(bound, *batch, *embedding, ForwardOptions{}));
        }
        if (!mc.joint) {
          return total_loss(ad::bce(outs[0].prob, ys), diversity_loss<double>(t, outs[0].heads), 0.5);
        }
        const auto tri = tri_diversity_loss(cross_orthogonality_loss<double>(outs[0].heads, outs[1].heads),
                                            diversity_loss<double>(t, outs[0].heads),
                                            diversity_loss<double>(t, outs[1].heads), 0.5, 0.5);
        return joint_loss(ad::bce(outs[0].prob, ys), ad::bce(outs[1].prob, ys), 2.0, 1.0, tri);
      };
    };
    components.push_back(std::move(c));
  }

  std::vector<GradCheckReport> reports;
  Rng rng(o.seed);
  for (const auto& c : components) {
    GradCheckReport merged;
    merged.name = c.name;
    merged.tolerance = o.tolerance;
    for (std::size_t p = 0; p < c.points; ++p) {
      auto point = c.sample(rng);
      const auto fn = c.make_fn(rng);
      const auto r = grad_check(c.name, fn, std::move(point), o.step, o.tolerance);
      merged.coordinates += r.coordinates;
      merged.failures += r.failures;
      if (r.max_rel_error >= merged.max_rel_error) {
        merged.max_rel_error = r.max_rel_error;
        merged.worst_input = r.worst_input;
        merged.worst_index = r.worst_index;
      }
    }
    reports.push_back(std::move(merged));
  }
  return reports;
}

}  // namespace mhad
