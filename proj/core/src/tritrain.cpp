#include "mhad/tritrain.hpp"

#include <fstream>
#include <future>
#include <numeric>

#include <nlohmann/json.hpp>

#include "mhad/log.hpp"
#include "mhad/losses.hpp"
#include "mhad/rng.hpp"

namespace mhad {

std::optional<std::uint8_t> pseudo_label_decision(double prob_j, double prob_k, double tau) {
  const auto label_j = threshold_label(prob_j);
  if (label_j != threshold_label(prob_k)) return std::nullopt;
  if (std::max(confidence(prob_j), confidence(prob_k)) > tau) return label_j;
  return std::nullopt;
}

PseudoLabeledSet pseudo_label_from_predictions(const EncodedCorpus& unlabeled, std::span<const double> prob_j,
                                               std::span<const double> prob_k, double tau) {
  if (prob_j.size() != unlabeled.size() || prob_k.size() != unlabeled.size()) {
    throw TrainingError("pseudo_label: prediction count does not match corpus");
  }
  PseudoLabeledSet out;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    if (const auto label = pseudo_label_decision(prob_j[i], prob_k[i], tau)) {
      out.rows.push_back(i);
      labels.push_back(*label);
      out.confidence_j.push_back(confidence(prob_j[i]));
      out.confidence_k.push_back(confidence(prob_k[i]));
    }
  }
  out.corpus = unlabeled.subset(out.rows);
  out.corpus.labels = std::move(labels);
  out.corpus.origin = Origin::pseudo_labeled;
  return out;
}

namespace {

std::array<std::size_t, 2> others(std::size_t target) {
  switch (target) {
    case 0: return {1, 2};
    case 1: return {0, 2};
    case 2: return {0, 1};
    default: throw std::invalid_argument("model index must be 0, 1 or 2");
  }
}

void reject_target_data(const EncodedCorpus& corpus, std::string_view who) {
  if (corpus.origin == Origin::target_test) {
    throw TrainingError(std::string(who) + ": target-domain test data cannot be used for training");
  }
}

}  // namespace

PseudoLabeledSet pseudo_label(const Ensemble& ensemble, std::size_t target, const EncodedCorpus& unlabeled,
                              double tau) {
  reject_target_data(unlabeled, "pseudo_label");
  const auto [j, k] = others(target);
  const auto pj = ensemble.models[j].predict(unlabeled);
  const auto pk = ensemble.models[k].predict(unlabeled);
  return pseudo_label_from_predictions(unlabeled, pj.prob, pk.prob, tau);
}

std::vector<std::uint8_t> majority_vote(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                        std::span<const std::uint8_t> c) {
  if (a.size() != b.size() || a.size() != c.size()) throw std::invalid_argument("majority_vote: length mismatch");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] + b[i] + c[i]) >= 2 ? 1 : 0;
  return out;
}

std::vector<std::uint8_t> majority_vote(const Ensemble& ensemble, const EncodedCorpus& corpus) {
  const auto a = ensemble.models[0].predict(corpus).labels();
  const auto b = ensemble.models[1].predict(corpus).labels();
  const auto c = ensemble.models[2].predict(corpus).labels();
  return majority_vote(a, b, c);
}

double agreement_rate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                      std::span<const std::uint8_t> c) {
  if (a.empty()) throw std::invalid_argument("agreement_rate: empty corpus");
  if (a.size() != b.size() || a.size() != c.size()) throw std::invalid_argument("agreement_rate: length mismatch");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += (a[i] == b[i] && b[i] == c[i]) ? 1 : 0;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double agreement_rate(const Ensemble& ensemble, const EncodedCorpus& corpus) {
  if (corpus.empty()) throw std::invalid_argument("agreement_rate: empty corpus");
  const auto a = ensemble.models[0].predict(corpus).labels();
  const auto b = ensemble.models[1].predict(corpus).labels();
  const auto c = ensemble.models[2].predict(corpus).labels();
  return agreement_rate(a, b, c);
}

double ensemble_accuracy(const Ensemble& ensemble, const EncodedCorpus& corpus) {
  if (!corpus.labeled()) throw TrainingError("ensemble_accuracy: labels required");
  if (corpus.empty()) throw TrainingError("ensemble_accuracy: empty corpus");
  const auto votes = majority_vote(ensemble, corpus);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < votes.size(); ++i) correct += votes[i] == (*corpus.labels)[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(votes.size());
}

TrainReport joint_diversity_train(Classifier<float>& primary, Classifier<float>& partner, const EncodedCorpus& train,
                                  const EncodedCorpus& val, const HyperParams& hp, double w_primary,
                                  double w_partner, std::uint64_t seed) {
  hp.validate();
  require_training_corpus(train, "joint_diversity_train");
  if (train.empty()) throw TrainingError("joint_diversity_train: empty training set");
  const bool monitor = !val.empty();
  if (monitor) require_training_corpus(val, "joint_diversity_train (validation)");
  if (primary.params().config.heads != partner.params().config.heads) {
    throw TrainingError("joint_diversity_train: models have different head counts");
  }

  Rng order_rng(derive_seed(seed, 1));
  Rng dropout_primary(derive_seed(seed, 2));
  Rng dropout_partner(derive_seed(seed, 3));
  auto opt_primary = OptimizerState<float>::create(primary.params(), hp);
  auto opt_partner = OptimizerState<float>::create(partner.params(), hp);
  EarlyStopping stopper(hp.patience, hp.min_delta);
  auto best_primary = primary.params();
  auto best_partner = partner.params();

  TrainReport report;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= hp.max_epoch; ++epoch) {
    order_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += hp.batch) {
      const auto end = std::min(order.size(), begin + hp.batch);
      const auto batch = make_batch(train, std::span<const std::size_t>(order).subspan(begin, end - begin));
      const std::span<const std::uint8_t> labels(batch.labels);
      ad::Tape<float> tape;
      const auto b1 = bind(tape, primary.params(), true);
      const auto b2 = bind(tape, partner.params(), true);
      const auto o1 =
          forward(b1, batch, primary.embedding(), ForwardOptions{true, hp.dropout, &dropout_primary});
      const auto o2 =
          forward(b2, batch, partner.embedding(), ForwardOptions{true, hp.dropout, &dropout_partner});
      auto loss = ad::add(ad::scale(ad::bce(o1.prob, labels), static_cast<float>(w_primary)),
                          ad::scale(ad::bce(o2.prob, labels), static_cast<float>(w_partner)));
      if (hp.alpha > 0.0 || hp.beta > 0.0) {
        const auto lo = hp.alpha > 0.0 ? cross_orthogonality_loss<float>(o1.heads, o2.heads)
                                       : tape.constant(Tensor<float>::scalar(0.0f));
        const auto ld = [&](const ForwardResult<float>& o) {
          return hp.beta > 0.0 ? diversity_loss<float>(tape, o.heads) : tape.constant(Tensor<float>::scalar(0.0f));
        };
        loss = ad::add(loss, tri_diversity_loss(lo, ld(o1), ld(o2), hp.alpha, hp.beta));
      }
      const auto grads = tape.backward(loss);
      auto g1 = b1.gradients(grads);
      auto g2 = b2.gradients(grads);
      if (hp.max_grad_norm > 0.0) {
        clip_global_norm(std::span<Tensor<float>>(g1), hp.max_grad_norm);
        clip_global_norm(std::span<Tensor<float>>(g2), hp.max_grad_norm);
      }
      adam_step(opt_primary, primary.params(), std::span<const Tensor<float>>(g1));
      adam_step(opt_partner, partner.params(), std::span<const Tensor<float>>(g2));
      loss_sum += loss.value().item() * static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_acc = evaluate_accuracy(primary, train);
    if (monitor) {
      rec.val_loss = evaluate_loss(primary, val, hp.gamma).total;
      rec.val_acc = evaluate_accuracy(primary, val);
    }
    report.epochs.push_back(rec);
    report.stopped_epoch = epoch;
    if (!monitor) continue;
    if (stopper.update(rec.val_loss)) {
      best_primary = primary.params();
      best_partner = partner.params();
      report.best_epoch = epoch;
      report.best_val_loss = rec.val_loss;
    }
    if (stopper.should_stop()) break;
  }
  if (monitor) {
    primary.params() = std::move(best_primary);
    partner.params() = std::move(best_partner);
  }
  return report;
}

Ensemble make_ensemble(const ModelConfig& config, std::shared_ptr<const Tensor<float>> embedding, std::uint64_t seed) {
  Ensemble e;
  for (std::size_t i = 0; i < 3; ++i) {
    e.seeds[i] = derive_seed(seed, 20 + i);
    e.models[i] = Classifier<float>(init_params<float>(config, e.seeds[i], embedding.get()), embedding);
  }
  return e;
}

namespace {

void bootstrap(Ensemble& e, const EncodedCorpus& train, const EncodedCorpus& val, const HyperParams& hp) {
  joint_diversity_train(e.models[0], e.models[1], train, val, hp, 1.0, 1.0, e.seeds[0]);
  fit(e.models[2], train, val, hp, e.seeds[2]);
}

}  // namespace

Ensemble one_step_tritrain(const EncodedCorpus& labeled, const ModelConfig& config,
                           std::shared_ptr<const Tensor<float>> embedding, const HyperParams& hp,
                           const TriTrainOptions& options) {
  require_training_corpus(labeled, "one_step_tritrain");
  auto [train, val] = train_val_split(labeled, hp.val_fraction, derive_seed(options.seed, 10));
  Ensemble e = make_ensemble(config, std::move(embedding), options.seed);
  bootstrap(e, train, val, hp);
  return e;
}

Ensemble tritrain_full(const EncodedCorpus& labeled, const EncodedCorpus& unlabeled, const ModelConfig& config,
                       std::shared_ptr<const Tensor<float>> embedding, const HyperParams& hp,
                       const TriTrainOptions& options) {
  hp.validate();
  require_training_corpus(labeled, "tritrain_full");
  reject_target_data(unlabeled, "tritrain_full");
  if (unlabeled.empty()) throw TrainingError("tritrain_full: unlabeled source pool is empty");

  auto [train, val] = train_val_split(labeled, hp.val_fraction, derive_seed(options.seed, 10));
  Ensemble e = make_ensemble(config, std::move(embedding), options.seed);
  bootstrap(e, train, val, hp);
  e.initial_agreement = agreement_rate(e, unlabeled);

  for (std::size_t iter = 1; iter <= hp.max_iters; ++iter) {
    // All three sets come from the models as they stand at the start of the pass.
    std::array<PseudoLabeledSet, 3> pl;
    for (std::size_t i = 0; i < 3; ++i) pl[i] = pseudo_label(e, i, unlabeled, hp.tau);
    if (pl[2].size() == 0 && iter == 1) {
      throw TrainingError("tritrain_full: no unlabeled example passed the agreement/confidence filter for m3; "
                          "try a lower tau");
    }

    const auto pass_seed = [&](std::size_t model) { return derive_seed(options.seed, 1000 + 10 * iter + model); };
    auto train_m3 = [&]() -> std::optional<Classifier<float>> {
      if (pl[2].size() == 0) {
        warn("tritrain_full: iteration " + std::to_string(iter) + " produced no pseudo-labels for m3; m3 unchanged");
        return std::nullopt;
      }
      Classifier<float> m3 = e.models[2];
      fit(m3, pl[2].corpus, val, hp, pass_seed(2));
      return m3;
    };

    std::future<std::optional<Classifier<float>>> pending;
    if (options.parallel) pending = std::async(std::launch::async, train_m3);

    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t partner_index = 1 - i;
      Classifier<float> primary = e.models[i];
      Classifier<float> partner = e.models[partner_index];
      const auto data = concat_labeled(train, pl[i].corpus, Origin::source_labeled);
      joint_diversity_train(primary, partner, data, val, hp, 2.0, 1.0, pass_seed(i));
      e.models[i] = std::move(primary);
    }

    auto m3 = options.parallel ? pending.get() : train_m3();
    if (m3) e.models[2] = std::move(*m3);

    ++e.iterations;
    const double agreement = agreement_rate(e, unlabeled);
    e.agreement_history.push_back(agreement);
    e.pseudo_label_sizes.push_back({pl[0].size(), pl[1].size(), pl[2].size()});
    if (options.on_iteration) options.on_iteration({iter, e.pseudo_label_sizes.back(), agreement});
    if (agreement >= hp.agreement_stop) break;
  }
  return e;
}

void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble, const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < 3; ++i) {
    CheckpointMeta m = meta;
    m.seed = ensemble.seeds[i];
    save_checkpoint(dir / ("m" + std::to_string(i + 1) + ".ckpt"), ensemble.models[i].params(), m);
  }
  nlohmann::json sizes = nlohmann::json::array();
  for (const auto& s : ensemble.pseudo_label_sizes) sizes.push_back(s);
  nlohmann::json manifest = {
      {"format", "mhad-ensemble"},
      {"version", 1},
      {"variant", meta.variant},
      {"seed", meta.seed},
      {"models", {"m1.ckpt", "m2.ckpt", "m3.ckpt"}},
      {"iterations", ensemble.iterations},
      {"initial_agreement", ensemble.initial_agreement ? nlohmann::json(*ensemble.initial_agreement) : nlohmann::json(nullptr)},
      {"agreement_history", ensemble.agreement_history},
      {"pseudo_label_sizes", sizes},
  };
  std::ofstream out(dir / "ensemble.json", std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + (dir / "ensemble.json").string());
  out << manifest.dump(2) << '\n';
}

Ensemble load_ensemble(const std::filesystem::path& dir, std::shared_ptr<const Tensor<float>> embedding,
                       CheckpointMeta* meta) {
  std::ifstream in(dir / "ensemble.json", std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + (dir / "ensemble.json").string());
  Ensemble e;
  try {
    const auto manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "mhad-ensemble") throw CheckpointError("not an ensemble manifest");
    e.iterations = manifest.at("iterations").get<std::size_t>();
    if (!manifest.at("initial_agreement").is_null()) {
      e.initial_agreement = manifest.at("initial_agreement").get<double>();
    }
    e.agreement_history = manifest.at("agreement_history").get<std::vector<double>>();
    e.pseudo_label_sizes = manifest.at("pseudo_label_sizes").get<std::vector<std::array<std::size_t, 3>>>();
    const auto files = manifest.at("models").get<std::vector<std::string>>();
    if (files.size() != 3) throw CheckpointError("ensemble manifest must list three models");
    for (std::size_t i = 0; i < 3; ++i) {
      auto ck = load_checkpoint(dir / files[i]);
      e.seeds[i] = ck.meta.seed;
      if (meta && i == 0) {
        *meta = ck.meta;
        meta->seed = manifest.at("seed").get<std::uint64_t>();
      }
      e.models[i] = Classifier<float>(std::move(ck.params), embedding);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("malformed ensemble manifest: ") + ex.what());
  }
  return e;
}

}  // namespace mhad
