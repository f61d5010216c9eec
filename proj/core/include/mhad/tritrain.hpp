#pragma once

// Tri-training of three attention classifiers. m1 and m2 are trained jointly
// with a cross-model orthogonality penalty; m3 is trained alone. In the full
// procedure each model is refined on unlabeled source text that the other
// two label identically, with at least one of them confident beyond tau.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mhad/checkpoint.hpp"
#include "mhad/corpus.hpp"
#include "mhad/hyperparams.hpp"
#include "mhad/model.hpp"
#include "mhad/trainer.hpp"

namespace mhad {

struct Ensemble {
  std::array<Classifier<float>, 3> models;
  std::array<std::uint64_t, 3> seeds{};
  std::size_t iterations = 0;
  std::optional<double> initial_agreement;  // before the first refinement pass
  std::vector<double> agreement_history;    // after each refinement pass
  std::vector<std::array<std::size_t, 3>> pseudo_label_sizes;  // |X^pl| for m1, m2, m3 per pass
};

struct PseudoLabeledSet {
  EncodedCorpus corpus;            // origin pseudo_labeled, labels = agreed label
  std::vector<std::size_t> rows;   // row indices into the unlabeled pool
  std::vector<double> confidence_j;
  std::vector<double> confidence_k;

  [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
};

/// max(p, 1 - p).
[[nodiscard]] inline double confidence(double prob) { return prob > 0.5 ? prob : 1.0 - prob; }

/// Accepted label when both models agree and at least one is confident beyond tau.
std::optional<std::uint8_t> pseudo_label_decision(double prob_j, double prob_k, double tau);

PseudoLabeledSet pseudo_label_from_predictions(const EncodedCorpus& unlabeled, std::span<const double> prob_j,
                                               std::span<const double> prob_k, double tau);

/// Labels `unlabeled` for model `target` (0, 1 or 2) using the other two models.
PseudoLabeledSet pseudo_label(const Ensemble& ensemble, std::size_t target, const EncodedCorpus& unlabeled,
                              double tau);

std::vector<std::uint8_t> majority_vote(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                        std::span<const std::uint8_t> c);
std::vector<std::uint8_t> majority_vote(const Ensemble& ensemble, const EncodedCorpus& corpus);

/// Fraction of examples where all three labels coincide.
double agreement_rate(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                      std::span<const std::uint8_t> c);
double agreement_rate(const Ensemble& ensemble, const EncodedCorpus& corpus);

/// Majority-vote accuracy on a labeled corpus.
double ensemble_accuracy(const Ensemble& ensemble, const EncodedCorpus& corpus);

/// Trains `primary` and `partner` on the same batches with
/// w_primary·bce(primary) + w_partner·bce(partner) + alpha·L_o + beta·(L_d(primary) + L_d(partner)).
/// Each model keeps its own Adam state. Early stopping follows the primary's
/// validation loss; both models are restored to that best epoch.
TrainReport joint_diversity_train(Classifier<float>& primary, Classifier<float>& partner, const EncodedCorpus& train,
                                  const EncodedCorpus& val, const HyperParams& hp, double w_primary,
                                  double w_partner, std::uint64_t seed);

struct IterationLog {
  std::size_t iteration = 0;
  std::array<std::size_t, 3> pseudo_label_sizes{};
  double agreement = 0.0;
};

struct TriTrainOptions {
  std::uint64_t seed = 0;
  bool parallel = false;  // train m3 concurrently with the m1/m2 pass
  std::function<void(const IterationLog&)> on_iteration;
};

/// Builds three freshly initialized classifiers with per-model seeds derived from `seed`.
Ensemble make_ensemble(const ModelConfig& config, std::shared_ptr<const Tensor<float>> embedding, std::uint64_t seed);

/// One-step tri-training on labeled source data only: m1/m2 jointly, m3 alone.
Ensemble one_step_tritrain(const EncodedCorpus& labeled, const ModelConfig& config,
                           std::shared_ptr<const Tensor<float>> embedding, const HyperParams& hp,
                           const TriTrainOptions& options);

/// Full tri-training: one-step bootstrap, then refinement passes until the
/// three models agree on at least hp.agreement_stop of the unlabeled pool or
/// hp.max_iters passes have run.
Ensemble tritrain_full(const EncodedCorpus& labeled, const EncodedCorpus& unlabeled, const ModelConfig& config,
                       std::shared_ptr<const Tensor<float>> embedding, const HyperParams& hp,
                       const TriTrainOptions& options);

/// Directory with m1.ckpt, m2.ckpt, m3.ckpt and ensemble.json.
void save_ensemble(const std::filesystem::path& dir, const Ensemble& ensemble, const CheckpointMeta& meta);
Ensemble load_ensemble(const std::filesystem::path& dir, std::shared_ptr<const Tensor<float>> embedding,
                       CheckpointMeta* meta = nullptr);

}  // namespace mhad
