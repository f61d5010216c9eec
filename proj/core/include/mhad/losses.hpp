#pragma once

// Attention-overlap penalties. Each head A_i is read per example as a
// distribution over token positions, so a pair's overlap is the squared dot
// product (A_i[b]·A_j[b])^2, averaged over the batch.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mhad/autodiff.hpp"
#include "mhad/model.hpp"

namespace mhad {

struct LossBreakdown {
  double bce = 0.0;      // single model, or weighted sum of both models' BCE when joint
  double diversity = 0.0;           // L_d of the (primary) model
  double partner_diversity = 0.0;   // L_d of the partner during joint training
  double orthogonality = 0.0;       // L_o
  double tri_diversity = 0.0;       // L_dtri
  double total = 0.0;
};

/// Number of constrained head pairs among heads 1..T_y-1: (T_y-2)(T_y-1)/2.
std::size_t diversity_pair_count(std::size_t heads);

/// Normalizer of the cross-model loss, T_y(T_y-1)/2, with T_y = 1 mapped to 1.
std::size_t orthogonality_normalizer(std::size_t heads);

/// Within-model diversity over heads 1..T_y-1; the last head is unconstrained.
/// Zero for T_y <= 2.
template <typename T>
ad::Var<T> diversity_loss(ad::Tape<T>& tape, std::span<const ad::Var<T>> heads);

/// Cross-model overlap over all T_y x T_y head pairs of two models on the same batch.
template <typename T>
ad::Var<T> cross_orthogonality_loss(std::span<const ad::Var<T>> heads_m1, std::span<const ad::Var<T>> heads_m2);

/// bce + gamma * diversity.
template <typename T>
ad::Var<T> total_loss(const ad::Var<T>& bce, const ad::Var<T>& diversity, double gamma);

/// alpha * orthogonality + beta * (diversity_m1 + diversity_m2).
template <typename T>
ad::Var<T> tri_diversity_loss(const ad::Var<T>& orthogonality, const ad::Var<T>& diversity_m1,
                              const ad::Var<T>& diversity_m2, double alpha, double beta);

/// w1 * bce_m1 + w2 * bce_m2 + tri_diversity.
template <typename T>
ad::Var<T> joint_loss(const ad::Var<T>& bce_m1, const ad::Var<T>& bce_m2, double w1, double w2,
                      const ad::Var<T>& tri_diversity);

// Scalar forms on recorded attention weights.

double diversity_loss(const AttentionStack& stack);
double cross_orthogonality_loss(const AttentionStack& m1, const AttentionStack& m2);
double total_loss(double bce, double diversity, double gamma);
double tri_diversity_loss(double orthogonality, double diversity_m1, double diversity_m2, double alpha, double beta);
double joint_loss(double bce_m1, double bce_m2, double w1, double w2, double tri_diversity);

/// Mean over constrained head pairs and examples of the plain dot product A_i[b]·A_j[b].
double mean_constrained_overlap(const AttentionStack& stack);

}  // namespace mhad
