#include "mhad/losses.hpp"

#include <stdexcept>

namespace mhad {

std::size_t diversity_pair_count(std::size_t heads) {
  return heads <= 2 ? 0 : (heads - 2) * (heads - 1) / 2;
}

std::size_t orthogonality_normalizer(std::size_t heads) {
  return heads <= 1 ? 1 : heads * (heads - 1) / 2;
}

namespace {

template <typename T>
void check_heads(std::span<const ad::Var<T>> heads, const char* who) {
  if (heads.empty()) throw std::invalid_argument(std::string(who) + ": no attention heads");
  for (const auto& h : heads) {
    if (!h.value().same_shape(heads.front().value())) {
      throw std::invalid_argument(std::string(who) + ": attention heads differ in shape");
    }
  }
}

template <typename T>
ad::Var<T> squared_row_overlap(const ad::Var<T>& a, const ad::Var<T>& b) {
  return ad::square(ad::sum_rows(ad::mul(a, b)));  // B x 1
}

}  // namespace

template <typename T>
ad::Var<T> diversity_loss(ad::Tape<T>& tape, std::span<const ad::Var<T>> heads) {
  check_heads(heads, "diversity_loss");
  const std::size_t pairs = diversity_pair_count(heads.size());
  if (pairs == 0) return tape.constant(Tensor<T>::scalar(T(0)));
  ad::Var<T> acc;
  const std::size_t constrained = heads.size() - 1;
  for (std::size_t i = 0; i < constrained; ++i) {
    for (std::size_t j = i + 1; j < constrained; ++j) {
      const auto term = squared_row_overlap(heads[i], heads[j]);
      acc = acc.valid() ? ad::add(acc, term) : term;
    }
  }
  return ad::scale(ad::mean(acc), static_cast<T>(1.0 / static_cast<double>(pairs)));
}

template <typename T>
ad::Var<T> cross_orthogonality_loss(std::span<const ad::Var<T>> heads_m1, std::span<const ad::Var<T>> heads_m2) {
  check_heads(heads_m1, "cross_orthogonality_loss");
  check_heads(heads_m2, "cross_orthogonality_loss");
  if (heads_m1.size() != heads_m2.size()) {
    throw std::invalid_argument("cross_orthogonality_loss: models have different head counts");
  }
  if (!heads_m1.front().value().same_shape(heads_m2.front().value())) {
    throw std::invalid_argument("cross_orthogonality_loss: attention stacks come from different batches");
  }
  ad::Var<T> acc;
  for (const auto& a : heads_m1) {
    for (const auto& b : heads_m2) {
      const auto term = squared_row_overlap(a, b);
      acc = acc.valid() ? ad::add(acc, term) : term;
    }
  }
  const double k = static_cast<double>(orthogonality_normalizer(heads_m1.size()));
  return ad::scale(ad::mean(acc), static_cast<T>(1.0 / k));
}

template <typename T>
ad::Var<T> total_loss(const ad::Var<T>& bce, const ad::Var<T>& diversity, double gamma) {
  if (gamma == 0.0) return bce;
  return ad::add(bce, ad::scale(diversity, static_cast<T>(gamma)));
}

template <typename T>
ad::Var<T> tri_diversity_loss(const ad::Var<T>& orthogonality, const ad::Var<T>& diversity_m1,
                              const ad::Var<T>& diversity_m2, double alpha, double beta) {
  return ad::add(ad::scale(orthogonality, static_cast<T>(alpha)),
                 ad::scale(ad::add(diversity_m1, diversity_m2), static_cast<T>(beta)));
}

template <typename T>
ad::Var<T> joint_loss(const ad::Var<T>& bce_m1, const ad::Var<T>& bce_m2, double w1, double w2,
                      const ad::Var<T>& tri_diversity) {
  if (!(w1 > 0.0 && w2 > 0.0)) throw std::invalid_argument("joint_loss: weights must be positive");
  return ad::add(ad::add(ad::scale(bce_m1, static_cast<T>(w1)), ad::scale(bce_m2, static_cast<T>(w2))),
                 tri_diversity);
}

namespace {

// Scalar forms reuse the tape path on constants.
std::vector<ad::Var<double>> as_constants(ad::Tape<double>& tape, const AttentionStack& stack) {
  std::vector<ad::Var<double>> out;
  for (const auto& h : stack.heads) out.push_back(tape.constant(h));
  return out;
}

}  // namespace

double diversity_loss(const AttentionStack& stack) {
  ad::Tape<double> tape;
  const auto heads = as_constants(tape, stack);
  return diversity_loss<double>(tape, heads).value().item();
}

double cross_orthogonality_loss(const AttentionStack& m1, const AttentionStack& m2) {
  ad::Tape<double> tape;
  const auto a = as_constants(tape, m1);
  const auto b = as_constants(tape, m2);
  return cross_orthogonality_loss<double>(a, b).value().item();
}

double total_loss(double bce, double diversity, double gamma) { return bce + gamma * diversity; }

double tri_diversity_loss(double orthogonality, double diversity_m1, double diversity_m2, double alpha, double beta) {
  return alpha * orthogonality + beta * (diversity_m1 + diversity_m2);
}

double joint_loss(double bce_m1, double bce_m2, double w1, double w2, double tri_diversity) {
  if (!(w1 > 0.0 && w2 > 0.0)) throw std::invalid_argument("joint_loss: weights must be positive");
  return w1 * bce_m1 + w2 * bce_m2 + tri_diversity;
}

double mean_constrained_overlap(const AttentionStack& stack) {
  const std::size_t pairs = diversity_pair_count(stack.heads.size());
  if (pairs == 0) return 0.0;
  const std::size_t constrained = stack.heads.size() - 1;
  const auto& first = stack.heads.front();
  double total = 0.0;
  for (std::size_t i = 0; i < constrained; ++i) {
    for (std::size_t j = i + 1; j < constrained; ++j) {
      const auto& a = stack.heads[i];
      const auto& b = stack.heads[j];
      for (std::size_t k = 0; k < a.size(); ++k) total += a[k] * b[k];
    }
  }
  return total / static_cast<double>(pairs * first.rows());
}

#define MHAD_INSTANTIATE_LOSSES(T)                                                                          \
  template ad::Var<T> diversity_loss<T>(ad::Tape<T>&, std::span<const ad::Var<T>>);                         \
  template ad::Var<T> cross_orthogonality_loss<T>(std::span<const ad::Var<T>>, std::span<const ad::Var<T>>); \
  template ad::Var<T> total_loss<T>(const ad::Var<T>&, const ad::Var<T>&, double);                          \
  template ad::Var<T> tri_diversity_loss<T>(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&, double, \
                                            double);                                                        \
  template ad::Var<T> joint_loss<T>(const ad::Var<T>&, const ad::Var<T>&, double, double, const ad::Var<T>&);

MHAD_INSTANTIATE_LOSSES(float)
MHAD_INSTANTIATE_LOSSES(double)

#undef MHAD_INSTANTIATE_LOSSES

}  // namespace mhad
