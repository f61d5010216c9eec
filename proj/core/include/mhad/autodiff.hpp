#pragma once

// Reverse-mode automatic differentiation on a linear tape of dense 2-D
// arrays. Every primitive records its output and a backward rule; backward()
// replays the records once in reverse order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mhad/rng.hpp"
#include "mhad/tensor.hpp"

namespace mhad::ad {

enum class PrimitiveKind {
  leaf,
  matmul,
  add,
  mul,
  scale,
  concat,
  slice,
  tanh,
  sigmoid,
  softmax_rows,
  dropout_mask,
  sum,
  mean,
  square,
  dot,
  bce,
  sum_rows,
  gather_rows,
  transpose,
  reshape,
  weighted_rows,
  custom,
};

std::string_view to_string(PrimitiveKind kind);

class AutodiffError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Clamp applied to probabilities inside bce.
inline constexpr double kProbEpsilon = 1e-7;

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] Tape<T>* tape() const noexcept { return tape_; }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] const Tensor<T>& value() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of backward(): one gradient per tape record. Records that the root
/// does not depend on report zeros of their own shape.
template <typename T>
class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape<T>* tape, std::vector<Tensor<T>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  [[nodiscard]] Tensor<T> of(const Var<T>& v) const;

 private:
  const Tape<T>* tape_ = nullptr;
  std::vector<Tensor<T>> grads_;
};

template <typename T>
class Tape {
 public:
  /// Accumulates into the gradients of the record's inputs. Entries of `grad_in`
  /// are null for inputs that do not require a gradient.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  struct Record {
    PrimitiveKind kind = PrimitiveKind::leaf;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends a primitive application. Fails if the output holds NaN or Inf.
  Var<T> record(PrimitiveKind kind, Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward);

  [[nodiscard]] Gradients<T> backward(const Var<T>& root) const;

  [[nodiscard]] const Record& at(std::size_t id) const { return records_.at(id); }
  [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }

 private:
  std::vector<Record> records_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->at(id_).value;
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->at(id_).requires_grad;
}

// Primitives. All operands of one call must live on the same tape.

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Elementwise sum; `b` may also be a 1×n row added to every row of `a`.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
/// axis 0 stacks rows, axis 1 stacks columns.
template <typename T> Var<T> concat(std::span<const Var<T>> parts, int axis);
template <typename T> Var<T> slice(const Var<T>& a, int axis, std::size_t begin, std::size_t end);
template <typename T> Var<T> tanh(const Var<T>& a);
template <typename T> Var<T> sigmoid(const Var<T>& a);
/// Row-wise softmax. With a mask (same shape, nonzero = keep) masked entries
/// are exactly 0; a row with no kept entry becomes one-hot at column 0.
template <typename T> Var<T> softmax_rows(const Var<T>& a, const std::vector<std::uint8_t>* mask = nullptr);
/// Inverted dropout: keeps each entry with probability 1-rate, scaled by 1/(1-rate).
template <typename T> Var<T> dropout(const Var<T>& a, double rate, Rng& rng);
/// Dropout with an explicit 0/1 keep mask.
template <typename T> Var<T> apply_dropout_mask(const Var<T>& a, const std::vector<std::uint8_t>& keep, double rate);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> square(const Var<T>& a);
/// Full inner product of two same-shape arrays.
template <typename T> Var<T> dot(const Var<T>& a, const Var<T>& b);
/// Mean binary cross-entropy of n×1 probabilities against 0/1 targets.
template <typename T> Var<T> bce(const Var<T>& prob, std::span<const std::uint8_t> targets);
/// m×n → m×1 row sums.
template <typename T> Var<T> sum_rows(const Var<T>& a);
template <typename T> Var<T> gather_rows(const Var<T>& table, std::span<const std::int32_t> indices);
/// Row lookup into a table that is not on the tape (frozen embeddings).
template <typename T> Var<T> gather_rows(Tape<T>& tape, const Tensor<T>& table, std::span<const std::int32_t> indices);
template <typename T> Var<T> transpose(const Var<T>& a);
template <typename T> Var<T> reshape(const Var<T>& a, std::size_t rows, std::size_t cols);
/// Context vectors: weights is B×L, states is (L·B)×D in step-major order
/// (row l·B+b); out[b] = Σ_l weights[b,l]·states[l·B+b].
template <typename T> Var<T> weighted_rows(const Var<T>& weights, const Var<T>& states);

/// Convenience for short expressions.
template <typename T> Var<T> concat(std::initializer_list<Var<T>> parts, int axis) {
  std::vector<Var<T>> v(parts);
  return concat<T>(std::span<const Var<T>>(v), axis);
}

}  // namespace mhad::ad
