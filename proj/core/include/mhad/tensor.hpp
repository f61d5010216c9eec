#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mhad {

/// Row-major dense 2-D array. Vectors are 1×n or n×1, scalars are 1×1.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_string());
    }
  }
  Tensor(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw std::invalid_argument("ragged tensor literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Tensor scalar(T value) { return Tensor(1, 1, value); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.rows_, other.cols_); }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
  [[nodiscard]] std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  [[nodiscard]] bool same_shape(const Tensor& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  [[nodiscard]] std::string shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
  }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  [[nodiscard]] T item() const {
    if (data_.size() != 1) throw std::logic_error("item() on non-scalar " + shape_string());
    return data_[0];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterprets the same data under a new shape with equal element count.
  void reshape(std::size_t rows, std::size_t cols) {
    if (rows * cols != data_.size()) throw std::invalid_argument("reshape changes element count");
    rows_ = rows;
    cols_ = cols;
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(rows_, cols_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace mhad
