// SPDX-License-Identifier: Apache-2.0
/**
 * @file   tensor.h
 * @brief  Dense row-major tensor used as the numeric carrier of the tape.
 *
 * Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix. Matrix-style
 * accessors treat a vector as a single row.
 */
#ifndef AGDT_TENSOR_H
#define AGDT_TENSOR_H

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace agdt {

using Shape = std::vector<std::size_t>;

/// Raised when operand extents do not fit the operation.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an argument violates a documented precondition.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape &shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

template <typename S> class Tensor {
public:
  using value_type = S;

  Tensor() : shape_{}, data_(1, S{0}) {}

  explicit Tensor(Shape shape, S fill = S{0})
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<S> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor of shape " + shape_string(shape_) +
                           " cannot hold " + std::to_string(data_.size()) +
                           " values");
  }

  static Tensor scalar(S v) { return Tensor(Shape{}, std::vector<S>{v}); }

  static Tensor vector(std::initializer_list<S> values) {
    return Tensor(Shape{values.size()}, std::vector<S>(values));
  }

  static Tensor vector(std::vector<S> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<S>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<S> values;
    values.reserve(r * c);
    for (const auto &row : rows) {
      if (row.size() != c)
        throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
      t.at(i, i) = S{1};
    return t;
  }

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  /// Row count under the matrix view (1 for scalars and vectors).
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  /// Column count under the matrix view.
  std::size_t cols() const {
    if (rank() == 2)
      return shape_[1];
    return rank() == 1 ? shape_[0] : 1;
  }

  S &operator[](std::size_t i) { return data_[i]; }
  const S &operator[](std::size_t i) const { return data_[i]; }

  S &at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const S &at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<S> row(std::size_t r) {
    return std::span<S>(data_).subspan(r * cols(), cols());
  }
  std::span<const S> row(std::size_t r) const {
    return std::span<const S>(data_).subspan(r * cols(), cols());
  }

  std::span<S> values() { return data_; }
  std::span<const S> values() const { return data_; }
  const std::vector<S> &storage() const { return data_; }

  S item() const {
    if (data_.size() != 1)
      throw DimensionError("item() on tensor of shape " +
                           shape_string(shape_));
    return data_[0];
  }

  bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename T> Tensor<T> cast() const {
    std::vector<T> out(data_.begin(), data_.end());
    return Tensor<T>(shape_, std::move(out));
  }

  bool operator==(const Tensor &other) const = default;

private:
  Shape shape_;
  std::vector<S> data_;
};

} // namespace agdt

#endif // AGDT_TENSOR_H
