#pragma once

#include "softorder/types.hpp"

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace softorder {

/// Raised on any shape/dimension mismatch; the message names both shapes.
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised on violated call contracts (bad rates, empty splits, non-bijective
/// permutations, ...).
class ContractError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Dense n-dimensional array of Scalar, row-major flat storage.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<Index> shape)
      : shape_(std::move(shape)), data_(ArrayXs::Zero(count(shape_))) {}

  Tensor(std::vector<Index> shape, ArrayXs data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
  }

  static Tensor zeros(std::vector<Index> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<Index> shape, Scalar v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor ones(std::vector<Index> shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor scalar(Scalar v) { return full({1}, v); }

  static Tensor from(std::vector<Index> shape, std::initializer_list<Scalar> values) {
    Tensor t(std::move(shape));
    if (static_cast<Index>(values.size()) != t.size())
      throw ShapeError("initializer length does not match shape " + t.shape_str());
    Index i = 0;
    for (Scalar v : values) t.data_[i++] = v;
    return t;
  }

  Index size() const { return data_.size(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<Index>& shape() const { return shape_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& operator[](Index i) { return data_[i]; }

  ArrayXs& array() { return data_; }
  const ArrayXs& array() const { return data_; }

  /// Flat row-major view as a rows x cols matrix. rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(std::vector<Index> shape) const {
    if (count(shape) != size())
      throw ShapeError("cannot reshape " + shape_str() + " to " + shape_to_string(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  std::string shape_str() const { return shape_to_string(shape_); }

  static std::string shape_to_string(const std::vector<Index>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }

private:
  static Index count(const std::vector<Index>& s) {
    Index n = 1;
    for (Index d : s) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(s));
      n *= d;
    }
    return n;
  }

  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " incompatible with tensor " + shape_str());
  }

  std::vector<Index> shape_;
  ArrayXs data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
}

} // namespace softorder
