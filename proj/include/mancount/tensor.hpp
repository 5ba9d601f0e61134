#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mancount/errors.hpp"

namespace mancount {

class Tape;

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major N-D array of doubles (last axis fastest). Copies are
/// shallow views onto the same buffer; forward code treats tensors as
/// immutable once built. A tensor optionally carries a (tape, node)
/// handle when it participates in reverse-mode differentiation.
///
/// Convention for spatial data: a grid is stored as {H, W} with axis
/// order (y, x), so the flat index of position p = (x, y) is y*W + x —
/// the same index that orders the WH token axis everywhere.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool empty() const { return size() == 0; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](std::size_t i) { return (*data_)[i]; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  /// rank-2 access (row, col)
  double& at(int r, int c) { return (*data_)[idx2(r, c)]; }
  double at(int r, int c) const { return (*data_)[idx2(r, c)]; }

  /// rank-3 access (channel, row, col)
  double& at(int ch, int r, int c) { return (*data_)[idx3(ch, r, c)]; }
  double at(int ch, int r, int c) const { return (*data_)[idx3(ch, r, c)]; }

  double value() const;  // scalar tensors only

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Deep copy of the buffer, untracked.
  Tensor clone() const;

  /// Same buffer under a different shape with equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  double sum() const;

 private:
  friend class Tape;

  std::size_t idx2(int r, int c) const {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_[1]) +
           static_cast<std::size_t>(c);
  }
  std::size_t idx3(int ch, int r, int c) const {
    return (static_cast<std::size_t>(ch) * static_cast<std::size_t>(shape_[1]) +
            static_cast<std::size_t>(r)) *
               static_cast<std::size_t>(shape_[2]) +
           static_cast<std::size_t>(c);
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace mancount
