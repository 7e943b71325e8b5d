#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "auralcnn/grid.hpp"

namespace auralcnn {

struct Shape3 {
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return channels * rows * cols; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Activation block addressed as (channel, row, col).
///
/// Storage is channels-last: element (c, r, x) lives at (r * cols + x) * channels + c,
/// so every pixel's channel vector is contiguous. The 3x3 kernels vectorize over
/// that axis.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t channels, std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{channels, rows, cols}, data_(channels * rows * cols, fill) {}
  explicit Tensor3(Shape3 s, double fill = 0.0) : Tensor3(s.channels, s.rows, s.cols, fill) {}

  const Shape3& shape() const { return shape_; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t c, std::size_t r, std::size_t x) {
    return data_[(r * shape_.cols + x) * shape_.channels + c];
  }
  double operator()(std::size_t c, std::size_t r, std::size_t x) const {
    return data_[(r * shape_.cols + x) * shape_.channels + c];
  }

  double* pixel(std::size_t r, std::size_t x) {
    return data_.data() + (r * shape_.cols + x) * shape_.channels;
  }
  const double* pixel(std::size_t r, std::size_t x) const {
    return data_.data() + (r * shape_.cols + x) * shape_.channels;
  }

  std::span<double> raw() { return data_; }
  std::span<const double> raw() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  /// Single-channel tensor holding a copy of the grid.
  static Tensor3 from_grid(const Grid& g);
  /// One channel as a rows x cols grid.
  Grid channel(std::size_t c) const;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  Shape3 shape_;
  std::vector<double> data_;
};

/// Sum over all elements of a[i] * b[i]; shapes must match.
double inner_product(const Tensor3& a, const Tensor3& b);

}  // namespace auralcnn
