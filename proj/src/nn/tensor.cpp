#include "auralcnn/nn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "auralcnn/errors.hpp"

namespace auralcnn {

void Tensor3::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor3::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor3 Tensor3::from_grid(const Grid& g) {
  Tensor3 t(1, g.rows, g.cols);
  std::copy(g.data.begin(), g.data.end(), t.data_.begin());
  return t;
}

Grid Tensor3::channel(std::size_t c) const {
  Grid g(rows(), cols());
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t x = 0; x < cols(); ++x) g(r, x) = (*this)(c, r, x);
  return g;
}

double inner_product(const Tensor3& a, const Tensor3& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("inner_product: shape mismatch");
  double s = 0.0;
  const auto ra = a.raw();
  const auto rb = b.raw();
  for (std::size_t i = 0; i < ra.size(); ++i) s += ra[i] * rb[i];
  return s;
}

}  // namespace auralcnn
