#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "auralcnn/nn/tensor.hpp"

namespace auralcnn {

inline constexpr std::size_t kKernelSize = 3;
inline constexpr std::size_t kKernelTaps = kKernelSize * kKernelSize;

/// 3x3 convolution. weights are [out][in][ky][kx] row-major.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvLayer() = default;
  ConvLayer(std::size_t in, std::size_t out)
      : in_channels(in), out_channels(out), weights(out * in * kKernelTaps, 0.0), bias(out, 0.0) {}

  double& w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) {
    return weights[((o * in_channels + i) * kKernelSize + ky) * kKernelSize + kx];
  }
  double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weights[((o * in_channels + i) * kKernelSize + ky) * kKernelSize + kx];
  }

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// Fully connected layer, weights [out][in].
struct DenseLayer {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out)
      : in_features(in), out_features(out), weights(out * in, 0.0), bias(out, 0.0) {}

  double& w(std::size_t o, std::size_t i) { return weights[o * in_features + i]; }
  double w(std::size_t o, std::size_t i) const { return weights[o * in_features + i]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Argmax positions of one 2x2/stride-2 max-pooling pass.
///
/// One code per pooled cell and channel, stored in the pooled tensor's
/// channels-last order: code = dy * 2 + dx, the winner's offset inside its window.
struct SwitchRecord {
  Shape3 input_shape;   // pre-pool
  Shape3 output_shape;  // pooled
  std::vector<std::uint8_t> codes;

  std::uint8_t code(std::size_t c, std::size_t r, std::size_t x) const {
    return codes[(r * output_shape.cols + x) * output_shape.channels + c];
  }
  /// Source (row, col) in the pre-pool tensor for pooled cell (c, r, x).
  std::pair<std::size_t, std::size_t> source(std::size_t c, std::size_t r, std::size_t x) const {
    const auto k = code(c, r, x);
    return {2 * r + k / 2, 2 * x + k % 2};
  }

  friend bool operator==(const SwitchRecord&, const SwitchRecord&) = default;
};

struct PoolResult {
  Tensor3 pooled;
  SwitchRecord switches;
};

/// Same-padded 3x3 cross-correlation plus per-channel bias. Throws ShapeError
/// when input channels differ from layer.in_channels.
Tensor3 conv2d_same(const Tensor3& input, const ConvLayer& layer);

Tensor3 relu(Tensor3 x);

/// 2x2, stride 2. Odd trailing rows/cols are dropped. Ties go to the first
/// cell in row-major order.
PoolResult maxpool2x2(const Tensor3& x);

/// Parameter gradients of one conv layer.
struct ConvGrad {
  std::vector<double> weights;  // [out][in][ky][kx]
  std::vector<double> bias;
};

/// Accumulates dLoss/dW and dLoss/db for out = conv2d_same(input) given
/// grad_out = dLoss/dout. Zero entries of grad_out are skipped.
void conv2d_param_grad(const Tensor3& input, const Tensor3& grad_out, const ConvLayer& layer,
                       ConvGrad& grad);

}  // namespace auralcnn
