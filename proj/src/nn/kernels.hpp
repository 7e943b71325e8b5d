#pragma once

// Shared 3x3 same-padded correlation kernel. Forward convolution and its
// adjoint differ only in how the weights are packed. Inputs are first
// compacted to per-pixel lists of nonzero channels, which skips the zeros
// left by ReLU and unpooling without a data-dependent branch in the inner loop.

#include <cstdint>
#include <span>
#include <vector>

#include "auralcnn/nn/layers.hpp"

namespace auralcnn::detail {

/// Per-pixel nonzero (channel, value) lists in row-major pixel order.
struct SparsePixels {
  std::size_t channels = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> offsets;  // rows * cols + 1
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t nonzeros() const { return value.size(); }
};

SparsePixels compact(const Tensor3& t);

/// unpool(pooled, switches), optionally rectified, built directly in compact form.
SparsePixels unpool_compact(const Tensor3& pooled, const SwitchRecord& switches, bool rectify);

/// packed[tap][c_in][c_out] = layer.w(o, i, tap): forward convolution.
std::vector<double> pack_forward(const ConvLayer& layer);

/// packed[tap][o][i] = layer.w(o, i, 8 - tap): transposed (adjoint) convolution.
std::vector<double> pack_transposed(const ConvLayer& layer);

/// out(p)[o] = bias[o] + sum_tap sum_c in(p + offset(tap))[c] * packed[tap][c][o],
/// offset(tap) = (tap / 3 - 1, tap % 3 - 1), zero outside the input. bias may be empty.
void correlate3x3(const SparsePixels& in, std::span<const double> packed,
                  std::span<const double> bias, Tensor3& out);

/// transpose_conv(relu?(unpool(pooled, switches))) for a layer with a single
/// input channel, without materializing the unpooled tensor.
void unpool_transpose_single(const Tensor3& pooled, const SwitchRecord& switches, bool rectify,
                             std::span<const double> packed, Tensor3& out);

}  // namespace auralcnn::detail
