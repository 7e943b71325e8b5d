#pragma once

// Deconvnet projection of learnt features back to input-spectrogram space:
// unpool through the recorded switches, rectify, apply the transposed filters,
// and repeat down to the input.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "auralcnn/grid.hpp"
#include "auralcnn/nn/model.hpp"

namespace auralcnn {

/// Writes each pooled value at its switch position in a zero tensor of the
/// pre-pool shape. Throws CorruptionError for codes outside the 2x2 window or
/// a switch record that does not match `pooled`.
Tensor3 unpool(const Tensor3& pooled, const SwitchRecord& switches);

/// Adjoint of conv2d_same without the bias: same-padded correlation with the
/// kernel transposed over (in, out) and flipped in both spatial axes.
Tensor3 transpose_conv(const Tensor3& input, const ConvLayer& layer);

/// Feature address: layer is 1-based (as in "Feature 3-38"), feature 0-based.
struct DeconvRequest {
  std::size_t layer = 1;
  std::size_t feature = 0;
  /// Keep only the k strongest activations of the feature map; nullopt keeps all.
  std::optional<std::size_t> top_k;

  /// "l-f", e.g. "3-38".
  std::string label() const;
  friend bool operator==(const DeconvRequest&, const DeconvRequest&) = default;
};

/// Parses "l-f" (optionally "l-f:k" for top-k). Throws InvalidArgument.
DeconvRequest parse_feature_address(const std::string& text);

struct DeconvolvedMap {
  Grid values;  // signed, input-spectrogram shape
  DeconvRequest source;
};

struct DeconvOptions {
  /// identity bypasses the rectification between unpooling and transposed convolution.
  Activation activation = Activation::relu;
};

/// Throws InvalidArgument when the request addresses a missing layer/feature
/// or the trace does not belong to the model.
DeconvolvedMap deconv_feature(const CnnModel& model, const ForwardTrace& trace,
                              const DeconvRequest& req, const DeconvOptions& opts = {});

/// Projects `start` (the post-pool activations of 1-based `layer`) down to
/// the input using the given switches. deconv_feature is this plus masking.
Grid deconv_project(const CnnModel& model, std::span<const SwitchRecord> switches,
                    std::size_t layer, Tensor3 start, const DeconvOptions& opts = {});

/// Binary grid: "DMAP", u32 version (1), u32 rows, u32 cols, then rows * cols
/// little-endian float32 values in row-major order.
void write_map_binary(const std::filesystem::path& path, const Grid& values);
Grid read_map_binary(const std::filesystem::path& path);

/// Comma-separated matrix, one grid row (frequency bin) per line.
void write_map_csv(const std::filesystem::path& path, const Grid& values);

}  // namespace auralcnn
