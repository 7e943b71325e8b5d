#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "auralcnn/grid.hpp"
#include "auralcnn/nn/layers.hpp"
#include "auralcnn/nn/tensor.hpp"

namespace auralcnn {

/// Hyper-shape of a conv stack: each conv layer is followed by ReLU, 2x2 pooling
/// and dropout; then flatten -> dense(hidden) -> ReLU -> dropout -> dense(classes).
struct ModelShape {
  Shape3 input{1, 257, 171};
  std::vector<std::size_t> conv_channels{64, 64, 64, 64, 64};
  std::size_t hidden = 256;
  std::size_t classes = 3;
  double dropout_rate = 0.5;
};

/// The five-layer genre classifier over 257 x 171 magnitude spectrograms.
ModelShape genre_model_shape();

struct CnnModel {
  std::vector<ConvLayer> conv;
  std::vector<DenseLayer> dense;  // exactly two: hidden, output
  Shape3 input_shape;
  double dropout_rate = 0.5;
  std::vector<std::string> class_names;

  /// Spatial shape after conv layer `layer` (0-based) and its pooling.
  Shape3 pooled_shape(std::size_t layer) const;
  std::size_t flatten_size() const;
  std::size_t num_classes() const { return dense.empty() ? 0 : dense.back().out_features; }

  /// Throws ShapeError if layers do not chain, InvalidArgument for bad metadata.
  void validate() const;

  friend bool operator==(const CnnModel&, const CnnModel&) = default;
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
CnnModel make_model(const ModelShape& shape, std::uint64_t seed,
                    std::vector<std::string> class_names = {});

enum class Mode { train, infer };
enum class Activation { relu, identity };

struct ForwardOptions {
  Mode mode = Mode::infer;
  Activation activation = Activation::relu;
  /// Drop pre-pool activations from the trace to save memory.
  bool keep_pre_pool = true;
  /// Required in train mode when dropout_rate > 0.
  std::mt19937_64* rng = nullptr;
};

struct ForwardTrace {
  Tensor3 input;
  std::vector<Tensor3> pre_pool;  // post-activation, one per conv layer
  std::vector<Tensor3> pooled;    // before dropout
  std::vector<SwitchRecord> switches;
  std::vector<std::vector<std::uint8_t>> conv_keep;  // dropout keep masks (train only)
  std::vector<double> flat;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;  // after activation and dropout
  std::vector<std::uint8_t> hidden_keep;
  std::vector<double> logits;
  std::vector<double> probabilities;
};

/// Throws ShapeError if input shape differs from model.input_shape.
ForwardTrace forward(const CnnModel& model, const Tensor3& input, const ForwardOptions& opts = {});

/// Divides the magnitude grid by its own maximum (an all-zero grid stays zero).
Tensor3 normalize_magnitude(const Grid& magnitude);

std::size_t argmax(const std::vector<double>& v);

}  // namespace auralcnn
