#include "auralcnn/nn/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "auralcnn/errors.hpp"
#include "auralcnn/random.hpp"

namespace auralcnn {

namespace {

std::string shape_str(const Shape3& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.rows) + "x" + std::to_string(s.cols);
}

// Inverted dropout: survivors are scaled by 1 / (1 - rate).
void apply_dropout(std::span<double> v, double rate, std::mt19937_64& rng,
                   std::vector<std::uint8_t>& keep) {
  keep.resize(v.size());
  const double scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < v.size(); ++i) {
    keep[i] = uniform01(rng) >= rate;
    v[i] = keep[i] ? v[i] * scale : 0.0;
  }
}

void dense_forward(const DenseLayer& layer, const std::vector<double>& in, std::vector<double>& out) {
  out.assign(layer.out_features, 0.0);
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const double* w = layer.weights.data() + o * layer.in_features;
    double acc = 0.0;
    for (std::size_t i = 0; i < layer.in_features; ++i) acc += w[i] * in[i];
    out[o] = acc + layer.bias[o];
  }
}

}  // namespace

ModelShape genre_model_shape() { return ModelShape{}; }

Shape3 CnnModel::pooled_shape(std::size_t layer) const {
  std::size_t rows = input_shape.rows, cols = input_shape.cols;
  for (std::size_t l = 0; l <= layer; ++l) {
    rows /= 2;
    cols /= 2;
  }
  return {conv.at(layer).out_channels, rows, cols};
}

std::size_t CnnModel::flatten_size() const {
  return conv.empty() ? input_shape.size() : pooled_shape(conv.size() - 1).size();
}

void CnnModel::validate() const {
  if (conv.empty()) throw ShapeError("model has no conv layers");
  if (dense.size() != 2) throw ShapeError("model must have exactly two dense layers");
  if (input_shape.size() == 0) throw ShapeError("empty input shape");
  std::size_t channels = input_shape.channels;
  for (std::size_t l = 0; l < conv.size(); ++l) {
    const auto& c = conv[l];
    if (c.in_channels != channels)
      throw ShapeError("conv layer " + std::to_string(l + 1) + " expects " +
                       std::to_string(c.in_channels) + " input channels, gets " +
                       std::to_string(channels));
    if (c.weights.size() != c.in_channels * c.out_channels * kKernelTaps ||
        c.bias.size() != c.out_channels || c.out_channels == 0)
      throw ShapeError("conv layer " + std::to_string(l + 1) + " has inconsistent storage");
    if (pooled_shape(l).rows == 0 || pooled_shape(l).cols == 0)
      throw ShapeError("input " + shape_str(input_shape) + " pools to nothing at layer " +
                       std::to_string(l + 1));
    channels = c.out_channels;
  }
  if (dense[0].in_features != flatten_size())
    throw ShapeError("hidden dense layer expects " + std::to_string(dense[0].in_features) +
                     " inputs, flatten gives " + std::to_string(flatten_size()));
  if (dense[1].in_features != dense[0].out_features)
    throw ShapeError("output dense layer does not chain to hidden layer");
  for (const auto& d : dense)
    if (d.weights.size() != d.in_features * d.out_features || d.bias.size() != d.out_features)
      throw ShapeError("dense layer has inconsistent storage");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw InvalidArgument("dropout rate must lie in [0, 1)");
  if (!class_names.empty() && class_names.size() != num_classes())
    throw InvalidArgument("class name count does not match output width");
}

CnnModel make_model(const ModelShape& shape, std::uint64_t seed,
                    std::vector<std::string> class_names) {
  std::mt19937_64 rng(seed);
  CnnModel m;
  m.input_shape = shape.input;
  m.dropout_rate = shape.dropout_rate;
  std::size_t channels = shape.input.channels;
  for (std::size_t out : shape.conv_channels) {
    ConvLayer layer(channels, out);
    const double limit = std::sqrt(6.0 / static_cast<double>(channels * kKernelTaps));
    for (double& w : layer.weights) w = uniform(rng, -limit, limit);
    m.conv.push_back(std::move(layer));
    channels = out;
  }
  const std::size_t flat = m.flatten_size();
  DenseLayer hidden(flat, shape.hidden), output(shape.hidden, shape.classes);
  for (DenseLayer* d : {&hidden, &output}) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d->in_features));
    for (double& w : d->weights) w = uniform(rng, -limit, limit);
  }
  m.dense = {std::move(hidden), std::move(output)};
  if (class_names.empty())
    for (std::size_t k = 0; k < shape.classes; ++k) class_names.push_back("class" + std::to_string(k));
  m.class_names = std::move(class_names);
  m.validate();
  return m;
}

ForwardTrace forward(const CnnModel& model, const Tensor3& input, const ForwardOptions& opts) {
  if (!(input.shape() == model.input_shape))
    throw ShapeError("forward: input " + shape_str(input.shape()) + " does not match model input " +
                     shape_str(model.input_shape));
  const bool train = opts.mode == Mode::train && model.dropout_rate > 0.0;
  if (train && !opts.rng) throw InvalidArgument("forward: train mode needs a random generator");
  const bool rectify = opts.activation == Activation::relu;

  ForwardTrace tr;
  tr.input = input;
  const std::size_t n = model.conv.size();
  tr.pooled.reserve(n);
  tr.switches.reserve(n);

  Tensor3 dropped;  // pooled output after dropout (train only)
  for (std::size_t l = 0; l < n; ++l) {
    const Tensor3& in = l == 0 ? input : (train ? dropped : tr.pooled.back());
    Tensor3 act = conv2d_same(in, model.conv[l]);
    if (rectify) act = relu(std::move(act));
    auto [pooled, switches] = maxpool2x2(act);
    if (opts.keep_pre_pool) tr.pre_pool.push_back(std::move(act));
    if (train) {
      dropped = pooled;
      tr.conv_keep.emplace_back();
      apply_dropout(dropped.raw(), model.dropout_rate, *opts.rng, tr.conv_keep.back());
    }
    tr.pooled.push_back(std::move(pooled));
    tr.switches.push_back(std::move(switches));
  }

  // Flatten in (channel, row, col) order.
  const Tensor3& last = train ? dropped : tr.pooled.back();
  tr.flat.resize(last.size());
  std::size_t k = 0;
  for (std::size_t c = 0; c < last.channels(); ++c)
    for (std::size_t r = 0; r < last.rows(); ++r)
      for (std::size_t x = 0; x < last.cols(); ++x) tr.flat[k++] = last(c, r, x);

  dense_forward(model.dense[0], tr.flat, tr.hidden_pre);
  tr.hidden = tr.hidden_pre;
  if (rectify)
    for (double& v : tr.hidden) v = v > 0.0 ? v : 0.0;
  if (train) apply_dropout(tr.hidden, model.dropout_rate, *opts.rng, tr.hidden_keep);
  dense_forward(model.dense[1], tr.hidden, tr.logits);

  const double peak = *std::max_element(tr.logits.begin(), tr.logits.end());
  tr.probabilities.resize(tr.logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < tr.logits.size(); ++i) z += tr.probabilities[i] = std::exp(tr.logits[i] - peak);
  for (double& p : tr.probabilities) p /= z;
  return tr;
}

Tensor3 normalize_magnitude(const Grid& magnitude) {
  Tensor3 t = Tensor3::from_grid(magnitude);
  double peak = 0.0;
  for (double v : t.raw()) peak = std::max(peak, std::abs(v));
  if (peak > 0.0)
    for (double& v : t.raw()) v /= peak;
  return t;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace auralcnn
