#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "auralcnn/nn/model.hpp"

namespace auralcnn {

struct Example {
  Tensor3 input;  // normalized magnitude, model input shape
  int label = 0;
};

/// Parameter-shaped gradient (or momentum) buffers.
struct ModelGrad {
  std::vector<ConvGrad> conv;
  std::vector<std::vector<double>> dense_weights;
  std::vector<std::vector<double>> dense_bias;

  static ModelGrad zeros_like(const CnnModel& model);
  void set_zero();
  void add(const ModelGrad& other);
  void scale(double s);
};

/// Cross-entropy of a forward pass against `label` (log-sum-exp form).
double cross_entropy(const ForwardTrace& trace, int label);

/// Forward + backward for one example. Gradients are accumulated into `grad`;
/// returns the loss. In train mode `opts.rng` drives dropout.
double backprop(const CnnModel& model, const Tensor3& input, int label, ModelGrad& grad,
                const ForwardOptions& opts = {}, std::size_t* predicted = nullptr);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;  // from the dropout (train-mode) passes
  double val_loss = 0;
  double val_accuracy = 0;
};

struct TrainHyper {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  int epochs = 30;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  /// Stop after the first epoch whose validation accuracy reaches this value (disabled when <= 0).
  double stop_at_val_accuracy = 0.0;
  /// Called after each epoch's validation pass.
  std::function<void(const EpochMetrics&)> on_epoch;
};


struct TrainResult {
  CnnModel model;
  std::vector<EpochMetrics> history;
};

/// Mini-batch SGD with momentum on cross-entropy. Deterministic for a given seed
/// regardless of `jobs`. Throws InvalidArgument on an empty training set or bad
/// labels, DivergenceError on a non-finite loss.
TrainResult train(CnnModel model, const std::vector<Example>& train_set,
                  const std::vector<Example>& validation_set, const TrainHyper& hyper);

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

Evaluation evaluate(const CnnModel& model, const std::vector<Example>& examples, unsigned jobs = 1);

}  // namespace auralcnn
