#include "auralcnn/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "auralcnn/deconv.hpp"
#include "auralcnn/errors.hpp"
#include "auralcnn/parallel.hpp"
#include "auralcnn/random.hpp"

namespace auralcnn {

ModelGrad ModelGrad::zeros_like(const CnnModel& model) {
  ModelGrad g;
  for (const auto& c : model.conv)
    g.conv.push_back({std::vector<double>(c.weights.size(), 0.0), std::vector<double>(c.bias.size(), 0.0)});
  for (const auto& d : model.dense) {
    g.dense_weights.emplace_back(d.weights.size(), 0.0);
    g.dense_bias.emplace_back(d.bias.size(), 0.0);
  }
  return g;
}

namespace {

template <typename Fn>
void for_each_buffer(ModelGrad& g, Fn&& fn) {
  for (auto& c : g.conv) {
    fn(c.weights);
    fn(c.bias);
  }
  for (std::size_t l = 0; l < g.dense_weights.size(); ++l) {
    fn(g.dense_weights[l]);
    fn(g.dense_bias[l]);
  }
}

template <typename Fn>
void for_each_pair(ModelGrad& a, const ModelGrad& b, Fn&& fn) {
  for (std::size_t l = 0; l < a.conv.size(); ++l) {
    fn(a.conv[l].weights, b.conv[l].weights);
    fn(a.conv[l].bias, b.conv[l].bias);
  }
  for (std::size_t l = 0; l < a.dense_weights.size(); ++l) {
    fn(a.dense_weights[l], b.dense_weights[l]);
    fn(a.dense_bias[l], b.dense_bias[l]);
  }
}

template <typename Fn>
void for_each_param(CnnModel& m, const ModelGrad& g, Fn&& fn) {
  for (std::size_t l = 0; l < m.conv.size(); ++l) {
    fn(m.conv[l].weights, g.conv[l].weights);
    fn(m.conv[l].bias, g.conv[l].bias);
  }
  for (std::size_t l = 0; l < m.dense.size(); ++l) {
    fn(m.dense[l].weights, g.dense_weights[l]);
    fn(m.dense[l].bias, g.dense_bias[l]);
  }
}

// dL/dW += delta (x) in; returns dL/din when wanted.
void dense_backward(const DenseLayer& layer, const std::vector<double>& in,
                    const std::vector<double>& delta, std::vector<double>& dw,
                    std::vector<double>& db, std::vector<double>* din) {
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const double d = delta[o];
    db[o] += d;
    if (d == 0.0) continue;
    double* row = dw.data() + o * layer.in_features;
    for (std::size_t i = 0; i < layer.in_features; ++i) row[i] += d * in[i];
  }
  if (!din) return;
  din->assign(layer.in_features, 0.0);
  for (std::size_t o = 0; o < layer.out_features; ++o) {
    const double d = delta[o];
    if (d == 0.0) continue;
    const double* row = layer.weights.data() + o * layer.in_features;
    for (std::size_t i = 0; i < layer.in_features; ++i) (*din)[i] += d * row[i];
  }
}

}  // namespace

void ModelGrad::set_zero() {
  for_each_buffer(*this, [](std::vector<double>& v) { std::fill(v.begin(), v.end(), 0.0); });
}

void ModelGrad::add(const ModelGrad& other) {
  for_each_pair(*this, other, [](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  });
}

void ModelGrad::scale(double s) {
  for_each_buffer(*this, [s](std::vector<double>& v) {
    for (double& x : v) x *= s;
  });
}

double cross_entropy(const ForwardTrace& trace, int label) {
  const auto& z = trace.logits;
  double peak = z[0];
  for (double v : z) peak = std::max(peak, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - peak);
  return peak + std::log(sum) - z[static_cast<std::size_t>(label)];
}

double backprop(const CnnModel& model, const Tensor3& input, int label, ModelGrad& grad,
                const ForwardOptions& opts, std::size_t* predicted) {
  ForwardOptions fo = opts;
  fo.keep_pre_pool = true;
  const ForwardTrace tr = forward(model, input, fo);
  const bool rectify = opts.activation == Activation::relu;
  const bool dropped = !tr.conv_keep.empty();
  const double keep_scale = dropped ? 1.0 / (1.0 - model.dropout_rate) : 1.0;

  // Softmax + cross-entropy.
  std::vector<double> delta = tr.probabilities;
  delta[static_cast<std::size_t>(label)] -= 1.0;

  std::vector<double> dhidden;
  dense_backward(model.dense[1], tr.hidden, delta, grad.dense_weights[1], grad.dense_bias[1], &dhidden);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (dropped) dhidden[i] = tr.hidden_keep[i] ? dhidden[i] * keep_scale : 0.0;
    if (rectify && !(tr.hidden_pre[i] > 0.0)) dhidden[i] = 0.0;
  }
  std::vector<double> dflat;
  dense_backward(model.dense[0], tr.flat, dhidden, grad.dense_weights[0], grad.dense_bias[0], &dflat);

  const std::size_t n = model.conv.size();
  Tensor3 g(tr.pooled.back().shape());
  {
    std::size_t k = 0;
    for (std::size_t c = 0; c < g.channels(); ++c)
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t x = 0; x < g.cols(); ++x) g(c, r, x) = dflat[k++];
  }

  for (std::size_t l = n; l-- > 0;) {
    // Through dropout on the pooled output.
    if (dropped) {
      auto gv = g.raw();
      const auto& keep = tr.conv_keep[l];
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = keep[i] ? gv[i] * keep_scale : 0.0;
    }
    // Through max-pooling: gradient goes to the switch positions only.
    Tensor3 gpre = unpool(g, tr.switches[l]);
    if (rectify) {
      auto gv = gpre.raw();
      const auto act = tr.pre_pool[l].raw();
      for (std::size_t i = 0; i < gv.size(); ++i)
        if (!(act[i] > 0.0)) gv[i] = 0.0;
    }
    // Input that conv layer l actually saw.
    Tensor3 layer_in;
    if (l == 0) {
      layer_in = tr.input;
    } else {
      layer_in = tr.pooled[l - 1];
      if (dropped) {
        auto v = layer_in.raw();
        const auto& keep = tr.conv_keep[l - 1];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = keep[i] ? v[i] * keep_scale : 0.0;
      }
    }
    conv2d_param_grad(layer_in, gpre, model.conv[l], grad.conv[l]);
    if (l > 0) g = transpose_conv(gpre, model.conv[l]);
  }
  if (predicted) *predicted = argmax(tr.probabilities);
  return cross_entropy(tr, label);
}

Evaluation evaluate(const CnnModel& model, const std::vector<Example>& examples, unsigned jobs) {
  const std::size_t k = model.num_classes();
  Evaluation ev;
  ev.confusion.assign(k, std::vector<std::size_t>(k, 0));
  if (examples.empty()) return ev;
  std::vector<double> losses(examples.size());
  std::vector<std::size_t> predicted(examples.size());
  parallel_for(examples.size(), jobs, [&](std::size_t i) {
    ForwardOptions fo;
    fo.keep_pre_pool = false;
    const auto tr = forward(model, examples[i].input, fo);
    losses[i] = cross_entropy(tr, examples[i].label);
    predicted[i] = argmax(tr.probabilities);
  });
  std::size_t correct = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ev.loss += losses[i];
    const auto truth = static_cast<std::size_t>(examples[i].label);
    ++ev.confusion[truth][predicted[i]];
    correct += predicted[i] == truth;
  }
  ev.loss /= static_cast<double>(examples.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
  return ev;
}

TrainResult train(CnnModel model, const std::vector<Example>& train_set,
                  const std::vector<Example>& validation_set, const TrainHyper& hyper) {
  if (train_set.empty()) throw InvalidArgument("train: empty training set");
  if (hyper.batch_size == 0) throw InvalidArgument("train: batch size must be positive");
  model.validate();
  const int classes = static_cast<int>(model.num_classes());
  for (const auto* set : {&train_set, &validation_set})
    for (const auto& ex : *set)
      if (ex.label < 0 || ex.label >= classes)
        throw InvalidArgument("train: label " + std::to_string(ex.label) + " outside 0.." +
                              std::to_string(classes - 1));

  TrainResult result;
  ModelGrad velocity = ModelGrad::zeros_like(model);
  ModelGrad total = ModelGrad::zeros_like(model);
  const unsigned jobs = std::max(1u, hyper.jobs);
  std::vector<ModelGrad> scratch(std::min<std::size_t>(jobs, hyper.batch_size),
                                 ModelGrad::zeros_like(model));

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(derive_seed(hyper.seed, 0x5EED));

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t count = std::min(hyper.batch_size, order.size() - start);
      std::vector<double> losses(count);
      std::vector<std::size_t> predicted(count);
      total.set_zero();
      // Per-example gradients are summed in batch order, so the result does not
      // depend on how examples were spread over workers.
      for (std::size_t chunk = 0; chunk < count; chunk += scratch.size()) {
        const std::size_t m = std::min(scratch.size(), count - chunk);
        parallel_for(m, jobs, [&](std::size_t j) {
          const std::size_t b = chunk + j;
          const std::size_t idx = order[start + b];
          std::mt19937_64 rng(derive_seed(hyper.seed, static_cast<std::uint64_t>(epoch), idx));
          ForwardOptions fo;
          fo.mode = Mode::train;
          fo.rng = &rng;
          scratch[j].set_zero();
          losses[b] = backprop(model, train_set[idx].input, train_set[idx].label, scratch[j], fo,
                               &predicted[b]);
        });
        for (std::size_t j = 0; j < m; ++j) total.add(scratch[j]);
      }
      for (std::size_t b = 0; b < count; ++b) {
        if (!std::isfinite(losses[b]))
          throw DivergenceError(epoch, "training diverged in epoch " + std::to_string(epoch) +
                                           " (non-finite loss)");
        loss_sum += losses[b];
      }
      total.scale(1.0 / static_cast<double>(count));
      // v <- momentum * v - lr * g;  p <- p + v
      std::vector<std::vector<double>*> vbufs;
      for_each_buffer(velocity, [&](std::vector<double>& b) { vbufs.push_back(&b); });
      std::size_t buffer = 0;
      for_each_param(model, total, [&](std::vector<double>& p, const std::vector<double>& g) {
        auto& vb = *vbufs[buffer++];
        for (std::size_t i = 0; i < p.size(); ++i) {
          vb[i] = hyper.momentum * vb[i] - hyper.learning_rate * g[i];
          p[i] += vb[i];
        }
      });
      for (std::size_t b = 0; b < count; ++b)
        correct += predicted[b] == static_cast<std::size_t>(train_set[order[start + b]].label);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (!validation_set.empty()) {
      const Evaluation ev = evaluate(model, validation_set, jobs);
      m.val_loss = ev.loss;
      m.val_accuracy = ev.accuracy;
    }
    result.history.push_back(m);
    if (hyper.on_epoch) hyper.on_epoch(m);
    if (hyper.stop_at_val_accuracy > 0.0 && !validation_set.empty() &&
        m.val_accuracy >= hyper.stop_at_val_accuracy)
      break;
  }
  result.model = std::move(model);
  return result;
}

}  // namespace auralcnn
