#include "hast/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hast/errors.hpp"

namespace hast {

namespace {

void apply_activation(Matrix& z, Activation act) {
  if (act == Activation::relu) z = z.cwiseMax(0.0);
}

void check_range(const LayeredModel& model, LayerRange range) {
  if (range.begin > range.end || range.end > model.num_layers()) {
    throw std::out_of_range("layer range [" + std::to_string(range.begin) + ", " +
                            std::to_string(range.end) + ") outside model with " +
                            std::to_string(model.num_layers()) + " layers");
  }
}

void check_input(const LayeredModel& model, const Matrix& inputs) {
  if (model.layers.empty()) throw ShapeError("model has no layers");
  if (static_cast<std::size_t>(inputs.cols()) != model.input_dim()) {
    throw ShapeError("input has " + std::to_string(inputs.cols()) + " columns, model expects " +
                     std::to_string(model.input_dim()));
  }
}

}  // namespace

std::size_t LayeredModel::param_count(LayerRange range) const {
  check_range(*this, range);
  std::size_t n = 0;
  for (std::size_t i = range.begin; i < range.end; ++i) n += layers[i].param_count();
  return n;
}

void LayeredModel::validate() const {
  if (layers.size() < 2) throw ShapeError("model needs at least two layers");
  if (split_index == 0 || split_index >= layers.size()) {
    throw ShapeError("split_index " + std::to_string(split_index) + " must lie in (0, " +
                     std::to_string(layers.size()) + ")");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (static_cast<std::size_t>(l.biases.size()) != l.out_dim()) {
      throw ShapeError("layer " + std::to_string(i) + ": bias length does not match out_dim");
    }
    if (i + 1 < layers.size() && l.out_dim() != layers[i + 1].in_dim()) {
      throw ShapeError("layer " + std::to_string(i) + " out_dim does not chain into layer " +
                       std::to_string(i + 1));
    }
    if (!l.weights.allFinite() || !l.biases.allFinite()) {
      throw ShapeError("layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

LayeredModel init_model(const ModelShape& shape, Rng& rng) {
  if (shape.widths.size() < 3) throw ShapeError("model shape needs at least two layers");
  LayeredModel model;
  model.split_index = shape.split_index;
  const std::size_t n = shape.num_layers();
  for (std::size_t i = 0; i < n; ++i) {
    const auto in = shape.widths[i];
    const auto out = shape.widths[i + 1];
    if (in == 0 || out == 0) throw ShapeError("layer widths must be positive");
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
    layer.biases = Vector::Zero(static_cast<Eigen::Index>(out));
    layer.activation = (i + 1 == n) ? Activation::identity : Activation::relu;
    model.layers.push_back(std::move(layer));
  }
  model.validate();
  return model;
}

void Batch::validate(std::size_t num_classes) const {
  if (labels.empty()) throw ShapeError("empty batch");
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ShapeError("batch has " + std::to_string(inputs.rows()) + " input rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ShapeError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

Matrix forward(const LayeredModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  Matrix h = inputs;
  for (const auto& layer : model.layers) {
    Matrix z = h * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    apply_activation(z, layer.activation);
    h = std::move(z);
  }
  return h;
}

Matrix log_softmax(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

LossAccuracy loss_and_accuracy(const LayeredModel& model, const Batch& batch) {
  batch.validate(model.num_classes());
  const Matrix logp = log_softmax(forward(model, batch.inputs));
  double loss = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    const int y = batch.labels[static_cast<std::size_t>(r)];
    loss -= logp(r, y);
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logp.cols(); ++c)
      if (logp(r, c) > logp(r, best)) best = c;
    if (best == y) ++correct;
  }
  const auto n = static_cast<double>(batch.size());
  return {loss / n, static_cast<double>(correct) / n};
}

GradientSet backward(const LayeredModel& model, const Batch& batch) {
  check_input(model, batch.inputs);
  batch.validate(model.num_classes());
  const std::size_t L = model.num_layers();

  // activations[i] is the input to layer i; pre[i] its pre-activation.
  std::vector<Matrix> activations(L + 1);
  std::vector<Matrix> pre(L);
  activations[0] = batch.inputs;
  for (std::size_t i = 0; i < L; ++i) {
    const auto& layer = model.layers[i];
    pre[i] = activations[i] * layer.weights.transpose();
    pre[i].rowwise() += layer.biases.transpose();
    activations[i + 1] = pre[i];
    apply_activation(activations[i + 1], layer.activation);
  }

  const auto n = static_cast<double>(batch.size());
  Matrix delta = log_softmax(activations[L]).array().exp().matrix();
  for (Eigen::Index r = 0; r < delta.rows(); ++r) delta(r, batch.labels[static_cast<std::size_t>(r)]) -= 1.0;
  delta /= n;

  GradientSet grads;
  grads.weights.resize(L);
  grads.biases.resize(L);
  for (std::size_t i = L; i-- > 0;) {
    const auto& layer = model.layers[i];
    if (layer.activation == Activation::relu) {
      delta = (pre[i].array() > 0.0).select(delta, 0.0);
    }
    grads.weights[i] = delta.transpose() * activations[i];
    grads.biases[i] = delta.colwise().sum().transpose();
    if (i > 0) delta = delta * layer.weights;
  }
  return grads;
}

LayeredModel sgd_step(LayeredModel model, const GradientSet& grads, double lr, UpdateScope scope) {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive", "protocol.lr");
  if (grads.weights.size() != model.num_layers() || grads.biases.size() != model.num_layers()) {
    throw ShapeError("gradient set does not match model layer count");
  }
  const std::size_t first = scope == UpdateScope::classifier_only ? model.split_index : 0;
  for (std::size_t i = first; i < model.num_layers(); ++i) {
    auto& layer = model.layers[i];
    if (grads.weights[i].rows() != layer.weights.rows() ||
        grads.weights[i].cols() != layer.weights.cols() ||
        grads.biases[i].size() != layer.biases.size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(i));
    }
    layer.weights -= lr * grads.weights[i];
    layer.biases -= lr * grads.biases[i];
  }
  return model;
}

ParamBlocks get_layer_params(const LayeredModel& model, LayerRange range) {
  check_range(model, range);
  ParamBlocks blocks;
  blocks.reserve(range.size());
  for (std::size_t i = range.begin; i < range.end; ++i) {
    const auto& l = model.layers[i];
    std::vector<double> block(l.param_count());
    std::copy(l.weights.data(), l.weights.data() + l.weights.size(), block.begin());
    std::copy(l.biases.data(), l.biases.data() + l.biases.size(),
              block.begin() + l.weights.size());
    blocks.push_back(std::move(block));
  }
  return blocks;
}

void set_layer_params(LayeredModel& model, LayerRange range, const ParamBlocks& blocks) {
  check_range(model, range);
  if (blocks.size() != range.size()) {
    throw ShapeError("expected " + std::to_string(range.size()) + " parameter blocks, got " +
                     std::to_string(blocks.size()));
  }
  for (std::size_t i = range.begin; i < range.end; ++i) {
    auto& l = model.layers[i];
    const auto& block = blocks[i - range.begin];
    if (block.size() != l.param_count()) {
      throw ShapeError("parameter block for layer " + std::to_string(i) + " has wrong length");
    }
    std::copy(block.begin(), block.begin() + l.weights.size(), l.weights.data());
    std::copy(block.begin() + l.weights.size(), block.end(), l.biases.data());
  }
}

Batch take_rows(const Batch& batch, std::span<const std::size_t> rows) {
  Batch out;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), batch.inputs.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = batch.inputs.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = batch.labels[rows[i]];
  }
  return out;
}

LayeredModel train_epochs(LayeredModel model, const Batch& data, std::size_t epochs,
                          std::size_t batch_size, double lr, UpdateScope scope, Rng& rng) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive", "protocol.batch_size");
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      const Batch mb = take_rows(data, std::span(order).subspan(start, stop - start));
      const GradientSet grads = backward(model, mb);
      model = sgd_step(std::move(model), grads, lr, scope);
    }
  }
  return model;
}

}  // namespace hast
