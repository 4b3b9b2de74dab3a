#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <vector>

#include "hast/random.hpp"

namespace hast {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { relu, identity };

struct DenseLayer {
  Matrix weights;  // out_dim x in_dim
  Vector biases;   // out_dim
  Activation activation = Activation::relu;

  std::size_t in_dim() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t param_count() const { return in_dim() * out_dim() + out_dim(); }
};

/// Half-open range of layer indices [begin, end).
struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool contains(std::size_t layer) const { return layer >= begin && layer < end; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// Feed-forward stack. Layers [0, split_index) are the feature extractor,
/// layers [split_index, size) the classifier.
struct LayeredModel {
  std::vector<DenseLayer> layers;
  std::size_t split_index = 1;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t num_classes() const { return layers.back().out_dim(); }
  LayerRange all_layers() const { return {0, layers.size()}; }
  LayerRange feature_extractor() const { return {0, split_index}; }
  LayerRange classifier() const { return {split_index, layers.size()}; }
  std::size_t param_count() const { return param_count(all_layers()); }
  std::size_t param_count(LayerRange range) const;

  /// Throws ShapeError if dimensions do not chain, the split is out of
  /// bounds, or a parameter is non-finite.
  void validate() const;
};

/// Layer widths from input to output, e.g. {16, 32, 32, 32, 16, 8} for a
/// 5-layer network. Hidden layers use relu, the output layer identity.
struct ModelShape {
  std::vector<std::size_t> widths;
  std::size_t split_index = 2;

  std::size_t num_layers() const { return widths.empty() ? 0 : widths.size() - 1; }
};

/// Uniform init in [-a, a], a = sqrt(6 / (in + out)); biases zero.
LayeredModel init_model(const ModelShape& shape, Rng& rng);

struct Batch {
  Matrix inputs;            // batch x in_dim
  std::vector<int> labels;  // class ids

  std::size_t size() const { return labels.size(); }
  void validate(std::size_t num_classes) const;
};

struct GradientSet {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

enum class UpdateScope { all_layers, classifier_only };

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

Matrix forward(const LayeredModel& model, const Matrix& inputs);

/// Mean cross-entropy via max-shifted log-softmax; argmax ties go to the
/// lowest class index.
LossAccuracy loss_and_accuracy(const LayeredModel& model, const Batch& batch);

/// Row-wise log-softmax, exposed for callers that already hold logits.
Matrix log_softmax(const Matrix& logits);

/// Mean-over-batch gradient of the cross-entropy.
GradientSet backward(const LayeredModel& model, const Batch& batch);

LayeredModel sgd_step(LayeredModel model, const GradientSet& grads, double lr, UpdateScope scope);

/// One flat block per layer: weights row-major followed by biases.
using ParamBlocks = std::vector<std::vector<double>>;

ParamBlocks get_layer_params(const LayeredModel& model, LayerRange range);
void set_layer_params(LayeredModel& model, LayerRange range, const ParamBlocks& blocks);

/// Mini-batch SGD over `data` for `epochs` passes, reshuffling each epoch
/// with `rng`.
LayeredModel train_epochs(LayeredModel model, const Batch& data, std::size_t epochs,
                          std::size_t batch_size, double lr, UpdateScope scope, Rng& rng);

/// Rows of `batch` selected by `rows`, in that order.
Batch take_rows(const Batch& batch, std::span<const std::size_t> rows);

}  // namespace hast
