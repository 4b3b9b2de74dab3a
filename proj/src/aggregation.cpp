#include "hast/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hast/errors.hpp"

namespace hast {

void check_compatible(const LayeredModel& a, const LayeredModel& b) {
  if (a.split_index != b.split_index) throw AggregationError("models disagree on split_index");
  if (a.num_layers() != b.num_layers()) throw AggregationError("models disagree on layer count");
  for (std::size_t i = 0; i < a.num_layers(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.in_dim() != y.in_dim() || x.out_dim() != y.out_dim() || x.activation != y.activation) {
      throw AggregationError("layer " + std::to_string(i) + " differs between models");
    }
  }
}

LayeredModel fedavg(const AggregationRequest& request) {
  if (request.recipient == nullptr) throw AggregationError("missing recipient model");
  if (request.contributors.empty()) throw AggregationError("no contributors");
  const LayeredModel& recipient = *request.recipient;
  if (request.scope.begin > request.scope.end || request.scope.end > recipient.num_layers()) {
    throw AggregationError("aggregation scope outside model");
  }

  auto contributors = request.contributors;
  std::sort(contributors.begin(), contributors.end(),
            [](const Contribution& a, const Contribution& b) { return a.client_id < b.client_id; });
  double total = 0.0;
  for (const auto& c : contributors) {
    if (c.model == nullptr) throw AggregationError("null contributor model");
    if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
      throw AggregationError("contributor weights must be positive");
    }
    check_compatible(recipient, *c.model);
    total += c.weight;
  }

  // Accumulated as anchor + sum w_i (p_i - anchor): identical contributors
  // reproduce the anchor exactly.
  LayeredModel out = recipient;
  const LayeredModel& anchor = *contributors.front().model;
  for (std::size_t l = request.scope.begin; l < request.scope.end; ++l) {
    Matrix w = anchor.layers[l].weights;
    Vector b = anchor.layers[l].biases;
    for (std::size_t i = 1; i < contributors.size(); ++i) {
      const double alpha = contributors[i].weight / total;
      const auto& layer = contributors[i].model->layers[l];
      w += alpha * (layer.weights - anchor.layers[l].weights);
      b += alpha * (layer.biases - anchor.layers[l].biases);
    }
    out.layers[l].weights = std::move(w);
    out.layers[l].biases = std::move(b);
  }
  return out;
}

LayerRange suffix_scope(const LayeredModel& model, std::size_t depth) {
  const std::size_t L = model.num_layers();
  if (depth < 1 || depth + 1 > L) {
    throw ConfigError("depth " + std::to_string(depth) + " outside [1, " + std::to_string(L - 1) + "]",
                      "protocol.depth");
  }
  return {L - depth, L};
}

LayerRange classifier_scope(const LayeredModel& model) { return model.classifier(); }

}  // namespace hast
