#pragma once

#include <vector>

#include "hast/nn.hpp"

namespace hast {

struct Contribution {
  int client_id = 0;
  const LayeredModel* model = nullptr;
  double weight = 1.0;  // e.g. local training-set size; normalised internally
};

struct AggregationRequest {
  const LayeredModel* recipient = nullptr;
  std::vector<Contribution> contributors;
  LayerRange scope;
};

/// Weighted average of the contributors over `scope`; layers outside the
/// scope are copied from the recipient. Contributors are summed in ascending
/// client id, so the result does not depend on their order in the request.
LayeredModel fedavg(const AggregationRequest& request);

/// The last `depth` layers. Depth must lie in [1, num_layers - 1].
LayerRange suffix_scope(const LayeredModel& model, std::size_t depth);

/// [split_index, num_layers).
LayerRange classifier_scope(const LayeredModel& model);

/// Throws AggregationError naming the first layer whose shape differs.
void check_compatible(const LayeredModel& a, const LayeredModel& b);

}  // namespace hast
