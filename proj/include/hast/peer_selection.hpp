#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "hast/nn.hpp"
#include "hast/random.hpp"

namespace hast {

inline constexpr double kLossFloor = 1e-8;

/// One client's raw similarity scores for the peers it has evaluated.
struct SimilarityBelief {
  int owner = -1;
  std::map<int, double> scores;
  std::map<int, std::size_t> last_observed_round;

  std::optional<double> score(int peer) const;
};

/// Probabilities sorted by peer id; never contains the owner.
struct SamplingDistribution {
  std::vector<int> peers;
  std::vector<double> probabilities;

  double probability_of(int peer) const;
};

/// 1 / max(loss, 1e-8). Throws InternalError on negative loss.
double similarity_from_loss(double loss);

/// Scores `peer_model` on the owner's training data and stores the
/// reciprocal loss.
void update_belief(SimilarityBelief& belief, int peer_id, const LayeredModel& peer_model,
                   const Batch& own_train, std::size_t round);

/// Multiplies every score not observed in `round` by `factor`.
void decay_belief(SimilarityBelief& belief, double factor, std::size_t round);

enum class DefaultScorePolicy {
  mean_observed,  // unobserved peers get the mean observed score
};

/// Softmax over exp(s / tau) for every peer in `candidates` (the owner is
/// skipped). Unobserved peers receive the policy's default score; with no
/// observations at all the result is uniform.
SamplingDistribution softmax_distribution(const SimilarityBelief& belief,
                                          const std::vector<int>& candidates, double tau,
                                          DefaultScorePolicy policy = DefaultScorePolicy::mean_observed);

/// `n` distinct peers drawn uniformly.
std::vector<int> sample_peers_uniform(const std::vector<int>& peers, std::size_t n, Rng& rng);

/// `n` distinct peers drawn sequentially without replacement from `dist`,
/// renormalising after each draw.
std::vector<int> sample_peers_weighted(const SamplingDistribution& dist, std::size_t n, Rng& rng);

}  // namespace hast
