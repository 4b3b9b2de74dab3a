#include "hast/peer_selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "hast/errors.hpp"

namespace hast {

std::optional<double> SimilarityBelief::score(int peer) const {
  auto it = scores.find(peer);
  if (it == scores.end()) return std::nullopt;
  return it->second;
}

double SamplingDistribution::probability_of(int peer) const {
  auto it = std::lower_bound(peers.begin(), peers.end(), peer);
  if (it == peers.end() || *it != peer) return 0.0;
  return probabilities[static_cast<std::size_t>(it - peers.begin())];
}

double similarity_from_loss(double loss) {
  if (!(loss >= 0.0)) throw InternalError("negative or NaN loss " + std::to_string(loss));
  return 1.0 / std::max(loss, kLossFloor);
}

void update_belief(SimilarityBelief& belief, int peer_id, const LayeredModel& peer_model,
                   const Batch& own_train, std::size_t round) {
  if (peer_id == belief.owner) {
    throw std::invalid_argument("client " + std::to_string(peer_id) + " cannot score itself");
  }
  const auto [loss, acc] = loss_and_accuracy(peer_model, own_train);
  belief.scores[peer_id] = similarity_from_loss(loss);
  belief.last_observed_round[peer_id] = round;
}

void decay_belief(SimilarityBelief& belief, double factor, std::size_t round) {
  if (factor == 1.0) return;
  for (auto& [peer, s] : belief.scores) {
    if (belief.last_observed_round[peer] != round) s *= factor;
  }
}

SamplingDistribution softmax_distribution(const SimilarityBelief& belief,
                                          const std::vector<int>& candidates, double tau,
                                          DefaultScorePolicy policy) {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive", "protocol.tau");
  SamplingDistribution dist;
  for (int p : candidates)
    if (p != belief.owner) dist.peers.push_back(p);
  std::sort(dist.peers.begin(), dist.peers.end());
  dist.peers.erase(std::unique(dist.peers.begin(), dist.peers.end()), dist.peers.end());
  if (dist.peers.empty()) return dist;

  double default_score = 1.0;
  if (policy == DefaultScorePolicy::mean_observed) {
    double sum = 0.0;
    std::size_t count = 0;
    for (int p : dist.peers) {
      if (auto s = belief.score(p)) {
        sum += *s;
        ++count;
      }
    }
    if (count > 0) default_score = sum / static_cast<double>(count);
  }

  std::vector<double> s(dist.peers.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = belief.score(dist.peers[i]).value_or(default_score);
  const double top = *std::max_element(s.begin(), s.end());
  dist.probabilities.resize(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    dist.probabilities[i] = std::exp((s[i] - top) / tau);
    total += dist.probabilities[i];
  }
  for (auto& p : dist.probabilities) p /= total;
  return dist;
}

std::vector<int> sample_peers_uniform(const std::vector<int>& peers, std::size_t n, Rng& rng) {
  if (n > peers.size()) {
    throw ConfigError("cannot sample " + std::to_string(n) + " peers from " +
                          std::to_string(peers.size()),
                      "protocol.n");
  }
  std::vector<int> pool = peers;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(n);
  return pool;
}

std::vector<int> sample_peers_weighted(const SamplingDistribution& dist, std::size_t n, Rng& rng) {
  if (n > dist.peers.size()) {
    throw ConfigError("cannot sample " + std::to_string(n) + " peers from " +
                          std::to_string(dist.peers.size()),
                      "protocol.n");
  }
  std::vector<double> w = dist.probabilities;
  std::vector<bool> taken(w.size(), false);
  std::vector<int> out;
  out.reserve(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t draw = 0; draw < n; ++draw) {
    double total = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!taken[i]) total += w[i];
    std::size_t chosen = w.size();
    if (total > 0.0) {
      const double u = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (taken[i] || w[i] <= 0.0) continue;
        acc += w[i];
        chosen = i;
        if (u < acc) break;
      }
    } else {
      // Remaining mass underflowed to zero: fall back to uniform.
      std::vector<std::size_t> left;
      for (std::size_t i = 0; i < w.size(); ++i)
        if (!taken[i]) left.push_back(i);
      std::uniform_int_distribution<std::size_t> pick(0, left.size() - 1);
      chosen = left[pick(rng)];
    }
    taken[chosen] = true;
    out.push_back(dist.peers[chosen]);
  }
  return out;
}

}  // namespace hast
