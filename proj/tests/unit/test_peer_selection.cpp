#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>
#include <algorithm>
#include <set>

#include "hast/errors.hpp"
#include "hast/peer_selection.hpp"

using namespace hast;

namespace {

std::vector<int> range_ids(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST_CASE("similarity_from_loss") {
  CHECK(similarity_from_loss(0.25) == 4.0);
  CHECK(similarity_from_loss(0.0) == doctest::Approx(1e8));
  CHECK(similarity_from_loss(1e-12) == doctest::Approx(1e8));
  CHECK(similarity_from_loss(std::log(8.0)) == doctest::Approx(0.4809).epsilon(1e-4));
  CHECK_THROWS_AS(similarity_from_loss(-0.1), InternalError);
  CHECK_THROWS_AS(similarity_from_loss(std::nan("")), InternalError);
}

TEST_CASE("update_belief scores the peer on the owner's data") {
  // Zero network: uniform logits over 8 classes, loss ln 8.
  LayeredModel m;
  m.split_index = 1;
  for (int i = 0; i < 2; ++i) {
    DenseLayer l;
    l.weights = Matrix::Zero(8, i == 0 ? 3 : 8);
    l.biases = Vector::Zero(8);
    l.activation = i == 0 ? Activation::relu : Activation::identity;
    m.layers.push_back(l);
  }
  Batch data;
  data.inputs = Matrix::Ones(4, 3);
  data.labels = {0, 3, 5, 7};
  SimilarityBelief b;
  b.owner = 0;
  update_belief(b, 2, m, data, 7);
  REQUIRE(b.score(2).has_value());
  CHECK(*b.score(2) == doctest::Approx(1.0 / std::log(8.0)));
  CHECK(b.last_observed_round.at(2) == 7);
  CHECK_FALSE(b.score(1).has_value());
  CHECK_THROWS(update_belief(b, 0, m, data, 7));
}

TEST_CASE("decay_belief") {
  SimilarityBelief b;
  b.owner = 0;
  b.scores = {{1, 2.0}, {2, 4.0}};
  b.last_observed_round = {{1, 3}, {2, 5}};
  decay_belief(b, 0.5, 5);
  CHECK(*b.score(1) == 1.0);
  CHECK(*b.score(2) == 4.0);
}

TEST_CASE("softmax_distribution") {
  SimilarityBelief b;
  b.owner = 0;

  SUBCASE("no observations give the uniform distribution without the owner") {
    const auto d = softmax_distribution(b, range_ids(5), 0.1);
    CHECK(d.peers == std::vector<int>{1, 2, 3, 4});
    for (double p : d.probabilities) CHECK(p == doctest::Approx(0.25));
    CHECK(d.probability_of(0) == 0.0);
  }

  SUBCASE("score difference of tau gives probability ratio e") {
    b.scores = {{1, 2.0}, {2, 1.9}};
    const auto d = softmax_distribution(b, {0, 1, 2}, 0.1);
    CHECK(d.probability_of(1) / d.probability_of(2) == doctest::Approx(std::exp(1.0)));
    CHECK(d.probability_of(1) + d.probability_of(2) == doctest::Approx(1.0));
  }

  SUBCASE("huge tau is near uniform") {
    b.scores = {{1, 100.0}, {2, 0.0}, {3, 5.0}};
    const auto d = softmax_distribution(b, range_ids(4), 1e6);
    for (double p : d.probabilities) CHECK(std::abs(p - 1.0 / 3.0) < 1e-3);
  }

  SUBCASE("scaling scores and tau together changes nothing") {
    b.scores = {{1, 3.0}, {2, 1.0}, {3, 2.5}};
    SimilarityBelief scaled = b;
    for (auto& [peer, s] : scaled.scores) s *= 10.0;
    const auto d1 = softmax_distribution(b, range_ids(4), 0.5);
    const auto d2 = softmax_distribution(scaled, range_ids(4), 5.0);
    for (std::size_t i = 0; i < d1.probabilities.size(); ++i)
      CHECK(d1.probabilities[i] == doctest::Approx(d2.probabilities[i]).epsilon(1e-12));
  }

  SUBCASE("huge scores stay finite") {
    b.scores = {{1, 1e8}, {2, 1e8 - 1.0}};
    const auto d = softmax_distribution(b, range_ids(3), 0.1);
    CHECK(d.probability_of(1) == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))));
    CHECK(std::isfinite(d.probability_of(2)));
  }

  SUBCASE("unobserved peers take the mean observed score") {
    b.scores = {{1, 1.0}, {2, 3.0}};
    const auto d = softmax_distribution(b, range_ids(4), 1.0);
    CHECK(d.probability_of(3) / d.probability_of(1) == doctest::Approx(std::exp(1.0)));
  }

  CHECK_THROWS_AS(softmax_distribution(b, range_ids(3), 0.0), ConfigError);
}

TEST_CASE("uniform peer sampling") {
  Rng rng(5);
  const auto peers = range_ids(10);
  std::vector<int> counts(10, 0);
  for (int trial = 0; trial < 20000; ++trial) {
    const auto pick = sample_peers_uniform(peers, 3, rng);
    REQUIRE(pick.size() == 3);
    CHECK(std::set<int>(pick.begin(), pick.end()).size() == 3);
    for (int p : pick) ++counts[static_cast<std::size_t>(p)];
  }
  for (int c : counts) CHECK(std::abs(c / 20000.0 - 0.3) < 0.015);
  CHECK(sample_peers_uniform(peers, 10, rng).size() == 10);
  CHECK_THROWS_AS(sample_peers_uniform(peers, 11, rng), ConfigError);
}

TEST_CASE("weighted peer sampling") {
  SamplingDistribution d;
  d.peers = {1, 2, 3, 4};
  d.probabilities = {0.1, 0.2, 0.3, 0.4};
  Rng rng(9);

  SUBCASE("single draws follow the distribution") {
    std::map<int, int> counts;
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) ++counts[sample_peers_weighted(d, 1, rng).front()];
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(std::abs(counts[d.peers[i]] / double(trials) - d.probabilities[i]) < 0.01);
  }

  SUBCASE("second draw renormalises over the rest") {
    // P(first = 4, second = 3) = 0.4 * 0.3 / 0.6 = 0.2
    int hits = 0;
    const int trials = 50000;
    for (int t = 0; t < trials; ++t) {
      const auto pick = sample_peers_weighted(d, 2, rng);
      CHECK(pick[0] != pick[1]);
      hits += pick[0] == 4 && pick[1] == 3;
    }
    CHECK(std::abs(hits / double(trials) - 0.2) < 0.01);
  }

  SUBCASE("zero-probability peers are drawn only when nothing else is left") {
    d.probabilities = {1.0, 0.0, 0.0, 0.0};
    const auto pick = sample_peers_weighted(d, 4, rng);
    CHECK(pick.front() == 1);
    CHECK(std::set<int>(pick.begin(), pick.end()).size() == 4);
  }

  SUBCASE("seeded draws are reproducible") {
    Rng a(3), b(3);
    CHECK(sample_peers_weighted(d, 3, a) == sample_peers_weighted(d, 3, b));
  }

  CHECK_THROWS_AS(sample_peers_weighted(d, 5, rng), ConfigError);
}

TEST_CASE("similarity examples") {
  CHECK(similarity_from_loss(2.0) == 0.5);

  // A peer that classifies the owner's data perfectly scores near the cap.
  LayeredModel m;
  m.split_index = 1;
  for (int i = 0; i < 2; ++i) {
    DenseLayer l;
    l.weights = Matrix::Identity(3, 3) * (i == 0 ? 1.0 : 100.0);
    l.biases = Vector::Zero(3);
    l.activation = i == 0 ? Activation::relu : Activation::identity;
    m.layers.push_back(l);
  }
  Batch data;
  data.inputs = Matrix::Identity(3, 3);
  data.labels = {0, 1, 2};
  SimilarityBelief b;
  b.owner = 5;
  update_belief(b, 1, m, data, 0);
  CHECK(*b.score(1) > 1e8 * 0.999);
  const double first = *b.score(1);
  update_belief(b, 1, m, data, 0);
  CHECK(*b.score(1) == first);
  for (const auto& [peer, s] : b.scores) {
    CHECK(peer != b.owner);
    CHECK(std::isfinite(s));
    CHECK(s > 0.0);
  }
}

TEST_CASE("softmax examples") {
  SimilarityBelief b;
  b.owner = 0;
  SUBCASE("equal scores are uniform over K-1 peers") {
    for (int p = 1; p < 6; ++p) b.scores[p] = 0.7;
    const auto d = softmax_distribution(b, range_ids(6), 0.1);
    for (double p : d.probabilities) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
  }
  SUBCASE("scores 1 and 2 at tau 1 give ratio e") {
    b.scores = {{1, 1.0}, {2, 2.0}};
    const auto d = softmax_distribution(b, {1, 2}, 1.0);
    CHECK(d.probability_of(2) / d.probability_of(1) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  }
  SUBCASE("tau 1e6 is within 1e-4 of uniform") {
    b.scores = {{1, 1.0}, {2, 2.0}, {3, 3.0}, {4, 0.5}};
    const auto d = softmax_distribution(b, range_ids(5), 1e6);
    for (double p : d.probabilities) CHECK(std::abs(p - 0.25) < 1e-4);
  }
  SUBCASE("probabilities form a distribution") {
    Rng rng(4);
    std::uniform_real_distribution<double> s(0.0, 50.0);
    for (int trial = 0; trial < 100; ++trial) {
      b.scores.clear();
      for (int p = 1; p < 12; ++p)
        if (trial % 3 != 0 || p % 2 == 0) b.scores[p] = s(rng);
      const auto d = softmax_distribution(b, range_ids(12), 0.1 + trial * 0.05);
      double total = 0.0;
      for (double p : d.probabilities) {
        CHECK(p >= 0.0);
        total += p;
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("sampling examples") {
  Rng rng(21);
  const std::vector<int> peers{1, 2, 3, 4, 5, 6, 7, 8, 9};

  SUBCASE("n = K-1 returns every peer in both modes") {
    auto u = sample_peers_uniform(peers, 9, rng);
    std::sort(u.begin(), u.end());
    CHECK(u == peers);
    SamplingDistribution d;
    d.peers = peers;
    d.probabilities.assign(9, 1.0 / 9.0);
    auto w = sample_peers_weighted(d, 9, rng);
    std::sort(w.begin(), w.end());
    CHECK(w == peers);
  }

  SUBCASE("uniform single draws over K=10") {
    std::map<int, int> counts;
    for (int t = 0; t < 10000; ++t) ++counts[sample_peers_uniform(range_ids(10), 1, rng).front()];
    for (int p = 0; p < 10; ++p) CHECK(std::abs(counts[p] / 10000.0 - 0.1) <= 0.01);
  }

  SUBCASE("a dominant peer is drawn almost always") {
    SimilarityBelief b;
    b.owner = 0;
    for (int p = 1; p < 10; ++p) b.scores[p] = 1.0;
    b.scores[4] = 2.5;
    const auto d = softmax_distribution(b, range_ids(10), 0.1);
    REQUIRE(d.probability_of(4) > 0.999);
    int hits = 0;
    for (int t = 0; t < 10000; ++t) hits += sample_peers_weighted(d, 1, rng).front() == 4;
    CHECK(hits >= 9950);
  }
}
