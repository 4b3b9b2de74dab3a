#include "hast/protocols.hpp"

#include <algorithm>
#include <cmath>

#include "hast/aggregation.hpp"
#include "hast/errors.hpp"

namespace hast {

namespace {

std::vector<int> all_peers(const ClientState& state, const Network& net) {
  std::vector<int> peers;
  for (std::size_t k = 0; k < net.num_clients(); ++k)
    if (static_cast<int>(k) != state.id) peers.push_back(static_cast<int>(k));
  return peers;
}

void require(const ProtocolConfig& config, ProtocolKind kind) {
  if (config.protocol != kind) {
    throw ConfigError(std::string("round function for ") + to_string(kind) + " called with protocol " +
                          to_string(config.protocol),
                      "protocol.protocol");
  }
}

/// Averages `received` (already spliced onto `recipient`) into `recipient`
/// over `scope`, optionally including the recipient itself.
LayeredModel average_with(const ClientState& state, const LayeredModel& recipient,
                          const std::vector<LayeredModel>& received,
                          const std::vector<ModelPayload>& payloads, LayerRange scope,
                          bool include_self) {
  AggregationRequest req{&recipient, {}, scope};
  if (include_self) {
    req.contributors.push_back(
        {state.id, &recipient, static_cast<double>(std::max<std::size_t>(1, state.dataset.train.size()))});
  }
  for (std::size_t i = 0; i < received.size(); ++i) {
    req.contributors.push_back({payloads[i].peer, &received[i],
                                static_cast<double>(std::max<std::size_t>(1, payloads[i].num_samples))});
  }
  if (req.contributors.empty()) return recipient;
  return fedavg(req);
}

/// Splices each payload onto `base` and scores it on the client's own
/// training data.
std::vector<LayeredModel> receive(ClientState& state, const LayeredModel& base,
                                  const std::vector<ModelPayload>& payloads, std::size_t round,
                                  bool score) {
  std::vector<LayeredModel> out;
  out.reserve(payloads.size());
  for (const auto& p : payloads) {
    out.push_back(splice(base, p));
    if (score) update_belief(state.belief, p.peer, out.back(), state.dataset.train, round);
  }
  return out;
}

void local_training(ClientState& state, const ProtocolConfig& config) {
  if (config.lr == 0.0) return;
  const auto& train = state.dataset.train;
  state.model = train_epochs(std::move(state.model), train, config.local_epochs, config.batch_size,
                             config.lr, UpdateScope::all_layers, state.rng);
  if (config.finetune_enabled) {
    state.model = train_epochs(std::move(state.model), train, config.finetune_epochs,
                               config.batch_size, config.lr, UpdateScope::classifier_only, state.rng);
  }
}

void append(std::vector<ExchangeRecord>& log, const std::vector<ExchangeRecord>& more) {
  log.insert(log.end(), more.begin(), more.end());
}

}  // namespace

const char* to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::random: return "random";
    case ProtocolKind::dac: return "dac";
    case ProtocolKind::hast: return "hast";
  }
  return "?";
}

ProtocolKind parse_protocol(const std::string& name) {
  if (name == "random") return ProtocolKind::random;
  if (name == "dac") return ProtocolKind::dac;
  if (name == "hast") return ProtocolKind::hast;
  throw ConfigError("unknown protocol '" + name + "' (expected random, dac or hast)",
                    "protocol.protocol");
}

void ProtocolConfig::validate(std::size_t num_clients, std::size_t num_layers) const {
  if (n < 1) throw ConfigError("n must be at least 1", "protocol.n");
  if (num_clients < 2 || 2 * n > num_clients - 1) {
    throw ConfigError("budget 2n = " + std::to_string(2 * n) + " exceeds the " +
                          std::to_string(num_clients == 0 ? 0 : num_clients - 1) +
                          " available peers",
                      "protocol.n");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be positive", "protocol.tau");
  if (depth < 1 || depth + 1 > num_layers) {
    throw ConfigError("depth " + std::to_string(depth) + " outside [1, " +
                          std::to_string(num_layers - 1) + "]",
                      "protocol.depth");
  }
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be non-negative", "protocol.lr");
  if (batch_size < 1) throw ConfigError("batch_size must be positive", "protocol.batch_size");
  if (!(belief_decay > 0.0 && belief_decay <= 1.0)) {
    throw ConfigError("belief_decay must lie in (0, 1]", "protocol.belief_decay");
  }
}

std::vector<ExchangeRecord> hast_round(ClientState& state, const Network& net,
                                       const ProtocolConfig& config) {
  require(config, ProtocolKind::hast);
  const std::size_t round = net.round();
  decay_belief(state.belief, config.belief_decay, round);
  std::vector<ExchangeRecord> log;
  const auto peers = all_peers(state, net);

  // (1) uniform peers, all layers.
  const auto uniform = sample_peers_uniform(peers, config.n, state.rng);
  const auto full = net.fetch_models(state.id, uniform, PayloadKind::full_model, state.model.all_layers());
  append(log, full.records);
  const auto full_models = receive(state, state.model, full.payloads, round, true);
  const LayeredModel mixed = average_with(state, state.model, full_models, full.payloads,
                                          state.model.all_layers(), config.include_self);

  // (2) similarity-sampled peers, trailing `depth` layers.
  std::vector<int> candidates = peers;
  if (config.disjoint_stages) {
    std::erase_if(candidates, [&](int p) {
      return std::find(uniform.begin(), uniform.end(), p) != uniform.end();
    });
  }
  const auto dist = softmax_distribution(state.belief, candidates, config.tau);
  const auto similar = sample_peers_weighted(dist, config.n, state.rng);
  const LayerRange scope = suffix_scope(mixed, config.depth);
  const auto partial = net.fetch_models(state.id, similar, PayloadKind::classifier_only, scope);
  append(log, partial.records);
  const auto partial_models = receive(state, mixed, partial.payloads, round, true);
  state.model = average_with(state, mixed, partial_models, partial.payloads, scope, config.include_self);

  // (3) local training, then classifier fine-tuning.
  local_training(state, config);
  return log;
}

std::vector<ExchangeRecord> dac_round(ClientState& state, const Network& net,
                                      const ProtocolConfig& config) {
  require(config, ProtocolKind::dac);
  const std::size_t round = net.round();
  decay_belief(state.belief, config.belief_decay, round);
  const auto dist = softmax_distribution(state.belief, all_peers(state, net), config.tau);
  const auto chosen = sample_peers_weighted(dist, 2 * config.n, state.rng);
  const auto fetched = net.fetch_models(state.id, chosen, PayloadKind::full_model, state.model.all_layers());
  const auto models = receive(state, state.model, fetched.payloads, round, true);
  state.model = average_with(state, state.model, models, fetched.payloads, state.model.all_layers(),
                             config.include_self);
  local_training(state, config);
  return fetched.records;
}

std::vector<ExchangeRecord> random_round(ClientState& state, const Network& net,
                                         const ProtocolConfig& config) {
  require(config, ProtocolKind::random);
  const auto chosen = sample_peers_uniform(all_peers(state, net), 2 * config.n, state.rng);
  const auto fetched = net.fetch_models(state.id, chosen, PayloadKind::full_model, state.model.all_layers());
  const auto models = receive(state, state.model, fetched.payloads, net.round(), false);
  state.model = average_with(state, state.model, models, fetched.payloads, state.model.all_layers(),
                             config.include_self);
  local_training(state, config);
  return fetched.records;
}

std::vector<ExchangeRecord> run_protocol_round(ClientState& state, const Network& net,
                                               const ProtocolConfig& config) {
  switch (config.protocol) {
    case ProtocolKind::hast: return hast_round(state, net, config);
    case ProtocolKind::dac: return dac_round(state, net, config);
    case ProtocolKind::random: return random_round(state, net, config);
  }
  throw ConfigError("unknown protocol", "protocol.protocol");
}

void apply_concept_change(ClientState& state, ClientDataset new_dataset) {
  state.dataset = std::move(new_dataset);
}

}  // namespace hast
