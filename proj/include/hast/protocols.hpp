#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hast/data_shift.hpp"
#include "hast/netsim.hpp"
#include "hast/nn.hpp"
#include "hast/peer_selection.hpp"
#include "hast/random.hpp"

namespace hast {

enum class ProtocolKind { random, dac, hast };

const char* to_string(ProtocolKind kind);
ProtocolKind parse_protocol(const std::string& name);

struct ProtocolConfig {
  ProtocolKind protocol = ProtocolKind::hast;
  std::size_t n = 3;  // peers per sampling stage; every protocol fetches 2n models per round
  double tau = 0.1;
  std::size_t depth = 3;
  std::size_t local_epochs = 1;
  std::size_t finetune_epochs = 1;
  double lr = 0.05;  // 0 disables local training
  std::size_t batch_size = 32;
  bool finetune_enabled = true;
  bool include_self = true;
  bool disjoint_stages = false;  // HAST: stage-2 draws exclude stage-1 peers
  double belief_decay = 1.0;     // per-round factor on unrefreshed scores

  /// Throws ConfigError naming the field for any violated invariant,
  /// including the 2n <= K - 1 budget feasibility check.
  void validate(std::size_t num_clients, std::size_t num_layers) const;
};

struct ClientState {
  int id = 0;
  LayeredModel model;
  ClientDataset dataset;
  SimilarityBelief belief;
  Rng rng;
};

/// One protocol round for one client. Reads peers only through `net`, so
/// mutating `state` here never leaks into other clients' view of this round.
/// Returns the exchange records for the requests this client made.
std::vector<ExchangeRecord> hast_round(ClientState& state, const Network& net,
                                       const ProtocolConfig& config);
std::vector<ExchangeRecord> dac_round(ClientState& state, const Network& net,
                                      const ProtocolConfig& config);
std::vector<ExchangeRecord> random_round(ClientState& state, const Network& net,
                                         const ProtocolConfig& config);

/// Dispatches on `config.protocol`.
std::vector<ExchangeRecord> run_protocol_round(ClientState& state, const Network& net,
                                               const ProtocolConfig& config);

/// Swaps in the new concept's data; model and beliefs are kept.
void apply_concept_change(ClientState& state, ClientDataset new_dataset);

}  // namespace hast
