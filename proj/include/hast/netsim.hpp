#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "hast/nn.hpp"

namespace hast {

enum class PayloadKind { full_model, classifier_only };

const char* to_string(PayloadKind kind);

struct ExchangeRecord {
  std::size_t round = 0;
  int requester = 0;
  int responder = 0;
  PayloadKind kind = PayloadKind::full_model;
  std::size_t param_count = 0;

  friend bool operator==(const ExchangeRecord&, const ExchangeRecord&) = default;
};

struct ExchangeLog {
  std::size_t round = 0;
  std::vector<ExchangeRecord> records;
};

/// Layers `scope` of a peer's model as of the round barrier.
struct ModelPayload {
  int peer = 0;
  LayerRange scope;
  std::vector<DenseLayer> layers;
  std::size_t num_samples = 0;  // peer's local training-set size
};

/// `base` with the payload's layers substituted in.
LayeredModel splice(const LayeredModel& base, const ModelPayload& payload);

struct FetchResult {
  std::vector<ModelPayload> payloads;
  std::vector<ExchangeRecord> records;
};

/// Synchronous snapshot store. `begin_round` freezes every client's model;
/// all fetches until the next `begin_round` observe that frozen state.
class Network {
 public:
  /// `num_samples[k]` is client k's training-set size, shipped with every
  /// payload as its averaging weight. Defaults to 1 per client when empty.
  void begin_round(std::size_t round, std::vector<LayeredModel> models,
                   std::vector<std::size_t> num_samples = {});

  std::size_t round() const { return round_; }
  std::size_t num_clients() const { return snapshot_ ? snapshot_->size() : 0; }
  const LayeredModel& snapshot(int client) const;

  /// Copies layers `scope` from each peer's snapshot. Throws NetworkError on
  /// unknown peers or when the requester appears among them.
  FetchResult fetch_models(int requester, std::span<const int> peers, PayloadKind kind,
                           LayerRange scope) const;

 private:
  std::size_t round_ = 0;
  std::shared_ptr<const std::vector<LayeredModel>> snapshot_;
  std::vector<std::size_t> num_samples_;
};

struct RoundCost {
  std::size_t messages = 0;
  std::size_t parameters_transferred = 0;

  friend bool operator==(const RoundCost&, const RoundCost&) = default;
};

RoundCost round_cost(const ExchangeLog& log, int client);

void write_exchange_log_header(std::ostream& out);
void write_exchange_log_rows(std::ostream& out, const ExchangeLog& log);

}  // namespace hast
