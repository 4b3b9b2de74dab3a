#include "hast/netsim.hpp"

#include <ostream>
#include <string>

#include "hast/errors.hpp"

namespace hast {

const char* to_string(PayloadKind kind) {
  return kind == PayloadKind::full_model ? "full_model" : "classifier_only";
}

LayeredModel splice(const LayeredModel& base, const ModelPayload& payload) {
  if (payload.scope.end > base.num_layers() || payload.layers.size() != payload.scope.size()) {
    throw ShapeError("payload does not fit the base model");
  }
  LayeredModel out = base;
  for (std::size_t i = 0; i < payload.layers.size(); ++i) {
    const auto& src = payload.layers[i];
    auto& dst = out.layers[payload.scope.begin + i];
    if (src.in_dim() != dst.in_dim() || src.out_dim() != dst.out_dim()) {
      throw ShapeError("payload layer " + std::to_string(payload.scope.begin + i) +
                       " has a different shape");
    }
    dst = src;
  }
  return out;
}

void Network::begin_round(std::size_t round, std::vector<LayeredModel> models,
                          std::vector<std::size_t> num_samples) {
  if (num_samples.empty()) num_samples.assign(models.size(), 1);
  if (num_samples.size() != models.size()) {
    throw NetworkError("sample counts do not match the number of models");
  }
  round_ = round;
  num_samples_ = std::move(num_samples);
  snapshot_ = std::make_shared<const std::vector<LayeredModel>>(std::move(models));
}

const LayeredModel& Network::snapshot(int client) const {
  if (!snapshot_ || client < 0 || static_cast<std::size_t>(client) >= snapshot_->size()) {
    throw NetworkError("unknown client " + std::to_string(client));
  }
  return (*snapshot_)[static_cast<std::size_t>(client)];
}

FetchResult Network::fetch_models(int requester, std::span<const int> peers, PayloadKind kind,
                                  LayerRange scope) const {
  snapshot(requester);
  FetchResult result;
  for (int peer : peers) {
    if (peer == requester) {
      throw NetworkError("client " + std::to_string(requester) + " cannot fetch from itself");
    }
    const LayeredModel& model = snapshot(peer);
    if (scope.begin > scope.end || scope.end > model.num_layers()) {
      throw NetworkError("fetch scope outside model");
    }
    ModelPayload payload{peer, scope, {}, num_samples_[static_cast<std::size_t>(peer)]};
    payload.layers.assign(model.layers.begin() + static_cast<std::ptrdiff_t>(scope.begin),
                          model.layers.begin() + static_cast<std::ptrdiff_t>(scope.end));
    result.records.push_back({round_, requester, peer, kind, model.param_count(scope)});
    result.payloads.push_back(std::move(payload));
  }
  return result;
}

RoundCost round_cost(const ExchangeLog& log, int client) {
  RoundCost cost;
  for (const auto& r : log.records) {
    if (r.requester != client) continue;
    ++cost.messages;
    cost.parameters_transferred += r.param_count;
  }
  return cost;
}

void write_exchange_log_header(std::ostream& out) {
  out << "round,requester,responder,kind,param_count\n";
}

void write_exchange_log_rows(std::ostream& out, const ExchangeLog& log) {
  for (const auto& r : log.records) {
    out << r.round << ',' << r.requester << ',' << r.responder << ',' << to_string(r.kind) << ','
        << r.param_count << '\n';
  }
}

}  // namespace hast
