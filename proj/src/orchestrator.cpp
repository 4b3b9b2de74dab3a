#include "hast/orchestrator.hpp"

#include <algorithm>
#include <fstream>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "hast/aggregation.hpp"
#include "hast/config.hpp"
#include "hast/csv.hpp"
#include "hast/errors.hpp"

namespace hast {

namespace {

std::uint64_t dataset_seed(std::uint64_t seed, std::size_t client, std::size_t round, int concept_id) {
  Rng rng = make_rng(seed, {stream::kDataset, client, round, static_cast<std::uint64_t>(concept_id)});
  return rng();
}

class OutputFiles {
 public:
  OutputFiles(const ExperimentConfig& config) : enabled_(!config.output_dir.empty()) {
    if (!enabled_) return;
    dir_ = config.output_dir;
    std::filesystem::create_directories(dir_);
    {
      std::ofstream cfg(dir_ / "config.json");
      cfg << config_to_json_string(config) << '\n';
    }
    metrics_.open(dir_ / "metrics.csv");
    exchange_.open(dir_ / "exchange_log.csv");
    schedule_.open(dir_ / "schedule.csv");
    if (!metrics_ || !exchange_ || !schedule_) {
      throw std::runtime_error("cannot write outputs under " + dir_.string());
    }
    write_metrics_header(metrics_);
    write_exchange_log_header(exchange_);
    schedule_ << "round,client_id,concept_id\n";
    if (config.backward_accuracy) {
      backward_.open(dir_ / "backward_accuracy.csv");
      backward_ << "round,client_id,previous_concept_id,test_accuracy,test_loss\n";
    }
  }

  bool enabled() const { return enabled_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::ofstream& metrics() { return metrics_; }
  std::ofstream& exchange() { return exchange_; }
  std::ofstream& schedule() { return schedule_; }
  std::ofstream& backward() { return backward_; }

 private:
  bool enabled_;
  std::filesystem::path dir_;
  std::ofstream metrics_, exchange_, schedule_, backward_;
};

}  // namespace

ModelShape ModelConfig::shape(std::size_t input_dim, std::size_t num_classes) const {
  ModelShape s;
  s.widths.push_back(input_dim);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  s.widths.push_back(num_classes);
  s.split_index = split_index;
  return s;
}

const char* to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::fixed: return "fixed";
    case ScheduleKind::switch_at_round: return "switch_at_round";
    case ScheduleKind::table: return "table";
  }
  return "?";
}

void validate_experiment(const ExperimentConfig& c) {
  if (c.num_clients < 2) throw ConfigError("num_clients must be at least 2", "num_clients");
  if (c.num_rounds < 1) throw ConfigError("num_rounds must be at least 1", "num_rounds");
  if (c.eval_every < 1) throw ConfigError("eval_every must be at least 1", "eval_every");

  const auto& d = c.dataset;
  if (d.source != "blobs" && d.source != "csv") {
    throw ConfigError("dataset.source must be 'blobs' or 'csv'", "dataset.source");
  }
  if (d.num_classes < 2) throw ConfigError("num_classes must be at least 2", "dataset.num_classes");
  if (d.source == "blobs") {
    if (d.dim < 2) throw ConfigError("dim must be at least 2", "dataset.dim");
    if (!(d.class_separation > 0.0)) {
      throw ConfigError("class_separation must be positive", "dataset.class_separation");
    }
  } else if (d.csv_path.empty()) {
    throw ConfigError("csv source needs dataset.csv_path", "dataset.csv_path");
  }
  if (d.sizes.train < 1 || d.sizes.val < 1 || d.sizes.test < 1) {
    throw ConfigError("split sizes must all be at least 1", "dataset.sizes");
  }

  const std::size_t num_layers = c.model.hidden.size() + 1;
  if (std::find(c.model.hidden.begin(), c.model.hidden.end(), 0u) != c.model.hidden.end()) {
    throw ConfigError("hidden widths must be positive", "model.hidden");
  }
  if (num_layers < 2) throw ConfigError("model needs at least one hidden layer", "model.hidden");
  if (c.model.split_index < 1 || c.model.split_index >= num_layers) {
    throw ConfigError("split_index must lie in [1, " + std::to_string(num_layers - 1) + "]",
                      "model.split_index");
  }

  validate_concepts(c.concepts, d.num_classes);
  c.protocol.validate(c.num_clients, num_layers);

  std::set<int> ids;
  for (const auto& cs : c.concepts) ids.insert(cs.concept_id);
  const auto& s = c.schedule;
  switch (s.kind) {
    case ScheduleKind::fixed: break;
    case ScheduleKind::switch_at_round:
      if (!(s.switch_prob >= 0.0 && s.switch_prob <= 1.0)) {
        throw ConfigError("switch_prob must lie in [0, 1]", "schedule.switch_prob");
      }
      if (s.shift_round < 1 || s.shift_round >= c.num_rounds) {
        throw ConfigError("shift_round must lie in [1, num_rounds)", "schedule.shift_round");
      }
      break;
    case ScheduleKind::table:
      if (s.stages.empty()) throw ConfigError("table schedule needs stages", "schedule.stages");
      if (s.rounds_per_stage < 1) {
        throw ConfigError("rounds_per_stage must be positive", "schedule.rounds_per_stage");
      }
      for (std::size_t i = 0; i < s.stages.size(); ++i) {
        if (s.stages[i].size() != c.num_clients) {
          throw ConfigError("stage " + std::to_string(i) + " lists " + std::to_string(s.stages[i].size()) +
                                " clients, expected " + std::to_string(c.num_clients),
                            "schedule.stages");
        }
        for (int id : s.stages[i]) {
          if (!ids.count(id)) {
            throw ConfigError("stage " + std::to_string(i) + " references unknown concept " +
                                  std::to_string(id),
                              "schedule.stages");
          }
        }
      }
      break;
  }
}

ShiftSchedule build_schedule(const ExperimentConfig& c) {
  std::vector<int> ids;
  for (const auto& cs : c.concepts) ids.push_back(cs.concept_id);
  switch (c.schedule.kind) {
    case ScheduleKind::fixed: {
      // Balanced random partition held for the whole run.
      Rng rng = make_rng(c.seed, {stream::kSchedule});
      std::vector<std::size_t> order(c.num_clients);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<int> per_client(c.num_clients);
      for (std::size_t i = 0; i < c.num_clients; ++i) per_client[order[i]] = ids[i % ids.size()];
      return schedule_constant(per_client, c.num_rounds);
    }
    case ScheduleKind::switch_at_round:
      return schedule_switch_at_round(c.num_clients, ids, c.num_rounds, c.schedule.shift_round,
                                      c.schedule.switch_prob, c.seed);
    case ScheduleKind::table:
      return schedule_from_table(c.schedule.stages, c.schedule.rounds_per_stage, c.num_rounds);
  }
  throw ConfigError("unknown schedule kind", "schedule.kind");
}

DataSource build_source(const ExperimentConfig& c) {
  if (c.dataset.source == "csv") {
    return ingest_csv_dataset(c.dataset.csv_path, c.dataset.num_classes, c.dataset.csv_has_header);
  }
  return make_blob_universe(c.dataset.num_classes, c.dataset.dim, c.dataset.class_separation, c.seed);
}

std::vector<MetricsRow> evaluate_all(const std::vector<ClientState>& clients, std::size_t round,
                                     const ExchangeLog* log) {
  std::vector<MetricsRow> rows;
  rows.reserve(clients.size() + 1);
  MetricsRow mean{round, kMeanRowId, -1, 0.0, 0.0, 0.0, 0, 0};
  for (const auto& c : clients) {
    const auto test = loss_and_accuracy(c.model, c.dataset.test);
    const auto train = loss_and_accuracy(c.model, c.dataset.train);
    const RoundCost cost = log ? round_cost(*log, c.id) : RoundCost{};
    rows.push_back({round, c.id, c.dataset.concept_id, test.accuracy, test.loss, train.loss,
                    cost.messages, cost.parameters_transferred});
    mean.test_accuracy += test.accuracy;
    mean.test_loss += test.loss;
    mean.train_loss += train.loss;
    mean.messages += cost.messages;
    mean.params_transferred += cost.parameters_transferred;
  }
  if (!clients.empty()) {
    const auto k = static_cast<double>(clients.size());
    mean.test_accuracy /= k;
    mean.test_loss /= k;
    mean.train_loss /= k;
  }
  rows.push_back(mean);
  return rows;
}

SimilarityMatrix snapshot_similarity(const std::vector<ClientState>& clients) {
  const std::size_t k = clients.size();
  SimilarityMatrix m(k, std::vector<std::optional<double>>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& [peer, score] : clients[i].belief.scores) {
      if (peer >= 0 && static_cast<std::size_t>(peer) < k && peer != clients[i].id) {
        m[i][static_cast<std::size_t>(peer)] = score;
      }
    }
  }
  return m;
}

void write_similarity_csv(std::ostream& out, const SimilarityMatrix& matrix) {
  out << "client_id";
  for (std::size_t j = 0; j < matrix.size(); ++j) out << ',' << j;
  out << '\n';
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    out << i;
    for (const auto& cell : matrix[i]) {
      out << ',';
      if (cell) out << csv::format_double(*cell);
    }
    out << '\n';
  }
}

void write_metrics_header(std::ostream& out) {
  out << "round,client_id,concept_id,test_accuracy,test_loss,train_loss,messages,params_transferred\n";
}

void write_metrics_rows(std::ostream& out, const std::vector<MetricsRow>& rows) {
  for (const auto& r : rows) {
    out << r.round << ',' << r.client_id << ',' << r.concept_id << ','
        << csv::format_double(r.test_accuracy) << ',' << csv::format_double(r.test_loss) << ','
        << csv::format_double(r.train_loss) << ',' << r.messages << ',' << r.params_transferred
        << '\n';
  }
}

RunSummary summarize(const std::vector<MetricsRow>& metrics, const std::vector<std::size_t>& shift_rounds) {
  std::vector<std::pair<std::size_t, double>> series;
  for (const auto& r : metrics)
    if (r.client_id == kMeanRowId) series.emplace_back(r.round, r.test_accuracy);

  RunSummary s;
  s.shift_rounds = shift_rounds;
  if (series.empty()) return s;
  s.mean_final_accuracy = series.back().second;
  const std::size_t tail = std::min<std::size_t>(10, series.size());
  for (std::size_t i = series.size() - tail; i < series.size(); ++i) s.mean_last10_accuracy += series[i].second;
  s.mean_last10_accuracy /= static_cast<double>(tail);

  for (std::size_t shift : shift_rounds) {
    std::optional<double> pre;
    double low = std::numeric_limits<double>::infinity();
    for (const auto& [round, acc] : series) {
      if (round < shift) pre = acc;
      if (round >= shift && round < shift + kDipWindow) low = std::min(low, acc);
    }
    if (!pre || !std::isfinite(low)) continue;
    s.dips.push_back({shift, *pre, low, *pre - low});
  }
  if (!s.dips.empty()) {
    for (const auto& d : s.dips) s.post_shift_dip += d.dip;
    s.post_shift_dip /= static_cast<double>(s.dips.size());
  }
  return s;
}

RunResult run_experiment(const ExperimentConfig& config, std::ostream* progress) {
  validate_experiment(config);
  const ShiftSchedule schedule = build_schedule(config);
  const DataSource source = build_source(config);
  const std::size_t K = config.num_clients;
  const ModelShape shape = config.model.shape(source_dim(source), source_num_classes(source));

  OutputFiles files(config);

  std::vector<ClientState> clients(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& c = clients[k];
    c.id = static_cast<int>(k);
    Rng init_rng = make_rng(config.seed, {stream::kModelInit});
    c.model = init_model(shape, init_rng);
    c.belief.owner = c.id;
    c.rng = make_rng(config.seed, {stream::kClient, k});
  }
  if (progress && config.protocol.protocol == ProtocolKind::hast) {
    const auto& m = clients.front().model;
    if (suffix_scope(m, config.protocol.depth) != classifier_scope(m)) {
      *progress << "note: depth " << config.protocol.depth << " differs from the classifier ("
                << m.num_layers() - m.split_index << " layers); stage-2 aggregation uses depth\n";
    }
  }

  RunResult result;
  std::vector<std::optional<ClientDataset>> previous(K);
  Network net;
  auto fail = [&](const std::exception& e, std::size_t round, int client) -> RunError {
    if (files.enabled()) {
      files.metrics().flush();
      files.exchange().flush();
    }
    std::ostringstream msg;
    msg << "round " << round << ", client " << client << ": " << e.what();
    return RunError(msg.str(), round, client);
  };

  for (std::size_t t = 0; t < config.num_rounds; ++t) {
    // Shift injection.
    for (std::size_t k = 0; k < K; ++k) {
      const int concept_id = schedule.concept_at(t, k);
      if (t > 0 && !schedule.changed(t, k)) continue;
      try {
        auto ds = sample_concept_dataset(source, config.concepts, concept_id, config.dataset.sizes,
                                         dataset_seed(config.seed, k, t, concept_id));
        if (t > 0) previous[k] = clients[k].dataset;
        apply_concept_change(clients[k], std::move(ds));
      } catch (const std::exception& e) {
        throw fail(e, t, static_cast<int>(k));
      }
      if (files.enabled()) files.schedule() << t << ',' << k << ',' << concept_id << '\n';
    }

    // Barrier: every fetch this round sees these snapshots.
    std::vector<LayeredModel> models;
    std::vector<std::size_t> sizes;
    for (const auto& c : clients) {
      models.push_back(c.model);
      sizes.push_back(c.dataset.train.size());
    }
    net.begin_round(t, std::move(models), std::move(sizes));

    ExchangeLog log{t, {}};
    for (auto& c : clients) {
      try {
        auto records = run_protocol_round(c, net, config.protocol);
        log.records.insert(log.records.end(), records.begin(), records.end());
      } catch (const std::exception& e) {
        throw fail(e, t, c.id);
      }
    }
    if (files.enabled()) write_exchange_log_rows(files.exchange(), log);

    const bool eval = (t % config.eval_every == 0) || (t + 1 == config.num_rounds);
    if (eval) {
      auto rows = evaluate_all(clients, t, &log);
      if (files.enabled()) {
        write_metrics_rows(files.metrics(), rows);
        files.metrics().flush();
        if (config.write_similarity && config.protocol.protocol != ProtocolKind::random) {
          std::ofstream sim(files.dir() / ("similarity_" + std::to_string(t) + ".csv"));
          write_similarity_csv(sim, snapshot_similarity(clients));
        }
        if (config.backward_accuracy) {
          for (std::size_t k = 0; k < K; ++k) {
            if (!previous[k]) continue;
            const auto la = loss_and_accuracy(clients[k].model, previous[k]->test);
            files.backward() << t << ',' << k << ',' << previous[k]->concept_id << ','
                             << csv::format_double(la.accuracy) << ',' << csv::format_double(la.loss)
                             << '\n';
          }
        }
      }
      if (progress && (t + 1 == config.num_rounds || (t + 1) % 25 == 0)) {
        *progress << "round " << t << ": mean test accuracy "
                  << csv::format_double(rows.back().test_accuracy) << '\n';
      }
      result.metrics.insert(result.metrics.end(), rows.begin(), rows.end());
    }
    result.exchange_log.insert(result.exchange_log.end(), log.records.begin(), log.records.end());
  }

  result.summary = summarize(result.metrics, schedule.shift_rounds());
  for (const auto& c : clients) {
    result.final_models.push_back(c.model);
    result.final_concepts.push_back(c.dataset.concept_id);
  }
  result.final_similarity = snapshot_similarity(clients);

  if (files.enabled()) {
    std::ofstream summary(files.dir() / "summary.json");
    summary << summary_to_json(result.summary, config) << '\n';
    std::ofstream clusters(files.dir() / "clusters.csv");
    clusters << "client_id,concept_id\n";
    for (const auto& c : clients) clusters << c.id << ',' << c.dataset.concept_id << '\n';
  }
  return result;
}

}  // namespace hast
