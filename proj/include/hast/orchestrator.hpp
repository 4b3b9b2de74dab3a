#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hast/data_shift.hpp"
#include "hast/netsim.hpp"
#include "hast/protocols.hpp"

namespace hast {

struct DatasetConfig {
  std::string source = "blobs";  // "blobs" or "csv"
  std::size_t num_classes = 8;
  std::size_t dim = 16;
  double class_separation = 4.0;
  SplitSizes sizes;
  std::string csv_path;
  bool csv_has_header = false;
};

struct ModelConfig {
  std::vector<std::size_t> hidden{32, 32, 32, 16};
  std::size_t split_index = 2;

  ModelShape shape(std::size_t input_dim, std::size_t num_classes) const;
};

enum class ScheduleKind { fixed, switch_at_round, table };

const char* to_string(ScheduleKind kind);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::fixed;
  std::size_t shift_round = 75;                 // switch_at_round
  double switch_prob = 0.75;                    // switch_at_round
  std::size_t rounds_per_stage = 75;            // table
  std::vector<std::vector<int>> stages;         // table: stage -> concept per client
};

struct ExperimentConfig {
  std::size_t num_clients = 20;
  std::size_t num_rounds = 150;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  std::string output_dir;  // empty: nothing is written
  DatasetConfig dataset;
  ModelConfig model;
  std::vector<ConceptSpec> concepts;
  ScheduleConfig schedule;
  ProtocolConfig protocol;
  bool backward_accuracy = false;
  bool write_similarity = true;
};

/// Throws ConfigError naming the first offending field.
void validate_experiment(const ExperimentConfig& config);

ShiftSchedule build_schedule(const ExperimentConfig& config);
DataSource build_source(const ExperimentConfig& config);

struct MetricsRow {
  std::size_t round = 0;
  int client_id = 0;  // -1: mean over clients
  int concept_id = 0;  // -1 on the mean row
  double test_accuracy = 0.0;
  double test_loss = 0.0;
  double train_loss = 0.0;
  std::size_t messages = 0;            // mean row: total over clients
  std::size_t params_transferred = 0;  // mean row: total over clients
};

inline constexpr int kMeanRowId = -1;

/// One row per client on its current test split, followed by the mean row.
/// `log` supplies the message counts; pass nullptr for zero.
std::vector<MetricsRow> evaluate_all(const std::vector<ClientState>& clients, std::size_t round,
                                     const ExchangeLog* log = nullptr);

/// K x K raw scores; nullopt where unobserved (always on the diagonal).
using SimilarityMatrix = std::vector<std::vector<std::optional<double>>>;

SimilarityMatrix snapshot_similarity(const std::vector<ClientState>& clients);
void write_similarity_csv(std::ostream& out, const SimilarityMatrix& matrix);

void write_metrics_header(std::ostream& out);
void write_metrics_rows(std::ostream& out, const std::vector<MetricsRow>& rows);

struct ShiftDip {
  std::size_t shift_round = 0;
  double pre_shift_accuracy = 0.0;
  double min_post_accuracy = 0.0;
  double dip = 0.0;
};

struct RunSummary {
  double mean_final_accuracy = 0.0;
  double mean_last10_accuracy = 0.0;
  std::vector<std::size_t> shift_rounds;
  std::vector<ShiftDip> dips;
  double post_shift_dip = 0.0;  // mean over shifts with a measurable dip; 0 if none
};

inline constexpr std::size_t kDipWindow = 10;

/// Dip metric over the mean-row accuracy series.
RunSummary summarize(const std::vector<MetricsRow>& metrics, const std::vector<std::size_t>& shift_rounds);

struct RunResult {
  RunSummary summary;
  std::vector<MetricsRow> metrics;
  std::vector<ExchangeRecord> exchange_log;
  std::vector<LayeredModel> final_models;
  std::vector<int> final_concepts;
  SimilarityMatrix final_similarity;
};

/// Raised for failures inside the round loop; names the round and client.
class RunError : public std::runtime_error {
 public:
  RunError(const std::string& what, std::size_t round, int client)
      : std::runtime_error(what), round_(round), client_(client) {}
  std::size_t round() const noexcept { return round_; }
  int client() const noexcept { return client_; }

 private:
  std::size_t round_;
  int client_;
};

/// Builds clients, runs every round with shift injection, evaluates, and
/// writes artefacts under `config.output_dir` when it is set. `progress`
/// receives human-readable notes.
RunResult run_experiment(const ExperimentConfig& config, std::ostream* progress = nullptr);

std::string summary_to_json(const RunSummary& summary, const ExperimentConfig& config);

}  // namespace hast
