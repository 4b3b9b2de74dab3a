#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "hast/nn.hpp"

namespace hast {

/// Fixed class means for synthetic Gaussian-blob data (unit covariance).
/// Means lie on a sphere of radius `class_separation` with pairwise
/// distance at least `class_separation`.
struct BlobUniverse {
  std::size_t num_classes = 0;
  std::size_t dim = 0;
  double class_separation = 0.0;
  Matrix means;  // num_classes x dim
};

BlobUniverse make_blob_universe(std::size_t num_classes, std::size_t dim, double class_separation,
                                std::uint64_t seed);

/// Labelled samples loaded from a CSV file.
struct TabularPool {
  std::size_t num_classes = 0;
  Batch samples;
};

/// Rows: features then an integer label; no header unless `has_header`.
TabularPool ingest_csv_dataset(const std::filesystem::path& path, std::size_t num_classes,
                               bool has_header = false);
void export_csv_dataset(const std::filesystem::path& path, const Batch& data);

using DataSource = std::variant<BlobUniverse, TabularPool>;

std::size_t source_dim(const DataSource& source);
std::size_t source_num_classes(const DataSource& source);

enum class ConceptKind { covariate_rotation, label_subset, label_swap };

struct ConceptSpec {
  int concept_id = 0;
  ConceptKind kind = ConceptKind::label_subset;
  double angle = 0.0;               // covariate_rotation, radians in [0, 2pi)
  std::vector<int> allowed;         // label_subset
  std::pair<int, int> swap{0, 1};   // label_swap
  int base_concept = 0;             // label_swap
};

/// Checks every concept against `num_classes` and resolves label_swap bases
/// (no cycles, swapped ids present in the base label set).
void validate_concepts(const std::vector<ConceptSpec>& concepts, std::size_t num_classes);

struct ClientDataset {
  Batch train;
  Batch val;
  Batch test;
  int concept_id = 0;
};

struct SplitSizes {
  std::size_t train = 200;
  std::size_t val = 50;
  std::size_t test = 200;
};

/// Draws train/val/test for `concept_id`. Label swaps are applied after
/// sampling, so a swap concept shares its base concept's inputs bit-exactly
/// under the same seed.
ClientDataset sample_concept_dataset(const DataSource& source,
                                     const std::vector<ConceptSpec>& concepts, int concept_id,
                                     SplitSizes sizes, std::uint64_t seed);

/// Rotation by `angle` in the plane of the first two coordinates.
void rotate_inputs(Matrix& inputs, double angle);

/// Concept assignment for every (round, client).
class ShiftSchedule {
 public:
  ShiftSchedule() = default;
  explicit ShiftSchedule(std::vector<std::vector<int>> assignment);

  std::size_t num_rounds() const { return assignment_.size(); }
  std::size_t num_clients() const { return assignment_.empty() ? 0 : assignment_.front().size(); }
  int concept_at(std::size_t round, std::size_t client) const;
  const std::vector<int>& round_assignment(std::size_t round) const;

  /// Rounds t >= 1 where any client's concept differs from round t - 1.
  std::vector<std::size_t> shift_rounds() const;
  bool changed(std::size_t round, std::size_t client) const;

 private:
  std::vector<std::vector<int>> assignment_;  // [round][client]
};

/// Balanced random partition over `concept_ids` before `shift_round`; at the
/// shift each client independently moves, with probability `switch_prob`, to
/// a uniformly drawn different concept.
ShiftSchedule schedule_switch_at_round(std::size_t num_clients, const std::vector<int>& concept_ids,
                                       std::size_t num_rounds, std::size_t shift_round,
                                       double switch_prob, std::uint64_t seed);

/// Stage s covers rounds [s * rounds_per_stage, (s + 1) * rounds_per_stage);
/// the last stage extends to `num_rounds` when given.
ShiftSchedule schedule_from_table(const std::vector<std::vector<int>>& table,
                                  std::size_t rounds_per_stage,
                                  std::optional<std::size_t> num_rounds = std::nullopt);

ShiftSchedule schedule_constant(const std::vector<int>& per_client, std::size_t num_rounds);

}  // namespace hast
