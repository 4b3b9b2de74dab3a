#include "hast/data_shift.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <string>

#include "hast/csv.hpp"
#include "hast/errors.hpp"

namespace hast {

namespace {

constexpr std::size_t kMeanRetries = 10000;
constexpr std::size_t kUniverseRestarts = 50;

struct ResolvedConcept {
  std::vector<int> source_labels;  // labels drawn before relabelling
  double angle = 0.0;
  std::vector<int> relabel;        // source label -> emitted label
};

const ConceptSpec& find_concept(const std::vector<ConceptSpec>& concepts, int id) {
  for (const auto& c : concepts)
    if (c.concept_id == id) return c;
  throw ConfigError("unknown concept id " + std::to_string(id), "concepts");
}

ResolvedConcept resolve(const std::vector<ConceptSpec>& concepts, int id, std::size_t num_classes,
                        std::size_t depth = 0) {
  if (depth > concepts.size()) throw ConfigError("label_swap base chain forms a cycle", "concepts");
  const auto& c = find_concept(concepts, id);
  ResolvedConcept r;
  switch (c.kind) {
    case ConceptKind::covariate_rotation: {
      if (!(c.angle >= 0.0 && c.angle < 2.0 * std::numbers::pi)) {
        throw ConfigError("concept " + std::to_string(id) + ": rotation angle outside [0, 2pi)",
                          "concepts");
      }
      r.source_labels.resize(num_classes);
      std::iota(r.source_labels.begin(), r.source_labels.end(), 0);
      r.angle = c.angle;
      break;
    }
    case ConceptKind::label_subset: {
      if (c.allowed.empty()) {
        throw ConfigError("concept " + std::to_string(id) + ": empty label subset", "concepts");
      }
      std::set<int> seen;
      for (int y : c.allowed) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes || !seen.insert(y).second) {
          throw ConfigError("concept " + std::to_string(id) + ": invalid or repeated label " +
                                std::to_string(y),
                            "concepts");
        }
      }
      r.source_labels = c.allowed;
      break;
    }
    case ConceptKind::label_swap: {
      if (c.base_concept == id) {
        throw ConfigError("concept " + std::to_string(id) + ": label_swap cannot be its own base",
                          "concepts");
      }
      r = resolve(concepts, c.base_concept, num_classes, depth + 1);
      const auto [a, b] = c.swap;
      if (a == b) {
        throw ConfigError("concept " + std::to_string(id) + ": swapped labels must differ",
                          "concepts");
      }
      std::vector<int> emitted;
      for (int y : r.source_labels) emitted.push_back(r.relabel.empty() ? y : r.relabel[y]);
      auto present = [&](int y) { return std::find(emitted.begin(), emitted.end(), y) != emitted.end(); };
      if (!present(a) || !present(b)) {
        throw ConfigError("concept " + std::to_string(id) +
                              ": swapped labels must both appear in the base concept",
                          "concepts");
      }
      if (r.relabel.empty()) {
        r.relabel.resize(num_classes);
        std::iota(r.relabel.begin(), r.relabel.end(), 0);
      }
      for (auto& y : r.relabel) {
        if (y == a) y = b;
        else if (y == b) y = a;
      }
      return r;
    }
  }
  return r;
}

void emit_split(const DataSource& source, const ResolvedConcept& rc,
                std::span<const std::size_t> pool_rows, std::size_t n, Rng& rng, Batch& out) {
  const std::size_t dim = source_dim(source);
  out.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  out.labels.resize(n);
  if (const auto* u = std::get_if<BlobUniverse>(&source)) {
    std::uniform_int_distribution<std::size_t> pick(0, rc.source_labels.size() - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int y = rc.source_labels[pick(rng)];
      out.labels[i] = y;
      for (std::size_t d = 0; d < dim; ++d) {
        out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) =
            u->means(y, static_cast<Eigen::Index>(d)) + noise(rng);
      }
    }
  } else {
    const auto& pool = std::get<TabularPool>(source).samples;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(pool_rows[i]);
      out.inputs.row(static_cast<Eigen::Index>(i)) = pool.inputs.row(row);
      out.labels[i] = pool.labels[pool_rows[i]];
    }
  }
  if (rc.angle != 0.0) rotate_inputs(out.inputs, rc.angle);
  if (!rc.relabel.empty())
    for (auto& y : out.labels) y = rc.relabel[static_cast<std::size_t>(y)];
}

}  // namespace

BlobUniverse make_blob_universe(std::size_t num_classes, std::size_t dim, double class_separation,
                                std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2", "dataset.num_classes");
  if (dim < 2) throw ConfigError("dim must be at least 2", "dataset.dim");
  if (!(class_separation > 0.0)) {
    throw ConfigError("class_separation must be positive", "dataset.class_separation");
  }
  Rng rng = make_rng(seed, {stream::kUniverse});
  std::normal_distribution<double> normal(0.0, 1.0);
  BlobUniverse u{num_classes, dim, class_separation, Matrix(num_classes, dim)};

  auto random_point = [&]() {
    Vector v(static_cast<Eigen::Index>(dim));
    do {
      for (auto& x : v) x = normal(rng);
    } while (v.norm() == 0.0);
    return Vector(v * (class_separation / v.norm()));
  };

  for (std::size_t restart = 0; restart < kUniverseRestarts; ++restart) {
    bool ok = true;
    for (std::size_t c = 0; c < num_classes && ok; ++c) {
      bool placed = false;
      for (std::size_t attempt = 0; attempt < kMeanRetries && !placed; ++attempt) {
        const Vector p = random_point();
        placed = true;
        for (std::size_t prev = 0; prev < c; ++prev) {
          if ((u.means.row(static_cast<Eigen::Index>(prev)).transpose() - p).norm() < class_separation) {
            placed = false;
            break;
          }
        }
        if (placed) u.means.row(static_cast<Eigen::Index>(c)) = p.transpose();
      }
      ok = placed;
    }
    if (ok) return u;
  }
  throw GenerationError("could not place " + std::to_string(num_classes) +
                        " class means with separation " + std::to_string(class_separation) +
                        " in dimension " + std::to_string(dim));
}

TabularPool ingest_csv_dataset(const std::filesystem::path& path, std::size_t num_classes,
                               bool has_header) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string(), 0);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (has_header && line_no == 1) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split(line);
    if (fields.size() < 2) throw IngestionError("need at least one feature and a label", line_no);
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw IngestionError("expected " + std::to_string(width) + " columns, found " +
                               std::to_string(fields.size()),
                           line_no);
    }
    std::vector<double> features;
    for (std::size_t i = 0; i + 1 < fields.size(); ++i) {
      auto v = csv::parse_double(fields[i]);
      if (!v || !std::isfinite(*v)) {
        throw IngestionError("non-numeric feature in column " + std::to_string(i + 1), line_no);
      }
      features.push_back(*v);
    }
    const auto label = csv::parse_int(fields.back());
    if (!label) throw IngestionError("label is not an integer", line_no);
    if (*label < 0 || static_cast<std::size_t>(*label) >= num_classes) {
      throw IngestionError("label " + std::to_string(*label) + " outside [0, " +
                               std::to_string(num_classes) + ")",
                           line_no);
    }
    rows.push_back(std::move(features));
    labels.push_back(static_cast<int>(*label));
  }
  if (rows.empty()) throw IngestionError("no data rows", line_no);

  TabularPool pool;
  pool.num_classes = num_classes;
  pool.samples.inputs.resize(static_cast<Eigen::Index>(rows.size()),
                             static_cast<Eigen::Index>(width - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      pool.samples.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  pool.samples.labels = std::move(labels);
  return pool;
}

void export_csv_dataset(const std::filesystem::path& path, const Batch& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index r = 0; r < data.inputs.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.inputs.cols(); ++c)
      out << csv::format_double(data.inputs(r, c)) << ',';
    out << data.labels[static_cast<std::size_t>(r)] << '\n';
  }
}

std::size_t source_dim(const DataSource& source) {
  if (const auto* u = std::get_if<BlobUniverse>(&source)) return u->dim;
  return static_cast<std::size_t>(std::get<TabularPool>(source).samples.inputs.cols());
}

std::size_t source_num_classes(const DataSource& source) {
  if (const auto* u = std::get_if<BlobUniverse>(&source)) return u->num_classes;
  return std::get<TabularPool>(source).num_classes;
}

void validate_concepts(const std::vector<ConceptSpec>& concepts, std::size_t num_classes) {
  if (concepts.empty()) throw ConfigError("at least one concept is required", "concepts");
  std::set<int> ids;
  for (const auto& c : concepts) {
    if (!ids.insert(c.concept_id).second) {
      throw ConfigError("duplicate concept id " + std::to_string(c.concept_id), "concepts");
    }
  }
  for (const auto& c : concepts) resolve(concepts, c.concept_id, num_classes);
}

void rotate_inputs(Matrix& inputs, double angle) {
  if (inputs.cols() < 2) throw ShapeError("rotation needs at least two input dimensions");
  const double cs = std::cos(angle);
  const double sn = std::sin(angle);
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    const double x0 = inputs(r, 0);
    const double x1 = inputs(r, 1);
    inputs(r, 0) = cs * x0 - sn * x1;
    inputs(r, 1) = sn * x0 + cs * x1;
  }
}

ClientDataset sample_concept_dataset(const DataSource& source,
                                     const std::vector<ConceptSpec>& concepts, int concept_id,
                                     SplitSizes sizes, std::uint64_t seed) {
  if (sizes.train == 0 || sizes.val == 0 || sizes.test == 0) {
    throw ConfigError("split sizes must all be at least 1", "dataset");
  }
  const auto rc = resolve(concepts, concept_id, source_num_classes(source));
  Rng rng = make_rng(seed, {stream::kDataset});

  std::vector<std::size_t> rows;
  if (const auto* pool = std::get_if<TabularPool>(&source)) {
    const std::set<int> wanted(rc.source_labels.begin(), rc.source_labels.end());
    for (std::size_t i = 0; i < pool->samples.size(); ++i)
      if (wanted.count(pool->samples.labels[i])) rows.push_back(i);
    if (rows.size() < 3) {
      throw GenerationError("concept " + std::to_string(concept_id) +
                            " has fewer than 3 eligible rows in the CSV source");
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t want = sizes.train + sizes.val + sizes.test;
    if (rows.size() < want) {
      // Shrink proportionally so the splits stay disjoint.
      const double f = static_cast<double>(rows.size()) / static_cast<double>(want);
      sizes.val = std::max<std::size_t>(1, static_cast<std::size_t>(sizes.val * f));
      sizes.test = std::max<std::size_t>(1, static_cast<std::size_t>(sizes.test * f));
      sizes.train = rows.size() - sizes.val - sizes.test;
    }
  }

  ClientDataset ds;
  ds.concept_id = concept_id;
  std::span<const std::size_t> all(rows);
  auto slice = [&](std::size_t offset, std::size_t n) {
    return all.empty() ? all : all.subspan(offset, n);
  };
  emit_split(source, rc, slice(0, sizes.train), sizes.train, rng, ds.train);
  emit_split(source, rc, slice(sizes.train, sizes.val), sizes.val, rng, ds.val);
  emit_split(source, rc, slice(sizes.train + sizes.val, sizes.test), sizes.test, rng, ds.test);
  return ds;
}

ShiftSchedule::ShiftSchedule(std::vector<std::vector<int>> assignment)
    : assignment_(std::move(assignment)) {
  for (const auto& row : assignment_) {
    if (row.size() != assignment_.front().size()) {
      throw ConfigError("schedule rows must all cover the same clients", "schedule");
    }
  }
}

int ShiftSchedule::concept_at(std::size_t round, std::size_t client) const {
  return assignment_.at(round).at(client);
}

const std::vector<int>& ShiftSchedule::round_assignment(std::size_t round) const {
  return assignment_.at(round);
}

bool ShiftSchedule::changed(std::size_t round, std::size_t client) const {
  return round > 0 && concept_at(round, client) != concept_at(round - 1, client);
}

std::vector<std::size_t> ShiftSchedule::shift_rounds() const {
  std::vector<std::size_t> out;
  for (std::size_t t = 1; t < assignment_.size(); ++t)
    if (assignment_[t] != assignment_[t - 1]) out.push_back(t);
  return out;
}

ShiftSchedule schedule_switch_at_round(std::size_t num_clients, const std::vector<int>& concept_ids,
                                       std::size_t num_rounds, std::size_t shift_round,
                                       double switch_prob, std::uint64_t seed) {
  if (concept_ids.empty()) throw ConfigError("need at least one concept", "schedule");
  if (!(switch_prob >= 0.0 && switch_prob <= 1.0)) {
    throw ConfigError("switch_prob must lie in [0, 1]", "schedule.switch_prob");
  }
  if (shift_round == 0 || shift_round >= num_rounds) {
    throw ConfigError("shift_round must lie in [1, num_rounds)", "schedule.shift_round");
  }
  Rng rng = make_rng(seed, {stream::kSchedule});
  std::vector<std::size_t> order(num_clients);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> before(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) before[order[i]] = concept_ids[i % concept_ids.size()];

  std::vector<int> after = before;
  std::bernoulli_distribution flip(switch_prob);
  for (std::size_t k = 0; k < num_clients; ++k) {
    if (concept_ids.size() < 2) continue;
    if (!flip(rng)) continue;
    std::vector<int> others;
    for (int c : concept_ids)
      if (c != before[k]) others.push_back(c);
    std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
    after[k] = others[pick(rng)];
  }

  std::vector<std::vector<int>> table(num_rounds);
  for (std::size_t t = 0; t < num_rounds; ++t) table[t] = t < shift_round ? before : after;
  return ShiftSchedule(std::move(table));
}

ShiftSchedule schedule_from_table(const std::vector<std::vector<int>>& table,
                                  std::size_t rounds_per_stage,
                                  std::optional<std::size_t> num_rounds) {
  if (table.empty()) throw ConfigError("schedule table has no stages", "schedule.stages");
  if (rounds_per_stage == 0) {
    throw ConfigError("rounds_per_stage must be positive", "schedule.rounds_per_stage");
  }
  for (std::size_t s = 0; s < table.size(); ++s) {
    if (table[s].size() != table.front().size() || table[s].empty()) {
      throw ConfigError("schedule table is ragged at stage " + std::to_string(s), "schedule.stages");
    }
  }
  const std::size_t total = num_rounds.value_or(table.size() * rounds_per_stage);
  std::vector<std::vector<int>> rows(total);
  for (std::size_t t = 0; t < total; ++t) rows[t] = table[std::min(t / rounds_per_stage, table.size() - 1)];
  return ShiftSchedule(std::move(rows));
}

ShiftSchedule schedule_constant(const std::vector<int>& per_client, std::size_t num_rounds) {
  return ShiftSchedule(std::vector<std::vector<int>>(num_rounds, per_client));
}

}  // namespace hast
