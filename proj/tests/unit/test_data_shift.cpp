#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "hast/data_shift.hpp"
#include "hast/errors.hpp"

using namespace hast;

namespace {

std::vector<ConceptSpec> swap_concepts() {
  ConceptSpec base;
  base.concept_id = 0;
  base.kind = ConceptKind::label_subset;
  base.allowed = {0, 1, 2, 3, 4, 5, 6, 7};
  ConceptSpec sw;
  sw.concept_id = 1;
  sw.kind = ConceptKind::label_swap;
  sw.swap = {0, 1};
  sw.base_concept = 0;
  return {base, sw};
}

ConceptSpec rotation(int id, double angle) {
  ConceptSpec c;
  c.concept_id = id;
  c.kind = ConceptKind::covariate_rotation;
  c.angle = angle;
  return c;
}

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST_CASE("blob universe geometry") {
  const auto u = make_blob_universe(8, 16, 4.0, 3);
  REQUIRE(u.means.rows() == 8);
  REQUIRE(u.means.cols() == 16);
  for (Eigen::Index i = 0; i < 8; ++i) {
    CHECK(u.means.row(i).norm() == doctest::Approx(4.0));
    for (Eigen::Index j = i + 1; j < 8; ++j) CHECK((u.means.row(i) - u.means.row(j)).norm() >= 4.0);
  }
  const auto again = make_blob_universe(8, 16, 4.0, 3);
  CHECK(again.means == u.means);
  CHECK(make_blob_universe(8, 16, 4.0, 4).means != u.means);

  CHECK_THROWS_AS(make_blob_universe(1, 16, 4.0, 0), ConfigError);
  CHECK_THROWS_AS(make_blob_universe(8, 16, 0.0, 0), ConfigError);
  // 40 points on a 2-D circle cannot be pairwise radius apart.
  CHECK_THROWS_AS(make_blob_universe(40, 2, 1.0, 0), GenerationError);
}

TEST_CASE("well separated blobs are nearly linearly separable") {
  const DataSource src = make_blob_universe(8, 16, 6.0, 1);
  ConceptSpec all;
  all.allowed = {0, 1, 2, 3, 4, 5, 6, 7};
  const auto ds = sample_concept_dataset(src, {all}, 0, {200, 50, 1000}, 9);
  const auto& means = std::get<BlobUniverse>(src).means;
  // Nearest-mean classifier as the oracle.
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < ds.test.inputs.rows(); ++r) {
    Eigen::Index best = 0;
    (means.rowwise() - ds.test.inputs.row(r)).rowwise().squaredNorm().minCoeff(&best);
    if (best == ds.test.labels[static_cast<std::size_t>(r)]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.test.size()) >= 0.95);
}

TEST_CASE("concept sampling") {
  const DataSource src = make_blob_universe(8, 16, 4.0, 1);

  SUBCASE("split sizes and determinism") {
    const auto concepts = swap_concepts();
    const auto a = sample_concept_dataset(src, concepts, 0, {20, 5, 30}, 7);
    CHECK(a.train.size() == 20);
    CHECK(a.val.size() == 5);
    CHECK(a.test.size() == 30);
    CHECK(a.concept_id == 0);
    const auto b = sample_concept_dataset(src, concepts, 0, {20, 5, 30}, 7);
    CHECK(a.train.inputs == b.train.inputs);
    CHECK(a.train.labels == b.train.labels);
    const auto c = sample_concept_dataset(src, concepts, 0, {20, 5, 30}, 8);
    CHECK(a.train.inputs != c.train.inputs);
  }

  SUBCASE("label subset only emits allowed labels") {
    ConceptSpec c;
    c.allowed = {4, 5, 6, 7};
    const auto ds = sample_concept_dataset(src, {c}, 0, {500, 5, 5}, 1);
    std::set<int> seen(ds.train.labels.begin(), ds.train.labels.end());
    CHECK(seen == std::set<int>{4, 5, 6, 7});
  }

  SUBCASE("label swap shares base inputs bit-exactly and swaps labels") {
    const auto concepts = swap_concepts();
    const auto base = sample_concept_dataset(src, concepts, 0, {300, 10, 10}, 5);
    const auto sw = sample_concept_dataset(src, concepts, 1, {300, 10, 10}, 5);
    CHECK(base.train.inputs == sw.train.inputs);
    for (std::size_t i = 0; i < base.train.size(); ++i) {
      const int y = base.train.labels[i];
      const int want = y == 0 ? 1 : y == 1 ? 0 : y;
      CHECK(sw.train.labels[i] == want);
    }
  }

  SUBCASE("a swap applied twice is the identity") {
    auto concepts = swap_concepts();
    ConceptSpec back;
    back.concept_id = 2;
    back.kind = ConceptKind::label_swap;
    back.swap = {0, 1};
    back.base_concept = 1;
    concepts.push_back(back);
    const auto base = sample_concept_dataset(src, concepts, 0, {100, 10, 10}, 5);
    const auto twice = sample_concept_dataset(src, concepts, 2, {100, 10, 10}, 5);
    CHECK(base.train.labels == twice.train.labels);
    CHECK(base.train.inputs == twice.train.inputs);
  }

  SUBCASE("rotation by zero is the identity and rotations preserve distances") {
    const auto plain = sample_concept_dataset(src, {rotation(0, 0.0)}, 0, {50, 5, 5}, 3);
    Matrix x = plain.train.inputs;
    rotate_inputs(x, 0.0);
    CHECK(x == plain.train.inputs);

    rotate_inputs(x, 1.1);
    for (Eigen::Index i = 0; i + 1 < x.rows(); ++i) {
      const double before = (plain.train.inputs.row(i) - plain.train.inputs.row(i + 1)).norm();
      const double after = (x.row(i) - x.row(i + 1)).norm();
      CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
    CHECK(x.rightCols(14) == plain.train.inputs.rightCols(14));
  }

  SUBCASE("a half-turn negates the first two coordinates") {
    const auto concepts = std::vector<ConceptSpec>{rotation(0, 0.0), rotation(1, std::numbers::pi)};
    const auto a = sample_concept_dataset(src, concepts, 0, {30, 5, 5}, 3);
    const auto b = sample_concept_dataset(src, concepts, 1, {30, 5, 5}, 3);
    CHECK(a.train.labels == b.train.labels);
    for (Eigen::Index r = 0; r < a.train.inputs.rows(); ++r) {
      CHECK(b.train.inputs(r, 0) == doctest::Approx(-a.train.inputs(r, 0)).epsilon(1e-12));
      CHECK(b.train.inputs(r, 1) == doctest::Approx(-a.train.inputs(r, 1)).epsilon(1e-12));
      CHECK(b.train.inputs(r, 5) == a.train.inputs(r, 5));
    }
  }

  SUBCASE("bad requests") {
    CHECK_THROWS_AS(sample_concept_dataset(src, swap_concepts(), 9, {10, 1, 1}, 0), ConfigError);
    CHECK_THROWS_AS(sample_concept_dataset(src, swap_concepts(), 0, {0, 1, 1}, 0), ConfigError);
  }
}

TEST_CASE("validate_concepts") {
  CHECK_NOTHROW(validate_concepts(swap_concepts(), 8));

  auto cyc = swap_concepts();
  cyc[0] = cyc[1];
  cyc[0].concept_id = 0;
  cyc[0].base_concept = 1;
  CHECK_THROWS_AS(validate_concepts(cyc, 8), ConfigError);

  ConceptSpec bad_label;
  bad_label.allowed = {0, 8};
  CHECK_THROWS_AS(validate_concepts({bad_label}, 8), ConfigError);

  ConceptSpec empty;
  empty.allowed = {};
  CHECK_THROWS_AS(validate_concepts({empty}, 8), ConfigError);

  CHECK_THROWS_AS(validate_concepts({rotation(0, 7.0)}, 8), ConfigError);

  auto same = swap_concepts();
  same[1].swap = {2, 2};
  CHECK_THROWS_AS(validate_concepts(same, 8), ConfigError);

  auto dup = swap_concepts();
  dup[1].concept_id = 0;
  CHECK_THROWS_AS(validate_concepts(dup, 8), ConfigError);
}

TEST_CASE("switch-at-round schedule") {
  const auto s = schedule_switch_at_round(20, {0, 1}, 150, 75, 0.75, 4);
  CHECK(s.num_rounds() == 150);
  CHECK(s.num_clients() == 20);
  CHECK(s.shift_rounds() == std::vector<std::size_t>{75});

  int zeros = 0;
  for (std::size_t k = 0; k < 20; ++k) zeros += s.concept_at(0, k) == 0;
  CHECK(zeros == 10);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(s.concept_at(74, k) == s.concept_at(0, k));
    CHECK(s.concept_at(149, k) == s.concept_at(75, k));
    CHECK(s.changed(75, k) == (s.concept_at(75, k) != s.concept_at(74, k)));
    CHECK_FALSE(s.changed(0, k));
  }

  SUBCASE("switch probability 0 and 1") {
    const auto none = schedule_switch_at_round(20, {0, 1}, 10, 5, 0.0, 1);
    CHECK(none.shift_rounds().empty());
    const auto all = schedule_switch_at_round(20, {0, 1, 2, 3}, 10, 5, 1.0, 1);
    for (std::size_t k = 0; k < 20; ++k) CHECK(all.changed(5, k));
  }

  SUBCASE("expected number of switchers") {
    double total = 0.0;
    const int trials = 10000;
    for (int seed = 0; seed < trials; ++seed) {
      const auto t = schedule_switch_at_round(20, {0, 1}, 2, 1, 0.75, static_cast<std::uint64_t>(seed));
      for (std::size_t k = 0; k < 20; ++k) total += t.changed(1, k);
    }
    CHECK(std::abs(total / trials - 15.0) <= 0.15);
  }

  CHECK_THROWS_AS(schedule_switch_at_round(20, {0, 1}, 150, 0, 0.75, 0), ConfigError);
  CHECK_THROWS_AS(schedule_switch_at_round(20, {0, 1}, 150, 150, 0.75, 0), ConfigError);
  CHECK_THROWS_AS(schedule_switch_at_round(20, {0, 1}, 150, 75, 1.5, 0), ConfigError);
}

TEST_CASE("table schedules") {
  const std::vector<std::vector<int>> table{{0, 0, 0}, {0, 1, 1}, {2, 1, 0}};
  const auto s = schedule_from_table(table, 4);
  CHECK(s.num_rounds() == 12);
  CHECK(s.round_assignment(3) == table[0]);
  CHECK(s.round_assignment(4) == table[1]);
  CHECK(s.round_assignment(11) == table[2]);
  CHECK(s.shift_rounds() == std::vector<std::size_t>{4, 8});
  CHECK_FALSE(s.changed(4, 0));
  CHECK(s.changed(4, 1));

  const auto longer = schedule_from_table(table, 4, 20);
  CHECK(longer.num_rounds() == 20);
  CHECK(longer.round_assignment(19) == table[2]);

  CHECK_THROWS_AS(schedule_from_table({}, 4), ConfigError);
  CHECK_THROWS_AS(schedule_from_table(table, 0), ConfigError);
  CHECK_THROWS_AS(schedule_from_table({{0, 1}, {0}}, 4), ConfigError);

  const auto c = schedule_constant({1, 0}, 5);
  CHECK(c.shift_rounds().empty());
  CHECK(c.concept_at(4, 0) == 1);
}

TEST_CASE("CSV ingestion") {
  SUBCASE("round trip") {
    Batch b;
    b.inputs.resize(3, 2);
    b.inputs << 0.5, -1.25, 3.0, 1e-3, 2.0, 0.1;
    b.labels = {2, 0, 1};
    const auto p = std::filesystem::temp_directory_path() / "hast_roundtrip.csv";
    export_csv_dataset(p, b);
    const auto pool = ingest_csv_dataset(p, 3);
    CHECK(pool.samples.inputs == b.inputs);
    CHECK(pool.samples.labels == b.labels);
    CHECK(source_dim(DataSource{pool}) == 2);
    CHECK(source_num_classes(DataSource{pool}) == 3);
  }

  SUBCASE("header row") {
    const auto p = temp_file("hast_header.csv", "a,b,label\n1,2,0\n3,4,1\n");
    CHECK(ingest_csv_dataset(p, 2, true).samples.size() == 2);
    CHECK_THROWS_AS(ingest_csv_dataset(p, 2, false), IngestionError);
  }

  SUBCASE("errors carry the line number") {
    auto expect_line = [](const std::string& body, std::size_t line, std::size_t classes = 3) {
      const auto p = temp_file("hast_bad.csv", body);
      try {
        ingest_csv_dataset(p, classes);
        FAIL("expected an ingestion error");
      } catch (const IngestionError& e) {
        CHECK(e.line() == line);
        CHECK(std::string(e.what()).rfind("line " + std::to_string(line), 0) == 0);
      }
    };
    expect_line("1,2,0\n1,2\n", 2);
    expect_line("1,2,0\n1,x,1\n", 2);
    expect_line("1,2,0\n1,2,0.5\n", 2);
    expect_line("1,2,0\n3,4,1\n5,6,7\n", 3);
    expect_line("", 0);
    CHECK_THROWS_AS(ingest_csv_dataset("/nonexistent/data.csv", 3), IngestionError);
  }

  SUBCASE("CSV concept splits are disjoint") {
    Batch b;
    b.inputs.resize(60, 2);
    for (Eigen::Index r = 0; r < 60; ++r) {
      b.inputs(r, 0) = static_cast<double>(r);
      b.inputs(r, 1) = 0.0;
    }
    for (int r = 0; r < 60; ++r) b.labels.push_back(r % 3);
    const auto p = std::filesystem::temp_directory_path() / "hast_pool.csv";
    export_csv_dataset(p, b);
    const DataSource src = ingest_csv_dataset(p, 3);
    ConceptSpec c;
    c.allowed = {0, 1, 2};
    const auto ds = sample_concept_dataset(src, {c}, 0, {30, 10, 20}, 1);
    std::set<double> seen;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
      for (Eigen::Index r = 0; r < split->inputs.rows(); ++r) CHECK(seen.insert(split->inputs(r, 0)).second);
    CHECK(seen.size() == 60);
  }
}
