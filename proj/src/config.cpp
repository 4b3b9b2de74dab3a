#include "hast/config.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>

#include "hast/errors.hpp"

namespace hast {

using nlohmann::json;

namespace {

// Strict reader: every key must be consumed, otherwise the first leftover
// is reported as unknown.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + " must be an object", path_);
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = obj_.find(key);
    seen_.insert(key);
    if (it == obj_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError("wrong type for " + field(key), field(key));
    }
  }

  bool has(const char* key) const { return obj_.contains(key); }
  const json& at(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + field(it.key().c_str()), field(it.key().c_str()));
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

// Non-negative integer fields are read as signed first so "-1" is reported
// as a type error instead of wrapping.
void get_count(Reader& r, const char* key, std::size_t& out) {
  if (!r.has(key)) return;
  const json& v = r.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(r.field(key) + " must be a non-negative integer", r.field(key));
  }
  out = v.get<std::size_t>();
}

const char* kind_name(ConceptKind k) {
  switch (k) {
    case ConceptKind::covariate_rotation: return "covariate_rotation";
    case ConceptKind::label_subset: return "label_subset";
    case ConceptKind::label_swap: return "label_swap";
  }
  return "?";
}

ConceptKind parse_kind(const std::string& s, const std::string& field) {
  if (s == "covariate_rotation") return ConceptKind::covariate_rotation;
  if (s == "label_subset") return ConceptKind::label_subset;
  if (s == "label_swap") return ConceptKind::label_swap;
  throw ConfigError("unknown concept kind '" + s + "'", field);
}

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "fixed") return ScheduleKind::fixed;
  if (s == "switch_at_round") return ScheduleKind::switch_at_round;
  if (s == "table") return ScheduleKind::table;
  throw ConfigError("unknown schedule kind '" + s + "'", "schedule.kind");
}

json concept_to_json(const ConceptSpec& c) {
  json j{{"concept_id", c.concept_id}, {"kind", kind_name(c.kind)}};
  switch (c.kind) {
    case ConceptKind::covariate_rotation: j["angle"] = c.angle; break;
    case ConceptKind::label_subset: j["allowed"] = c.allowed; break;
    case ConceptKind::label_swap:
      j["base_concept"] = c.base_concept;
      j["swap"] = {c.swap.first, c.swap.second};
      break;
  }
  return j;
}

ConceptSpec concept_from_json(const json& j, std::size_t index) {
  const std::string path = "concepts[" + std::to_string(index) + "]";
  Reader r(j, path);
  ConceptSpec c;
  std::string kind = "label_subset";
  r.get("concept_id", c.concept_id);
  r.get("kind", kind);
  c.kind = parse_kind(kind, r.field("kind"));
  switch (c.kind) {
    case ConceptKind::covariate_rotation: r.get("angle", c.angle); break;
    case ConceptKind::label_subset: r.get("allowed", c.allowed); break;
    case ConceptKind::label_swap: {
      r.get("base_concept", c.base_concept);
      std::vector<int> swap{0, 1};
      r.get("swap", swap);
      if (swap.size() != 2) throw ConfigError(path + ".swap must hold two labels", path + ".swap");
      c.swap = {swap[0], swap[1]};
      break;
    }
  }
  r.finish();
  return c;
}

// ---- presets ---------------------------------------------------------------

constexpr std::size_t kPresetRounds = 150;
constexpr std::size_t kPresetShiftRound = 75;

ExperimentConfig preset_base(std::uint64_t seed, std::size_t num_clients) {
  ExperimentConfig c;
  c.seed = seed;
  c.num_clients = num_clients;
  c.num_rounds = kPresetRounds;
  // Few samples per client in a wider input space, so that collaboration
  // matters; at 200 samples every protocol solves the task alone.
  c.dataset.dim = 64;
  c.dataset.class_separation = 4.0;
  c.dataset.sizes.train = 50;
  c.protocol.lr = 0.1;
  return c;
}

ConceptSpec subset(int id, std::vector<int> allowed) {
  ConceptSpec c;
  c.concept_id = id;
  c.kind = ConceptKind::label_subset;
  c.allowed = std::move(allowed);
  return c;
}

ConceptSpec swap_of(int id, int base, int a, int b) {
  ConceptSpec c;
  c.concept_id = id;
  c.kind = ConceptKind::label_swap;
  c.base_concept = base;
  c.swap = {a, b};
  return c;
}

ConceptSpec rotation(int id, double angle) {
  ConceptSpec c;
  c.concept_id = id;
  c.kind = ConceptKind::covariate_rotation;
  c.angle = angle;
  return c;
}

std::vector<int> all_labels(std::size_t n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void switch_schedule(ExperimentConfig& c, double prob) {
  c.schedule.kind = ScheduleKind::switch_at_round;
  c.schedule.shift_round = kPresetShiftRound;
  c.schedule.switch_prob = prob;
}

// Stage rows built from per-concept client counts, filled in client order.
std::vector<int> stage_row(std::initializer_list<std::pair<int, std::size_t>> blocks) {
  std::vector<int> row;
  for (auto [concept_id, count] : blocks) row.insert(row.end(), count, concept_id);
  return row;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json concepts = json::array();
  for (const auto& cs : c.concepts) concepts.push_back(concept_to_json(cs));

  json schedule{{"kind", to_string(c.schedule.kind)}};
  switch (c.schedule.kind) {
    case ScheduleKind::fixed: break;
    case ScheduleKind::switch_at_round:
      schedule["shift_round"] = c.schedule.shift_round;
      schedule["switch_prob"] = c.schedule.switch_prob;
      break;
    case ScheduleKind::table:
      schedule["rounds_per_stage"] = c.schedule.rounds_per_stage;
      schedule["stages"] = c.schedule.stages;
      break;
  }

  const auto& p = c.protocol;
  return json{
      {"num_clients", c.num_clients},
      {"num_rounds", c.num_rounds},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"output_dir", c.output_dir},
      {"backward_accuracy", c.backward_accuracy},
      {"write_similarity", c.write_similarity},
      {"dataset",
       {{"source", c.dataset.source},
        {"num_classes", c.dataset.num_classes},
        {"dim", c.dataset.dim},
        {"class_separation", c.dataset.class_separation},
        {"sizes", {{"train", c.dataset.sizes.train}, {"val", c.dataset.sizes.val}, {"test", c.dataset.sizes.test}}},
        {"csv_path", c.dataset.csv_path},
        {"csv_has_header", c.dataset.csv_has_header}}},
      {"model", {{"hidden", c.model.hidden}, {"split_index", c.model.split_index}}},
      {"concepts", concepts},
      {"schedule", schedule},
      {"protocol",
       {{"protocol", to_string(p.protocol)},
        {"n", p.n},
        {"tau", p.tau},
        {"depth", p.depth},
        {"local_epochs", p.local_epochs},
        {"finetune_epochs", p.finetune_epochs},
        {"lr", p.lr},
        {"batch_size", p.batch_size},
        {"finetune_enabled", p.finetune_enabled},
        {"include_self", p.include_self},
        {"disjoint_stages", p.disjoint_stages},
        {"belief_decay", p.belief_decay}}},
  };
}

std::string config_to_json_string(const ExperimentConfig& config) {
  return config_to_json(config).dump(2);
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  Reader r(doc, "");
  get_count(r, "num_clients", c.num_clients);
  get_count(r, "num_rounds", c.num_rounds);
  if (r.has("seed")) {
    const json& s = r.at("seed");
    if (!s.is_number_unsigned()) {
      throw ConfigError("seed must be a non-negative integer", "seed");
    }
    c.seed = s.get<std::uint64_t>();
  }
  get_count(r, "eval_every", c.eval_every);
  r.get("output_dir", c.output_dir);
  r.get("backward_accuracy", c.backward_accuracy);
  r.get("write_similarity", c.write_similarity);

  if (r.has("dataset")) {
    Reader d(r.at("dataset"), "dataset");
    d.get("source", c.dataset.source);
    get_count(d, "num_classes", c.dataset.num_classes);
    get_count(d, "dim", c.dataset.dim);
    d.get("class_separation", c.dataset.class_separation);
    if (d.has("sizes")) {
      Reader s(d.at("sizes"), "dataset.sizes");
      get_count(s, "train", c.dataset.sizes.train);
      get_count(s, "val", c.dataset.sizes.val);
      get_count(s, "test", c.dataset.sizes.test);
      s.finish();
    }
    d.get("csv_path", c.dataset.csv_path);
    d.get("csv_has_header", c.dataset.csv_has_header);
    d.finish();
  }

  if (r.has("model")) {
    Reader m(r.at("model"), "model");
    m.get("hidden", c.model.hidden);
    get_count(m, "split_index", c.model.split_index);
    m.finish();
  }

  if (r.has("concepts")) {
    const json& arr = r.at("concepts");
    if (!arr.is_array()) throw ConfigError("concepts must be an array", "concepts");
    for (std::size_t i = 0; i < arr.size(); ++i) c.concepts.push_back(concept_from_json(arr[i], i));
  }

  if (r.has("schedule")) {
    Reader s(r.at("schedule"), "schedule");
    std::string kind = "fixed";
    s.get("kind", kind);
    c.schedule.kind = parse_schedule_kind(kind);
    get_count(s, "shift_round", c.schedule.shift_round);
    s.get("switch_prob", c.schedule.switch_prob);
    get_count(s, "rounds_per_stage", c.schedule.rounds_per_stage);
    s.get("stages", c.schedule.stages);
    s.finish();
  }

  if (r.has("protocol")) {
    Reader p(r.at("protocol"), "protocol");
    auto& pc = c.protocol;
    std::string name = to_string(pc.protocol);
    p.get("protocol", name);
    pc.protocol = parse_protocol(name);
    get_count(p, "n", pc.n);
    p.get("tau", pc.tau);
    get_count(p, "depth", pc.depth);
    get_count(p, "local_epochs", pc.local_epochs);
    get_count(p, "finetune_epochs", pc.finetune_epochs);
    p.get("lr", pc.lr);
    get_count(p, "batch_size", pc.batch_size);
    p.get("finetune_enabled", pc.finetune_enabled);
    p.get("include_self", pc.include_self);
    p.get("disjoint_stages", pc.disjoint_stages);
    p.get("belief_decay", pc.belief_decay);
    p.finish();
  }
  r.finish();
  return c;
}

json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string(), "config");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what(), "config");
  }
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value", "override");
  }
  std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  if (key.find('.') == std::string::npos && !doc.contains(key) && doc.contains("protocol") &&
      doc["protocol"].contains(key)) {
    key = "protocol." + key;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown key " + key, key);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

const std::vector<PresetInfo>& preset_catalog() {
  static const std::vector<PresetInfo> catalog{
      {"covariate_c4", "four rotated input domains, 3/4 of clients switch domain at round 75"},
      {"labelshift_c2", "label clusters {0..3} vs {4..7}, clients switch cluster at round 75"},
      {"labelshift_c2_random", "two random 4-label clusters, 50 clients, switch at round 75"},
      {"iid_c1", "single concept over all 8 labels, no shift"},
      {"labelswap_c2", "staged pattern: all clients on one concept, then half move to a label swap"},
      {"labelswap_c4", "staged pattern over the base concept and three disjoint label swaps"},
      {"labelswap_c4_random", "base concept and three label swaps, random assignment, 50 clients"},
  };
  return catalog;
}

ExperimentConfig make_preset(const std::string& name, std::uint64_t seed) {
  const std::size_t classes = 8;
  if (name == "iid_c1") {
    auto c = preset_base(seed, 20);
    c.concepts = {subset(0, all_labels(classes))};
    c.schedule.kind = ScheduleKind::fixed;
    return c;
  }
  if (name == "covariate_c4") {
    auto c = preset_base(seed, 20);
    const double q = std::numbers::pi / 2.0;
    c.concepts = {rotation(0, 0.0), rotation(1, q), rotation(2, 2 * q), rotation(3, 3 * q)};
    switch_schedule(c, 0.75);
    return c;
  }
  if (name == "labelshift_c2") {
    auto c = preset_base(seed, 20);
    c.concepts = {subset(0, {0, 1, 2, 3}), subset(1, {4, 5, 6, 7})};
    switch_schedule(c, 0.75);
    return c;
  }
  if (name == "labelshift_c2_random") {
    auto c = preset_base(seed, 50);
    Rng rng = make_rng(seed, {stream::kPreset});
    auto labels = all_labels(classes);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<int> a(labels.begin(), labels.begin() + 4);
    std::vector<int> b(labels.begin() + 4, labels.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    c.concepts = {subset(0, a), subset(1, b)};
    switch_schedule(c, 0.75);
    return c;
  }
  if (name == "labelswap_c2") {
    auto c = preset_base(seed, 20);
    c.concepts = {subset(0, all_labels(classes)), swap_of(1, 0, 0, 1)};
    c.schedule.kind = ScheduleKind::table;
    c.schedule.rounds_per_stage = kPresetShiftRound;
    c.schedule.stages = {stage_row({{0, 20}}), stage_row({{0, 10}, {1, 10}})};
    return c;
  }
  if (name == "labelswap_c4") {
    auto c = preset_base(seed, 20);
    c.concepts = {subset(0, all_labels(classes)), swap_of(1, 0, 0, 1), swap_of(2, 0, 2, 3),
                  swap_of(3, 0, 4, 5)};
    c.schedule.kind = ScheduleKind::table;
    c.schedule.rounds_per_stage = kPresetShiftRound;
    c.schedule.stages = {stage_row({{0, 10}, {1, 10}}), stage_row({{0, 5}, {2, 5}, {1, 5}, {3, 5}})};
    return c;
  }
  if (name == "labelswap_c4_random") {
    auto c = preset_base(seed, 50);
    c.concepts = {subset(0, all_labels(classes)), swap_of(1, 0, 0, 1), swap_of(2, 0, 2, 3),
                  swap_of(3, 0, 4, 5)};
    switch_schedule(c, 0.75);
    return c;
  }
  throw ConfigError("unknown preset '" + name + "'", "preset");
}

ExperimentConfig resolve_config(const ConfigRequest& req) {
  if (req.preset.has_value() == req.config_path.has_value()) {
    throw ConfigError("give exactly one of --preset or --config", "preset");
  }
  json doc = req.preset ? config_to_json(make_preset(*req.preset, req.seed.value_or(0)))
                        : load_config_json(*req.config_path);
  // Fill in defaults so overrides can address any field.
  doc = config_to_json(config_from_json(doc));
  if (req.seed) doc["seed"] = *req.seed;
  if (req.protocol) doc["protocol"]["protocol"] = *req.protocol;
  if (req.output_dir) doc["output_dir"] = *req.output_dir;
  for (const auto& o : req.overrides) apply_override(doc, o);
  ExperimentConfig c = config_from_json(doc);
  validate_experiment(c);
  return c;
}

std::string summary_to_json(const RunSummary& s, const ExperimentConfig& config) {
  json dips = json::array();
  for (const auto& d : s.dips) {
    dips.push_back({{"shift_round", d.shift_round},
                    {"pre_shift_accuracy", d.pre_shift_accuracy},
                    {"min_post_accuracy", d.min_post_accuracy},
                    {"dip", d.dip}});
  }
  json j{{"protocol", to_string(config.protocol.protocol)},
         {"seed", config.seed},
         {"mean_final_accuracy", s.mean_final_accuracy},
         {"mean_last10_accuracy", s.mean_last10_accuracy},
         {"shift_rounds", s.shift_rounds},
         {"dips", dips},
         {"post_shift_dip", s.post_shift_dip}};
  return j.dump(2);
}

}  // namespace hast
