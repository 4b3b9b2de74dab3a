// hastsim: command-line driver for the decentralized learning simulator.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "hast/config.hpp"
#include "hast/csv.hpp"
#include "hast/errors.hpp"
#include "hast/orchestrator.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct CommonFlags {
  std::string preset;
  std::string config;
  std::string protocol;
  std::string out;
  std::uint64_t seed = 0;
  std::vector<std::string> overrides;
  std::optional<std::size_t> n;
  std::optional<double> tau;
  std::optional<std::size_t> depth;
  std::optional<double> lr;
  bool print = false;
};

void add_source_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--preset", f.preset, "Built-in scenario preset");
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--override", f.overrides, "key=value (repeatable), e.g. protocol.tau=0.2");
  cmd->add_option("--n", f.n, "Peers per sampling stage");
  cmd->add_option("--tau", f.tau, "Softmax temperature");
  cmd->add_option("--depth", f.depth, "Layers averaged in the similarity stage");
  cmd->add_option("--lr", f.lr, "Local learning rate");
}

hast::ConfigRequest make_request(const CommonFlags& f, const CLI::App* cmd) {
  hast::ConfigRequest req;
  if (!f.preset.empty()) req.preset = f.preset;
  if (!f.config.empty()) req.config_path = f.config;
  if (const auto* opt = cmd->get_option_no_throw("--seed"); opt && opt->count() > 0) req.seed = f.seed;
  if (!f.protocol.empty()) req.protocol = f.protocol;
  if (!f.out.empty()) req.output_dir = f.out;
  req.overrides = f.overrides;
  auto num = [](auto v) {
    std::ostringstream s;
    s << v;
    return s.str();
  };
  if (f.n) req.overrides.push_back("protocol.n=" + num(*f.n));
  if (f.tau) req.overrides.push_back("protocol.tau=" + hast::csv::format_double(*f.tau));
  if (f.depth) req.overrides.push_back("protocol.depth=" + num(*f.depth));
  if (f.lr) req.overrides.push_back("protocol.lr=" + hast::csv::format_double(*f.lr));
  return req;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : hast::csv::split(s)) {
    if (!part.empty()) out.emplace_back(part);
  }
  return out;
}

int cmd_run(const CommonFlags& f, const CLI::App* cmd) {
  const auto config = hast::resolve_config(make_request(f, cmd));
  std::cout << hast::config_to_json_string(config) << '\n';
  try {
    const auto result = hast::run_experiment(config, &std::cerr);
    std::cout << hast::summary_to_json(result.summary, config) << '\n';
  } catch (const hast::ConfigError&) {
    throw;
  } catch (const hast::IngestionError&) {
    throw;  // unreadable dataset file: a config failure
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

struct MatrixFlags {
  std::string protocols = "hast,dac,random";
  std::string seeds = "0";
};

int cmd_matrix(const CommonFlags& f, const MatrixFlags& m, const CLI::App* cmd) {
  if (f.out.empty()) throw hast::ConfigError("matrix needs --out", "output_dir");
  const auto protocols = split_list(m.protocols);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(m.seeds)) {
    auto v = hast::csv::parse_int(s);
    if (!v || *v < 0) throw hast::ConfigError("bad seed '" + s + "'", "seeds");
    seeds.push_back(static_cast<std::uint64_t>(*v));
  }
  if (protocols.empty()) throw hast::ConfigError("need at least one protocol", "protocols");
  if (seeds.empty()) throw hast::ConfigError("need at least one seed", "seeds");

  // Resolve everything up front so config errors surface before any run.
  struct Job {
    std::string protocol;
    std::uint64_t seed;
    hast::ExperimentConfig config;
  };
  std::vector<Job> jobs;
  const std::filesystem::path root(f.out);
  for (const auto& p : protocols) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      CommonFlags g = f;
      g.protocol = p;
      g.seed = seeds[i];
      g.out = (root / ("run" + std::to_string(jobs.size()) + "_" + p + "_seed" + std::to_string(seeds[i]))).string();
      auto req = make_request(g, cmd);
      req.seed = seeds[i];
      jobs.push_back({p, seeds[i], hast::resolve_config(req)});
    }
  }

  std::filesystem::create_directories(root);
  std::ofstream runs(root / "runs.csv");
  runs << "protocol,seed,final_accuracy,last10_accuracy,post_shift_dip\n";
  std::map<std::string, std::vector<std::pair<double, double>>> by_protocol;
  for (const auto& job : jobs) {
    std::cerr << "== " << job.protocol << " seed " << job.seed << '\n';
    hast::RunResult result;
    try {
      result = hast::run_experiment(job.config, &std::cerr);
    } catch (const hast::ConfigError&) {
      throw;
    } catch (const hast::IngestionError&) {
      throw;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
    const auto& s = result.summary;
    runs << job.protocol << ',' << job.seed << ','
         << hast::csv::format_double(s.mean_final_accuracy) << ','
         << hast::csv::format_double(s.mean_last10_accuracy) << ','
         << hast::csv::format_double(s.post_shift_dip) << '\n';
    runs.flush();
    by_protocol[job.protocol].emplace_back(s.mean_final_accuracy, s.post_shift_dip);
  }

  auto mean_std = [](const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };
  std::ofstream table(root / "comparison.csv");
  table << "protocol,runs,final_accuracy_mean,final_accuracy_std,post_shift_dip_mean,post_shift_dip_std\n";
  for (const auto& p : protocols) {
    auto it = by_protocol.find(p);
    if (it == by_protocol.end()) continue;
    std::vector<double> acc, dip;
    for (auto [a, d] : it->second) {
      acc.push_back(a);
      dip.push_back(d);
    }
    const auto [am, as] = mean_std(acc);
    const auto [dm, ds] = mean_std(dip);
    table << p << ',' << acc.size() << ',' << hast::csv::format_double(am) << ','
          << hast::csv::format_double(as) << ',' << hast::csv::format_double(dm) << ','
          << hast::csv::format_double(ds) << '\n';
    by_protocol.erase(it);
  }
  std::cout << "wrote " << (root / "comparison.csv").string() << '\n';
  return 0;
}

int cmd_validate(const CommonFlags& f, const CLI::App* cmd) {
  try {
    const auto config = hast::resolve_config(make_request(f, cmd));
    std::cout << "valid: " << config.num_clients << " clients, " << config.num_rounds << " rounds, protocol "
              << hast::to_string(config.protocol.protocol) << '\n';
    if (f.print) std::cout << hast::config_to_json_string(config) << '\n';
    return 0;
  } catch (const hast::ConfigError& e) {
    std::cout << "invalid";
    if (!e.field().empty()) std::cout << " [" << e.field() << "]";
    std::cout << ": " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized learning simulator: HAST, DAC and random gossip under concept shift"};
  app.require_subcommand(1);

  CommonFlags flags;
  MatrixFlags matrix_flags;

  auto* run = app.add_subcommand("run", "Run one experiment");
  add_source_flags(run, flags);
  run->add_option("--protocol", flags.protocol, "random, dac or hast");
  run->add_option("--seed", flags.seed, "Global seed");
  run->add_option("--out", flags.out, "Output directory");

  auto* matrix = app.add_subcommand("matrix", "Run protocols x seeds and write comparison.csv");
  add_source_flags(matrix, flags);
  matrix->add_option("--protocols", matrix_flags.protocols, "Comma-separated protocols");
  matrix->add_option("--seeds", matrix_flags.seeds, "Comma-separated seeds");
  matrix->add_option("--out", flags.out, "Output directory")->required();

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  add_source_flags(validate, flags);
  validate->add_option("--protocol", flags.protocol, "random, dac or hast");
  validate->add_option("--seed", flags.seed, "Global seed");
  validate->add_flag("--print", flags.print, "Print the resolved config as JSON");

  auto* presets = app.add_subcommand("presets", "List built-in presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*presets) {
      for (const auto& p : hast::preset_catalog()) std::cout << p.name << "\t" << p.description << '\n';
      return 0;
    }
    if (*run) return cmd_run(flags, run);
    if (*matrix) return cmd_matrix(flags, matrix_flags, matrix);
    if (*validate) return cmd_validate(flags, validate);
  } catch (const hast::ConfigError& e) {
    std::cerr << "config error";
    if (!e.field().empty()) std::cerr << " [" << e.field() << "]";
    std::cerr << ": " << e.what() << '\n';
    return kExitConfig;
  } catch (const hast::IngestionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
