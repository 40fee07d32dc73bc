#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fedsim/errors.hpp"
#include "fedsim/harness.hpp"
#include "fedsim/oracles.hpp"

namespace {

using fedsim::ConfigError;
using fedsim::ContractError;
using fedsim::IoError;
using fedsim::NumericError;

int run_command(const std::string& config_path, int seed_override, int seeds,
                const std::string& out_override, int threads_override) {
  fedsim::KeyValueConfig kv = config_path.empty() ? fedsim::KeyValueConfig::parse_string("")
                                                  : fedsim::KeyValueConfig::parse_file(config_path);
  fedsim::ExperimentConfig base = fedsim::ExperimentConfig::from_config(kv);
  if (seed_override >= 0) base.seed = static_cast<std::uint64_t>(seed_override);
  if (!out_override.empty()) base.out_dir = out_override;
  if (threads_override > 0) base.threads = threads_override;

  double acc_sum = 0.0;
  int failures = 0;
  for (int s = 0; s < seeds; ++s) {
    fedsim::ExperimentConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(s);
    if (seeds > 1) {
      cfg.out_dir = (std::filesystem::path(base.out_dir) /
                     ("seed_" + std::to_string(cfg.seed)))
                        .string();
    }
    const fedsim::ExperimentResult result = fedsim::run_experiment(cfg);
    fedsim::emit_outputs(cfg, result);
    acc_sum += result.final_accuracy;
    std::cout << "seed " << cfg.seed << ": rounds=" << result.metrics.size()
              << " final_acc=" << result.final_accuracy;
    if (!result.metrics.empty() && std::isfinite(result.metrics.back().rmse_mean)) {
      std::cout << " rmse=" << result.metrics.back().rmse_mean;
    }
    std::cout << " -> " << cfg.out_dir << "\n";
    if (result.failed_round >= 0) {
      ++failures;
      std::cerr << "run aborted at round " << result.failed_round << ": " << result.failure
                << "\n";
    }
  }
  if (seeds > 1) std::cout << "mean final accuracy: " << acc_sum / seeds << "\n";
  return failures == 0 ? 0 : 3;
}

int oracle_command(const std::string& rule, const std::string& input_path, int attackers,
                   int select, double filter) {
  std::ifstream f(input_path);
  if (!f) throw IoError("cannot open oracle input: " + input_path);
  nlohmann::json in;
  f >> in;
  std::vector<Eigen::VectorXd> updates;
  for (const auto& row : in.at("updates")) {
    Eigen::VectorXd u(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) u(static_cast<Eigen::Index>(i)) = row[i].get<double>();
    updates.push_back(std::move(u));
  }
  std::vector<int> ids;
  if (in.contains("ids")) {
    for (const auto& v : in["ids"]) ids.push_back(v.get<int>());
  } else {
    for (std::size_t i = 0; i < updates.size(); ++i) ids.push_back(static_cast<int>(i) + 1);
  }
  if (in.contains("attackers")) attackers = in["attackers"].get<int>();

  nlohmann::json out;
  out["rule"] = rule;
  if (rule == "krum") {
    const int w = fedsim::oracle::krum_winner(updates, ids, attackers);
    out["selected"] = {ids[static_cast<std::size_t>(w)]};
  } else if (rule == "multikrum") {
    out["selected"] = fedsim::oracle::multi_krum_selection(updates, ids, attackers, select);
  } else if (rule == "dnc") {
    std::vector<int> coords;
    for (Eigen::Index i = 0; i < updates.front().size(); ++i) coords.push_back(static_cast<int>(i));
    out["selected"] = fedsim::oracle::dnc_selection(updates, ids, attackers, filter, coords);
  } else {
    throw ConfigError("oracle: unknown aggregator '" + rule + "' (krum|multikrum|dnc)");
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int inspect_command(const std::string& csv_path) {
  std::ifstream f(csv_path);
  if (!f) throw IoError("cannot open " + csv_path);
  std::string header;
  if (!std::getline(f, header)) throw IoError("empty metrics file: " + csv_path);
  if (header != fedsim::metrics_csv_header()) {
    throw ConfigError("unexpected metrics.csv header: " + header);
  }
  int rows = 0;
  double final_acc = 0.0;
  double rmse_min = std::numeric_limits<double>::infinity();
  double rmse_max = -std::numeric_limits<double>::infinity();
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    ++rows;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 10) throw ConfigError("malformed metrics row: " + line);
    final_acc = std::stod(fields[2]);
    const double rmse = std::stod(fields[3]);
    if (std::isfinite(rmse)) {
      rmse_min = std::min(rmse_min, rmse);
      rmse_max = std::max(rmse_max, rmse);
    }
  }
  std::cout << "rounds: " << rows << "\n";
  std::cout << "final test accuracy: " << final_acc << "\n";
  if (std::isfinite(rmse_min)) {
    std::cout << "rmse range: [" << rmse_min << ", " << rmse_max << "]\n";
  } else {
    std::cout << "rmse range: (no reconstruction rounds)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated-learning simulator with a maliciously curious client"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string config_path;
  int seed = -1;
  int seeds = 1;
  std::string out_dir;
  int threads = 0;
  run->add_option("--config", config_path, "Config file (key = value with [sections])");
  run->add_option("--seed", seed, "Override the base seed");
  run->add_option("--seeds", seeds, "Repeat over this many consecutive seeds")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "Override the output directory");
  run->add_option("--threads", threads, "Worker threads (results are thread-count invariant)");

  auto* oracle = app.add_subcommand("oracle", "Brute-force aggregation oracles (for verification)");
  std::string oracle_rule;
  std::string oracle_input;
  int oracle_attackers = 1;
  int oracle_select = 2;
  double oracle_filter = 1.0;
  oracle->add_option("aggregator", oracle_rule, "krum|multikrum|dnc")->required();
  oracle->add_option("--input", oracle_input, "JSON file with {\"updates\": [[...]], ...}")->required();
  oracle->add_option("--attackers", oracle_attackers, "Assumed attacker count A");
  oracle->add_option("--select", oracle_select, "Multi-Krum selection count");
  oracle->add_option("--filter", oracle_filter, "DnC filter factor");

  auto* inspect = app.add_subcommand("inspect", "Summarize a metrics.csv");
  std::string inspect_path;
  inspect->add_option("metrics", inspect_path, "Path to metrics.csv")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_path, seed, seeds, out_dir, threads);
    if (oracle->parsed()) return oracle_command(oracle_rule, oracle_input, oracle_attackers, oracle_select, oracle_filter);
    if (inspect->parsed()) return inspect_command(inspect_path);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
