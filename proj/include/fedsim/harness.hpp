#ifndef FEDSIM_HARNESS_HPP
#define FEDSIM_HARNESS_HPP

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "fedsim/adversary.hpp"
#include "fedsim/aggregation.hpp"
#include "fedsim/config.hpp"
#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/privacy.hpp"

namespace fedsim {

struct ExperimentConfig {
  // Data: either IDX files or the built-in synthetic generator.
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  bool synthetic = true;
  int synthetic_train = 2048;
  int synthetic_test = 512;
  int image_rows = 28;
  int image_cols = 28;
  int downsample_k = 2;

  // Federation.
  int clients = 4;        // M
  int rounds = 10;        // K
  int local_steps = 1;    // tau
  int batch = 4;          // B
  double eta = 0.05;
  double alpha = 0.1;     // Dirichlet concentration
  int per_client = 0;     // N_m; 0 derives floor(available / M)
  std::uint64_t seed = 1;

  ModelSpec model;  // input_dim filled from data geometry when 0
  AggregationParams aggregation;
  int balance_reference_size = 200;
  DpConfig dp;

  AttackConfig attack;
  int attacker_id = 1;        // 1-based client id
  std::vector<int> victims;   // empty = every benign client

  // Bound diagnostics (constant estimation costs a few mini-inversions).
  bool estimate_bound = true;
  int bound_probes = 4;

  std::string out_dir = "out";
  bool measure_wall_time = true;
  int threads = 1;

  static ExperimentConfig from_config(const KeyValueConfig& kv);
  void validate() const;
};

struct RoundMetrics {
  int round = 0;
  double train_loss = 0.0;   // f(w^k) over the union of client data
  double test_acc = 0.0;     // accuracy of w^{k+1}
  double rmse_mean = std::numeric_limits<double>::quiet_NaN();
  double rmse_std = std::numeric_limits<double>::quiet_NaN();
  std::string surrogate_q;   // empty when no reconstruction ran this round
  std::vector<int> selected_ids;
  bool attacker_selected = false;
  double bound_value = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

struct ExperimentResult {
  std::vector<RoundMetrics> metrics;
  std::vector<double> loss_trace;  // f(w^0) .. f(w^K)
  double final_accuracy = 0.0;
  double nominal_epsilon = std::numeric_limits<double>::infinity();
  struct BoundDiagnostics {
    bool available = false;
    double lipschitz_grad = 0.0;
    double lipschitz_recon = 0.0;
    double base_error = 0.0;
    double data_norm = 0.0;
    bool equal_norm_violated = false;
  } bound;
  int failed_round = -1;       // round whose failure aborted the run, else -1
  std::string failure;
};

// Accuracy under argmax with ties resolved to the lowest class index.
double evaluate_model(const ModelSpec& spec, const ParamVector& params,
                      const Dataset& test);

// The full FL round loop per the configured protocol. Deterministic for a
// fixed (config, seed) regardless of `threads`.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// metrics.csv (fixed schema), summary.json, rmse_vs_rounds.svg,
// accuracy_vs_rounds.svg under cfg.out_dir.
void emit_outputs(const ExperimentConfig& cfg, const ExperimentResult& result);

// Write-probe for the output directory; throws IoError before any round runs.
void preflight_out_dir(const std::string& out_dir);

std::string metrics_csv_header();
std::string metrics_csv_row(const RoundMetrics& m);

}  // namespace fedsim

#endif  // FEDSIM_HARNESS_HPP
