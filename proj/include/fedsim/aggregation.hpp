#ifndef FEDSIM_AGGREGATION_HPP
#define FEDSIM_AGGREGATION_HPP

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// The per-round collection of uploads: ordered (client id, update) pairs plus
// the learning rate in force. Updates share dimension d; ids are unique.
struct ClientUpdateSet {
  int round = 0;
  std::vector<std::pair<int, Eigen::VectorXd>> updates;
  double eta = 0.0;

  int count() const { return static_cast<int>(updates.size()); }
  int dim() const { return updates.empty() ? 0 : static_cast<int>(updates.front().second.size()); }
  void validate() const;
};

struct AggregationOutcome {
  Eigen::VectorXd aggregate;
  std::vector<int> selected;  // client ids, ascending; never empty
  std::string rule;
  std::vector<double> scores;  // per-client diagnostics, input order
};

// Unweighted mean over all clients, summed in ascending client-id order.
AggregationOutcome fedavg(const ClientUpdateSet& updates);

// Per-coordinate median; even counts average the two middle values.
AggregationOutcome coordinate_median(const ClientUpdateSet& updates);

// Per coordinate, drops the `trim` smallest and largest values and averages
// the rest. Requires 2*trim < M.
AggregationOutcome trimmed_mean(const ClientUpdateSet& updates, int trim);

// Krum score: sum of squared distances to the M - A - 2 nearest neighbors;
// returns the single lowest-score update (ties -> lowest client id).
AggregationOutcome krum(const ClientUpdateSet& updates, int attacker_count);

// Runs Krum select-and-remove `select` times, rescoring on the shrinking
// set, and averages the selections. Requires select <= M - A - 2.
AggregationOutcome multi_krum(const ClientUpdateSet& updates, int attacker_count,
                              int select);

// Subsamples `subsample` coordinates, centers the rows, scores each client by
// its squared projection on the top right singular vector (power iteration;
// falls back to the largest-norm row direction after 100 non-converging
// steps), and keeps the M - floor(filter_factor*A) lowest scores.
AggregationOutcome dnc(const ClientUpdateSet& updates, int attacker_count,
                       double filter_factor, int subsample, RngStream& rng);

// Norm filter [0.1, 3.0] * median norm intersected with the larger sign-
// statistics cluster from 2-means over (frac+, frac-, frac0) features.
AggregationOutcome signguard(const ClientUpdateSet& updates, RngStream& rng);

// Accepts clients with ||g_ref - g_m|| <= phi * exp(-kappa * k/K) * ||g_ref||;
// falls back to the single closest client when nothing passes.
AggregationOutcome balance(const ClientUpdateSet& updates, const Eigen::VectorXd& reference,
                           double phi, double kappa, int round, int total_rounds);

// Orthonormal DCT-II per update, first ceil(d/4) coefficients, pairwise
// cosine distances, single-linkage clustering cut at the median distance;
// averages the largest cluster.
AggregationOutcome freqfed(const ClientUpdateSet& updates);

// Orthonormal DCT-II of a vector, truncated to the first `keep` coefficients.
Eigen::VectorXd dct2_truncated(const Eigen::VectorXd& x, int keep);

struct AggregationParams {
  std::string rule = "fedavg";
  int attacker_count = 1;
  int trim = 1;
  int multikrum_select = 2;
  double dnc_filter_factor = 1.0;
  int dnc_subsample = 1000;  // capped at d
  double balance_phi = 0.4;
  double balance_kappa = 1.0;
};

// Dispatch by rule name; `reference` is only consulted by balance.
AggregationOutcome aggregate(const ClientUpdateSet& updates, const AggregationParams& params,
                             const Eigen::VectorXd* reference, int total_rounds,
                             RngStream& rng);

}  // namespace fedsim

#endif  // FEDSIM_AGGREGATION_HPP
