#ifndef FEDSIM_ORACLES_HPP
#define FEDSIM_ORACLES_HPP

#include <Eigen/Dense>
#include <vector>

namespace fedsim::oracle {

// Reference implementations kept deliberately independent of the production
// aggregation code paths: straightforward exhaustive recomputation, and full
// SVD instead of power iteration. They exist so the fast paths can be checked
// against them (tests, and the `oracle` CLI subcommand).

// Index (not id) of the Krum winner by brute-force score recomputation.
int krum_winner(const std::vector<Eigen::VectorXd>& updates,
                const std::vector<int>& ids, int attacker_count);

// Ids selected by Multi-Krum via repeated brute-force Krum on shrinking sets.
std::vector<int> multi_krum_selection(const std::vector<Eigen::VectorXd>& updates,
                                      const std::vector<int>& ids, int attacker_count,
                                      int select);

// Ids kept by DnC using a dense full SVD of the centered matrix over the
// given coordinate subset (sign of the singular vector cannot matter: scores
// are squared projections).
std::vector<int> dnc_selection(const std::vector<Eigen::VectorXd>& updates,
                               const std::vector<int>& ids, int attacker_count,
                               double filter_factor, const std::vector<int>& coords);

}  // namespace fedsim::oracle

#endif  // FEDSIM_ORACLES_HPP
