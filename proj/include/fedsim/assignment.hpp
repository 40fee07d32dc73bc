#ifndef FEDSIM_ASSIGNMENT_HPP
#define FEDSIM_ASSIGNMENT_HPP

#include <Eigen/Dense>
#include <vector>

namespace fedsim {

// Minimum-cost bipartite assignment. `cost` is (n_rows, n_cols) with
// n_rows <= n_cols; returns for each row the matched column, all distinct.
// Exact Hungarian method (O(n^3)).
std::vector<int> hungarian_assignment(const Eigen::MatrixXd& cost);

// Greedy fallback for large instances: repeatedly picks the globally
// cheapest remaining (row, col) pair.
std::vector<int> greedy_assignment(const Eigen::MatrixXd& cost);

}  // namespace fedsim

#endif  // FEDSIM_ASSIGNMENT_HPP
