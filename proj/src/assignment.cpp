#include "fedsim/assignment.hpp"

#include <algorithm>
#include <limits>

#include "fedsim/errors.hpp"

namespace fedsim {

// Classic potentials formulation (Kuhn-Munkres). Rows are workers, columns
// jobs; 1-indexed internal arrays, column 0 is the virtual source.
std::vector<int> hungarian_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw ContractError("hungarian_assignment: needs rows <= cols");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(m) + 1, 0);  // col -> row
  std::vector<int> way(static_cast<std::size_t>(m) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(m) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (match[static_cast<std::size_t>(j)] > 0) row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return row_to_col;
}

std::vector<int> greedy_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw ContractError("greedy_assignment: needs rows <= cols");
  struct Entry {
    double c;
    int r;
    int col;
  };
  std::vector<Entry> entries;
  entries.reserve(static_cast<std::size_t>(n) * m);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < m; ++c) entries.push_back({cost(r, c), r, c});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.c != b.c) return a.c < b.c;
    if (a.r != b.r) return a.r < b.r;
    return a.col < b.col;
  });
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  std::vector<char> col_used(static_cast<std::size_t>(m), 0);
  int assigned = 0;
  for (const Entry& e : entries) {
    if (assigned == n) break;
    if (row_to_col[static_cast<std::size_t>(e.r)] != -1 || col_used[static_cast<std::size_t>(e.col)]) continue;
    row_to_col[static_cast<std::size_t>(e.r)] = e.col;
    col_used[static_cast<std::size_t>(e.col)] = 1;
    ++assigned;
  }
  return row_to_col;
}

}  // namespace fedsim
