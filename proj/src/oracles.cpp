#include "fedsim/oracles.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <numeric>

#include "fedsim/errors.hpp"

namespace fedsim::oracle {

namespace {

double brute_krum_score(const std::vector<Eigen::VectorXd>& updates,
                        const std::vector<int>& members, int self, int neighbors) {
  std::vector<double> d2;
  for (const int j : members) {
    if (j == self) continue;
    d2.push_back((updates[static_cast<std::size_t>(self)] - updates[static_cast<std::size_t>(j)]).squaredNorm());
  }
  std::sort(d2.begin(), d2.end());
  double acc = 0.0;
  for (int i = 0; i < neighbors; ++i) acc += d2[static_cast<std::size_t>(i)];
  return acc;
}

int brute_krum_winner(const std::vector<Eigen::VectorXd>& updates,
                      const std::vector<int>& ids, const std::vector<int>& members,
                      int attacker_count) {
  const int m = static_cast<int>(members.size());
  const int neighbors = m - attacker_count - 2;
  if (neighbors < 1) throw ContractError("oracle: need |members| >= A + 3");
  int best = members.front();
  double best_score = brute_krum_score(updates, members, best, neighbors);
  for (const int i : members) {
    const double s = brute_krum_score(updates, members, i, neighbors);
    if (s < best_score ||
        (s == best_score && ids[static_cast<std::size_t>(i)] < ids[static_cast<std::size_t>(best)])) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

}  // namespace

int krum_winner(const std::vector<Eigen::VectorXd>& updates, const std::vector<int>& ids,
                int attacker_count) {
  std::vector<int> members(updates.size());
  std::iota(members.begin(), members.end(), 0);
  return brute_krum_winner(updates, ids, members, attacker_count);
}

std::vector<int> multi_krum_selection(const std::vector<Eigen::VectorXd>& updates,
                                      const std::vector<int>& ids, int attacker_count,
                                      int select) {
  std::vector<int> members(updates.size());
  std::iota(members.begin(), members.end(), 0);
  std::vector<int> chosen;
  for (int c = 0; c < select; ++c) {
    const int winner = brute_krum_winner(updates, ids, members, attacker_count);
    chosen.push_back(ids[static_cast<std::size_t>(winner)]);
    members.erase(std::find(members.begin(), members.end(), winner));
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<int> dnc_selection(const std::vector<Eigen::VectorXd>& updates,
                               const std::vector<int>& ids, int attacker_count,
                               double filter_factor, const std::vector<int>& coords) {
  const int m = static_cast<int>(updates.size());
  const int keep = m - static_cast<int>(std::floor(filter_factor * attacker_count));
  if (keep < 1) throw ContractError("oracle: dnc filter removes every client");
  Eigen::MatrixXd g(m, static_cast<Eigen::Index>(coords.size()));
  for (int i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < coords.size(); ++j) {
      g(i, static_cast<Eigen::Index>(j)) = updates[static_cast<std::size_t>(i)](coords[j]);
    }
  }
  const Eigen::RowVectorXd mean = g.colwise().mean();
  const Eigen::MatrixXd centered = g.rowwise() - mean;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd v = svd.matrixV().col(0);
  std::vector<std::pair<double, int>> scored;
  for (int i = 0; i < m; ++i) {
    const double proj = centered.row(i).dot(v);
    scored.emplace_back(proj * proj, ids[static_cast<std::size_t>(i)]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  std::vector<int> selected;
  for (int i = 0; i < keep; ++i) selected.push_back(scored[static_cast<std::size_t>(i)].second);
  std::sort(selected.begin(), selected.end());
  return selected;
}

}  // namespace fedsim::oracle
