#include "fedsim/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

void ClientUpdateSet::validate() const {
  if (updates.empty()) throw ContractError("ClientUpdateSet: no updates");
  std::set<int> ids;
  for (const auto& [id, u] : updates) {
    if (u.size() != dim()) throw ContractError("ClientUpdateSet: dimension mismatch");
    if (!ids.insert(id).second) throw ContractError("ClientUpdateSet: duplicate client id");
  }
}

namespace {

// Mean over a subset of clients, accumulated in ascending client-id order so
// the result is independent of input permutation.
AggregationOutcome mean_over(const ClientUpdateSet& updates, std::vector<int> selected,
                             std::string rule, std::vector<double> scores = {}) {
  std::sort(selected.begin(), selected.end());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(updates.dim());
  for (const int id : selected) {
    const auto it = std::find_if(updates.updates.begin(), updates.updates.end(),
                                 [&](const auto& p) { return p.first == id; });
    if (it == updates.updates.end()) throw ContractError("aggregation: unknown selected id");
    acc += it->second;
  }
  AggregationOutcome out;
  out.aggregate = acc / static_cast<double>(selected.size());
  out.selected = std::move(selected);
  out.rule = std::move(rule);
  out.scores = std::move(scores);
  return out;
}

std::vector<int> all_ids(const ClientUpdateSet& updates) {
  std::vector<int> ids;
  ids.reserve(updates.updates.size());
  for (const auto& [id, u] : updates.updates) ids.push_back(id);
  return ids;
}

}  // namespace

AggregationOutcome fedavg(const ClientUpdateSet& updates) {
  updates.validate();
  return mean_over(updates, all_ids(updates), "fedavg");
}

AggregationOutcome coordinate_median(const ClientUpdateSet& updates) {
  updates.validate();
  const int m = updates.count();
  AggregationOutcome out;
  out.rule = "median";
  out.selected = all_ids(updates);
  std::sort(out.selected.begin(), out.selected.end());
  out.aggregate.resize(updates.dim());
  std::vector<double> column(static_cast<std::size_t>(m));
  for (int j = 0; j < updates.dim(); ++j) {
    for (int i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = updates.updates[static_cast<std::size_t>(i)].second(j);
    std::sort(column.begin(), column.end());
    out.aggregate(j) = (m % 2 == 1)
                           ? column[static_cast<std::size_t>(m / 2)]
                           : 0.5 * (column[static_cast<std::size_t>(m / 2 - 1)] + column[static_cast<std::size_t>(m / 2)]);
  }
  return out;
}

AggregationOutcome trimmed_mean(const ClientUpdateSet& updates, int trim) {
  updates.validate();
  const int m = updates.count();
  if (trim < 0 || 2 * trim >= m) throw ConfigError("trimmed_mean: need 2*trim < M");
  AggregationOutcome out;
  out.rule = "trimmed_mean";
  out.selected = all_ids(updates);
  std::sort(out.selected.begin(), out.selected.end());
  out.aggregate.resize(updates.dim());
  std::vector<double> column(static_cast<std::size_t>(m));
  for (int j = 0; j < updates.dim(); ++j) {
    for (int i = 0; i < m; ++i) column[static_cast<std::size_t>(i)] = updates.updates[static_cast<std::size_t>(i)].second(j);
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (int i = trim; i < m - trim; ++i) acc += column[static_cast<std::size_t>(i)];
    out.aggregate(j) = acc / static_cast<double>(m - 2 * trim);
  }
  return out;
}

namespace {

// Krum scores for the given subset (positions into updates.updates).
// Neighbor count is |subset| - A - 2.
std::vector<double> krum_scores(const ClientUpdateSet& updates, const std::vector<int>& positions,
                                int attacker_count) {
  const int m = static_cast<int>(positions.size());
  const int neighbors = m - attacker_count - 2;
  if (neighbors < 1) throw ConfigError("krum: need M >= A + 3");
  Eigen::MatrixXd dist2(m, m);
  for (int i = 0; i < m; ++i) {
    dist2(i, i) = 0.0;
    for (int j = i + 1; j < m; ++j) {
      const double d2 = (updates.updates[static_cast<std::size_t>(positions[static_cast<std::size_t>(i)])].second -
                         updates.updates[static_cast<std::size_t>(positions[static_cast<std::size_t>(j)])].second)
                            .squaredNorm();
      dist2(i, j) = d2;
      dist2(j, i) = d2;
    }
  }
  std::vector<double> scores(static_cast<std::size_t>(m));
  std::vector<double> row(static_cast<std::size_t>(m - 1));
  for (int i = 0; i < m; ++i) {
    int n = 0;
    for (int j = 0; j < m; ++j) {
      if (j != i) row[static_cast<std::size_t>(n++)] = dist2(i, j);
    }
    std::sort(row.begin(), row.end());
    scores[static_cast<std::size_t>(i)] =
        std::accumulate(row.begin(), row.begin() + neighbors, 0.0);
  }
  return scores;
}

}  // namespace

AggregationOutcome krum(const ClientUpdateSet& updates, int attacker_count) {
  updates.validate();
  std::vector<int> positions(static_cast<std::size_t>(updates.count()));
  std::iota(positions.begin(), positions.end(), 0);
  const auto scores = krum_scores(updates, positions, attacker_count);
  int best = 0;
  for (int i = 1; i < updates.count(); ++i) {
    const bool better = scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(best)] ||
                        (scores[static_cast<std::size_t>(i)] == scores[static_cast<std::size_t>(best)] &&
                         updates.updates[static_cast<std::size_t>(i)].first < updates.updates[static_cast<std::size_t>(best)].first);
    if (better) best = i;
  }
  AggregationOutcome out;
  out.rule = "krum";
  out.aggregate = updates.updates[static_cast<std::size_t>(best)].second;
  out.selected = {updates.updates[static_cast<std::size_t>(best)].first};
  out.scores = scores;
  return out;
}

AggregationOutcome multi_krum(const ClientUpdateSet& updates, int attacker_count, int select) {
  updates.validate();
  const int m = updates.count();
  if (select < 1 || select > m - attacker_count - 2) {
    throw ConfigError("multi_krum: need 1 <= select <= M - A - 2");
  }
  std::vector<int> remaining(static_cast<std::size_t>(m));
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<int> chosen_ids;
  for (int round = 0; round < select; ++round) {
    const auto scores = krum_scores(updates, remaining, attacker_count);
    int best = 0;
    for (int i = 1; i < static_cast<int>(remaining.size()); ++i) {
      const int id_i = updates.updates[static_cast<std::size_t>(remaining[static_cast<std::size_t>(i)])].first;
      const int id_b = updates.updates[static_cast<std::size_t>(remaining[static_cast<std::size_t>(best)])].first;
      if (scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(best)] ||
          (scores[static_cast<std::size_t>(i)] == scores[static_cast<std::size_t>(best)] && id_i < id_b)) {
        best = i;
      }
    }
    chosen_ids.push_back(updates.updates[static_cast<std::size_t>(remaining[static_cast<std::size_t>(best)])].first);
    remaining.erase(remaining.begin() + best);
  }
  return mean_over(updates, chosen_ids, "multikrum");
}

AggregationOutcome dnc(const ClientUpdateSet& updates, int attacker_count,
                       double filter_factor, int subsample, RngStream& rng) {
  updates.validate();
  const int m = updates.count();
  const int d = updates.dim();
  const int s = std::min(subsample, d);
  if (s < 1) throw ConfigError("dnc: subsample size must be positive");
  const int keep = m - static_cast<int>(std::floor(filter_factor * attacker_count));
  if (keep < 1) throw ConfigError("dnc: filter removes every client");

  // Coordinate subsample without replacement.
  std::vector<int> coords(static_cast<std::size_t>(d));
  std::iota(coords.begin(), coords.end(), 0);
  rng.shuffle(coords);
  coords.resize(static_cast<std::size_t>(s));

  Eigen::MatrixXd g(m, s);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < s; ++j) g(i, j) = updates.updates[static_cast<std::size_t>(i)].second(coords[static_cast<std::size_t>(j)]);
  }
  const Eigen::RowVectorXd mean = g.colwise().mean();
  Eigen::MatrixXd centered = g.rowwise() - mean;

  // Top right singular vector by power iteration on v -> G^T (G v). Each of
  // the 100 steps applies the operator a fixed block of times: the iteration
  // contracts like (sigma2/sigma1)^(2*block) per step, so near-tied spectra
  // (ratio up to ~0.997 on random inputs) still converge inside the budget.
  Eigen::VectorXd v = Eigen::VectorXd::Zero(s);
  for (int j = 0; j < s; ++j) v(j) = rng.gaussian();
  double vnorm = v.norm();
  if (vnorm == 0.0) v(0) = 1.0; else v /= vnorm;
  bool converged = false;
  for (int it = 0; it < 100 && !converged; ++it) {
    for (int inner = 0; inner < 50; ++inner) {
      Eigen::VectorXd next = centered.transpose() * (centered * v);
      const double norm = next.norm();
      if (norm <= 1e-300) {  // centered matrix is (numerically) zero
        it = 100;
        break;
      }
      next /= norm;
      const double delta = std::min((next - v).norm(), (next + v).norm());
      v = next;
      if (delta < 1e-9) {
        converged = true;
        break;
      }
    }
  }
  if (!converged) {
    // Largest-norm centered row as the scoring direction.
    int best_row = 0;
    double best_norm = -1.0;
    for (int i = 0; i < m; ++i) {
      const double n = centered.row(i).norm();
      if (n > best_norm) {
        best_norm = n;
        best_row = i;
      }
    }
    if (best_norm > 0.0) {
      v = centered.row(best_row).transpose() / best_norm;
      log_note("dnc: power iteration did not converge; using largest-norm row direction");
    } else {
      v.setZero();
      v(0) = 1.0;
    }
  }

  std::vector<double> scores(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double proj = centered.row(i).dot(v);
    scores[static_cast<std::size_t>(i)] = proj * proj;
  }
  // keep lowest scores; ties by lowest client id.
  std::vector<int> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) return sa < sb;
    return updates.updates[static_cast<std::size_t>(a)].first < updates.updates[static_cast<std::size_t>(b)].first;
  });
  std::vector<int> selected;
  for (int i = 0; i < keep; ++i) selected.push_back(updates.updates[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].first);
  return mean_over(updates, std::move(selected), "dnc", std::move(scores));
}

AggregationOutcome signguard(const ClientUpdateSet& updates, RngStream& rng) {
  updates.validate();
  const int m = updates.count();
  const int d = updates.dim();

  // Stage 1: norm filter around the median norm.
  std::vector<double> norms(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) norms[static_cast<std::size_t>(i)] = updates.updates[static_cast<std::size_t>(i)].second.norm();
  std::vector<double> sorted_norms = norms;
  std::sort(sorted_norms.begin(), sorted_norms.end());
  const double median_norm = (m % 2 == 1)
                                 ? sorted_norms[static_cast<std::size_t>(m / 2)]
                                 : 0.5 * (sorted_norms[static_cast<std::size_t>(m / 2 - 1)] + sorted_norms[static_cast<std::size_t>(m / 2)]);
  std::vector<int> s1;
  for (int i = 0; i < m; ++i) {
    if (norms[static_cast<std::size_t>(i)] >= 0.1 * median_norm && norms[static_cast<std::size_t>(i)] <= 3.0 * median_norm) {
      s1.push_back(i);
    }
  }

  // Stage 2: sign statistics over a random coordinate subset, 2-means with
  // farthest-pair initialization, larger cluster wins.
  const int sub = std::min(d, 10000);
  std::vector<int> coords(static_cast<std::size_t>(d));
  std::iota(coords.begin(), coords.end(), 0);
  rng.shuffle(coords);
  coords.resize(static_cast<std::size_t>(sub));

  Eigen::MatrixXd feat(m, 3);
  for (int i = 0; i < m; ++i) {
    int pos = 0, neg = 0, zero = 0;
    for (int j = 0; j < sub; ++j) {
      const double v = updates.updates[static_cast<std::size_t>(i)].second(coords[static_cast<std::size_t>(j)]);
      if (v > 0.0) ++pos;
      else if (v < 0.0) ++neg;
      else ++zero;
    }
    feat(i, 0) = static_cast<double>(pos) / sub;
    feat(i, 1) = static_cast<double>(neg) / sub;
    feat(i, 2) = static_cast<double>(zero) / sub;
  }
  int init_a = 0, init_b = 0;
  double far = -1.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const double dist = (feat.row(i) - feat.row(j)).squaredNorm();
      if (dist > far) {
        far = dist;
        init_a = i;
        init_b = j;
      }
    }
  }
  std::vector<int> assign(static_cast<std::size_t>(m), 0);
  Eigen::RowVector3d ca = feat.row(init_a);
  Eigen::RowVector3d cb = feat.row(init_b);
  for (int it = 0; it < 10; ++it) {
    for (int i = 0; i < m; ++i) {
      assign[static_cast<std::size_t>(i)] =
          ((feat.row(i) - ca).squaredNorm() <= (feat.row(i) - cb).squaredNorm()) ? 0 : 1;
    }
    Eigen::RowVector3d na = Eigen::RowVector3d::Zero();
    Eigen::RowVector3d nb = Eigen::RowVector3d::Zero();
    int count_a = 0, count_b = 0;
    for (int i = 0; i < m; ++i) {
      if (assign[static_cast<std::size_t>(i)] == 0) { na += feat.row(i); ++count_a; }
      else { nb += feat.row(i); ++count_b; }
    }
    if (count_a > 0) ca = na / count_a;
    if (count_b > 0) cb = nb / count_b;
  }
  int count_a = 0;
  for (int i = 0; i < m; ++i) count_a += (assign[static_cast<std::size_t>(i)] == 0) ? 1 : 0;
  int winner;
  if (count_a != m - count_a) {
    winner = (count_a > m - count_a) ? 0 : 1;
  } else {
    // tie: cluster containing the lowest client id
    int lowest_pos = 0;
    for (int i = 1; i < m; ++i) {
      if (updates.updates[static_cast<std::size_t>(i)].first < updates.updates[static_cast<std::size_t>(lowest_pos)].first) lowest_pos = i;
    }
    winner = assign[static_cast<std::size_t>(lowest_pos)];
  }
  std::vector<int> s2;
  for (int i = 0; i < m; ++i) {
    if (assign[static_cast<std::size_t>(i)] == winner) s2.push_back(i);
  }

  std::vector<int> both;
  std::set_intersection(s1.begin(), s1.end(), s2.begin(), s2.end(), std::back_inserter(both));
  const std::vector<int>* lambda = &both;
  if (both.empty()) lambda = &s1;
  std::vector<int> selected;
  if (lambda->empty()) {
    log_note("signguard: all clients filtered; falling back to the full set");
    selected = all_ids(updates);
  } else {
    for (const int pos : *lambda) selected.push_back(updates.updates[static_cast<std::size_t>(pos)].first);
  }
  return mean_over(updates, std::move(selected), "signguard", std::move(norms));
}

AggregationOutcome balance(const ClientUpdateSet& updates, const Eigen::VectorXd& reference,
                           double phi, double kappa, int round, int total_rounds) {
  updates.validate();
  if (reference.size() != updates.dim()) throw ContractError("balance: reference dimension mismatch");
  if (phi <= 0.0 || kappa < 0.0 || total_rounds < 1) throw ConfigError("balance: bad parameters");
  const double lambda = static_cast<double>(round) / static_cast<double>(total_rounds);
  const double threshold = phi * std::exp(-kappa * lambda) * reference.norm();
  std::vector<int> selected;
  std::vector<double> distances;
  int closest = 0;
  for (int i = 0; i < updates.count(); ++i) {
    const double dist = (reference - updates.updates[static_cast<std::size_t>(i)].second).norm();
    distances.push_back(dist);
    if (dist <= threshold) selected.push_back(updates.updates[static_cast<std::size_t>(i)].first);
    if (dist < distances[static_cast<std::size_t>(closest)]) closest = i;
  }
  if (selected.empty()) {
    log_note("balance: no client within threshold; accepting the closest one");
    selected.push_back(updates.updates[static_cast<std::size_t>(closest)].first);
  }
  return mean_over(updates, std::move(selected), "balance", std::move(distances));
}

Eigen::VectorXd dct2_truncated(const Eigen::VectorXd& x, int keep) {
  const int n = static_cast<int>(x.size());
  if (keep < 1 || keep > n) throw ContractError("dct2_truncated: keep out of range");
  Eigen::VectorXd out(keep);
  const double scale0 = std::sqrt(1.0 / n);
  const double scale = std::sqrt(2.0 / n);
  for (int k = 0; k < keep; ++k) {
    double acc = 0.0;
    const double w = M_PI * k / n;
    for (int i = 0; i < n; ++i) acc += x(i) * std::cos(w * (i + 0.5));
    out(k) = (k == 0 ? scale0 : scale) * acc;
  }
  return out;
}

AggregationOutcome freqfed(const ClientUpdateSet& updates) {
  updates.validate();
  const int m = updates.count();
  const int d = updates.dim();
  const int keep = (d + 3) / 4;  // ceil(d/4)

  std::vector<Eigen::VectorXd> sig;
  sig.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) sig.push_back(dct2_truncated(updates.updates[static_cast<std::size_t>(i)].second, keep));

  // Pairwise cosine distance; zero-signature pairs count as maximally far
  // unless both are zero.
  Eigen::MatrixXd dist = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      const double ni = sig[static_cast<std::size_t>(i)].norm();
      const double nj = sig[static_cast<std::size_t>(j)].norm();
      double c;
      if (ni == 0.0 && nj == 0.0) c = 0.0;
      else if (ni == 0.0 || nj == 0.0) c = 1.0;
      else c = 1.0 - sig[static_cast<std::size_t>(i)].dot(sig[static_cast<std::size_t>(j)]) / (ni * nj);
      dist(i, j) = c;
      dist(j, i) = c;
    }
  }
  std::vector<double> flat;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) flat.push_back(dist(i, j));
  }
  double threshold = 0.0;
  if (!flat.empty()) {
    std::sort(flat.begin(), flat.end());
    const std::size_t n = flat.size();
    threshold = (n % 2 == 1) ? flat[n / 2] : 0.5 * (flat[n / 2 - 1] + flat[n / 2]);
  }

  // Single-linkage: union components over edges with distance <= threshold.
  std::vector<int> comp(static_cast<std::size_t>(m));
  std::iota(comp.begin(), comp.end(), 0);
  std::function<int(int)> find = [&](int x) {
    while (comp[static_cast<std::size_t>(x)] != x) {
      comp[static_cast<std::size_t>(x)] = comp[static_cast<std::size_t>(comp[static_cast<std::size_t>(x)])];
      x = comp[static_cast<std::size_t>(x)];
    }
    return x;
  };
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (dist(i, j) <= threshold) comp[static_cast<std::size_t>(find(i))] = find(j);
    }
  }
  // Largest cluster; ties -> cluster containing the lowest client id.
  std::vector<int> roots(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) roots[static_cast<std::size_t>(i)] = find(i);
  int best_root = -1;
  int best_size = -1;
  int best_lowest_id = 0;
  for (int i = 0; i < m; ++i) {
    const int r = roots[static_cast<std::size_t>(i)];
    int size = 0;
    int lowest = std::numeric_limits<int>::max();
    for (int j = 0; j < m; ++j) {
      if (roots[static_cast<std::size_t>(j)] == r) {
        ++size;
        lowest = std::min(lowest, updates.updates[static_cast<std::size_t>(j)].first);
      }
    }
    if (size > best_size || (size == best_size && lowest < best_lowest_id)) {
      best_size = size;
      best_root = r;
      best_lowest_id = lowest;
    }
  }
  std::vector<int> selected;
  for (int i = 0; i < m; ++i) {
    if (roots[static_cast<std::size_t>(i)] == best_root) selected.push_back(updates.updates[static_cast<std::size_t>(i)].first);
  }
  return mean_over(updates, std::move(selected), "freqfed");
}

AggregationOutcome aggregate(const ClientUpdateSet& updates, const AggregationParams& params,
                             const Eigen::VectorXd* reference, int total_rounds,
                             RngStream& rng) {
  const std::string& r = params.rule;
  if (r == "fedavg") return fedavg(updates);
  if (r == "median") return coordinate_median(updates);
  if (r == "trimmed_mean") return trimmed_mean(updates, params.trim);
  if (r == "krum") return krum(updates, params.attacker_count);
  if (r == "multikrum") return multi_krum(updates, params.attacker_count, params.multikrum_select);
  if (r == "dnc") return dnc(updates, params.attacker_count, params.dnc_filter_factor,
                             std::min(params.dnc_subsample, updates.dim()), rng);
  if (r == "signguard") return signguard(updates, rng);
  if (r == "balance") {
    if (reference == nullptr) throw ConfigError("balance requires a server reference update");
    return balance(updates, *reference, params.balance_phi, params.balance_kappa,
                   updates.round, total_rounds);
  }
  if (r == "freqfed") return freqfed(updates);
  throw ConfigError("unknown aggregation.rule: " + r);
}

}  // namespace fedsim
