#include <doctest.h>

#include <algorithm>

#include "fedsim/aggregation.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/oracles.hpp"
#include "test_util.hpp"

using fedsim::AggregationOutcome;
using fedsim::ClientUpdateSet;

namespace {

ClientUpdateSet make_set(const std::vector<Eigen::VectorXd>& updates,
                         std::vector<int> ids = {}) {
  ClientUpdateSet s;
  s.eta = 0.1;
  if (ids.empty()) {
    for (std::size_t i = 0; i < updates.size(); ++i) ids.push_back(static_cast<int>(i) + 1);
  }
  for (std::size_t i = 0; i < updates.size(); ++i) s.updates.emplace_back(ids[i], updates[i]);
  return s;
}

Eigen::VectorXd vec1(double v) {
  Eigen::VectorXd x(1);
  x << v;
  return x;
}

std::vector<Eigen::VectorXd> random_updates(int m, int d, fedsim::RngStream& rng) {
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd u(d);
    for (int j = 0; j < d; ++j) u(j) = rng.gaussian();
    out.push_back(u);
  }
  return out;
}

}  // namespace

TEST_CASE("fedavg closed forms and invariances") {
  SUBCASE("mean of two") {
    const auto out = fedsim::fedavg(make_set({vec1(1.0), vec1(3.0)}));
    CHECK(out.aggregate(0) == doctest::Approx(2.0));
    CHECK(out.selected == std::vector<int>{1, 2});
  }
  SUBCASE("single client is identity") {
    const auto out = fedsim::fedavg(make_set({vec1(5.0)}));
    CHECK(out.aggregate(0) == 5.0);
  }
  SUBCASE("permutation leaves the mean bit-identical") {
    fedsim::RngStream rng = fedsim::RngStream::derive(1, "fedavg-perm");
    const auto updates = random_updates(5, 7, rng);
    const auto a = fedsim::fedavg(make_set(updates, {1, 2, 3, 4, 5}));
    std::vector<Eigen::VectorXd> shuffled = {updates[3], updates[0], updates[4], updates[1], updates[2]};
    const auto b = fedsim::fedavg(make_set(shuffled, {4, 1, 5, 2, 3}));
    CHECK((a.aggregate - b.aggregate).norm() == 0.0);
  }
  SUBCASE("scale equivariance") {
    fedsim::RngStream rng = fedsim::RngStream::derive(2, "fedavg-scale");
    auto updates = random_updates(4, 5, rng);
    const auto base = fedsim::fedavg(make_set(updates));
    for (auto& u : updates) u *= -2.5;
    const auto scaled = fedsim::fedavg(make_set(updates));
    CHECK((scaled.aggregate + 2.5 * base.aggregate).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("empty set is a contract error") {
    ClientUpdateSet empty;
    CHECK_THROWS_AS(fedsim::fedavg(empty), fedsim::ContractError);
  }
}

TEST_CASE("coordinate median closed forms") {
  SUBCASE("odd count") {
    const auto out = fedsim::coordinate_median(make_set({vec1(1.0), vec1(2.0), vec1(100.0)}));
    CHECK(out.aggregate(0) == 2.0);
  }
  SUBCASE("even count averages the middle pair") {
    const auto out = fedsim::coordinate_median(make_set({vec1(1.0), vec1(2.0), vec1(3.0), vec1(100.0)}));
    CHECK(out.aggregate(0) == doctest::Approx(2.5));
  }
  SUBCASE("one outlier cannot leave the benign range") {
    fedsim::RngStream rng = fedsim::RngStream::derive(3, "median-rob");
    for (int trial = 0; trial < 20; ++trial) {
      auto updates = random_updates(5, 3, rng);
      const double big = 1e9 * (1.0 + rng.next_double());
      updates[4].setConstant(big);
      const auto out = fedsim::coordinate_median(make_set(updates));
      for (int j = 0; j < 3; ++j) {
        double lo = 1e30, hi = -1e30;
        for (int i = 0; i < 4; ++i) {
          lo = std::min(lo, updates[static_cast<std::size_t>(i)](j));
          hi = std::max(hi, updates[static_cast<std::size_t>(i)](j));
        }
        CHECK(out.aggregate(j) >= lo);
        CHECK(out.aggregate(j) <= hi);
      }
    }
  }
}

TEST_CASE("trimmed mean closed forms") {
  SUBCASE("beta = 1 drops both extremes") {
    const auto out = fedsim::trimmed_mean(make_set({vec1(0.0), vec1(1.0), vec1(2.0), vec1(100.0)}), 1);
    CHECK(out.aggregate(0) == doctest::Approx(1.5));
  }
  SUBCASE("beta = 0 equals fedavg") {
    fedsim::RngStream rng = fedsim::RngStream::derive(4, "trim0");
    const auto updates = random_updates(5, 4, rng);
    const auto a = fedsim::trimmed_mean(make_set(updates), 0);
    const auto b = fedsim::fedavg(make_set(updates));
    // summation order differs between the two paths; equality up to rounding
    CHECK((a.aggregate - b.aggregate).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("all equal values return that value") {
    std::vector<Eigen::VectorXd> updates(5, vec1(3.25));
    const auto out = fedsim::trimmed_mean(make_set(updates), 2);
    CHECK(out.aggregate(0) == 3.25);
  }
  SUBCASE("2*beta >= M rejected") {
    CHECK_THROWS_AS(fedsim::trimmed_mean(make_set({vec1(0.0), vec1(1.0)}), 1), fedsim::ConfigError);
  }
}

TEST_CASE("krum worked example") {
  // d=1, updates {0.0, 0.1, 0.2, 10.0}, A=1 -> neighbor count 1; scores
  // {0.01, 0.01, 0.01, 96.04}; tie broken to the lowest id.
  const auto out = fedsim::krum(make_set({vec1(0.0), vec1(0.1), vec1(0.2), vec1(10.0)}), 1);
  CHECK(out.selected == std::vector<int>{1});
  CHECK(out.aggregate(0) == 0.0);
  CHECK(out.scores[0] == doctest::Approx(0.01));
  CHECK(out.scores[3] == doctest::Approx(96.04));
}

TEST_CASE("krum ties and preconditions") {
  std::vector<Eigen::VectorXd> same(4, vec1(1.0));
  const auto out = fedsim::krum(make_set(same), 1);
  CHECK(out.selected == std::vector<int>{1});
  CHECK_THROWS_AS(fedsim::krum(make_set({vec1(0.0), vec1(1.0), vec1(2.0)}), 1), fedsim::ConfigError);
}

TEST_CASE("krum matches the brute-force oracle on 100 random instances") {
  fedsim::RngStream rng = fedsim::RngStream::derive(5, "krum-oracle");
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 4 + rng.uniform_int(5);          // 4..8
    const int d = 1 + rng.uniform_int(16);         // 1..16
    const int a = rng.uniform_int(std::max(1, m - 3 + 1));  // A with M >= A+3
    const auto updates = random_updates(m, d, rng);
    std::vector<int> ids;
    for (int i = 0; i < m; ++i) ids.push_back(i + 1);
    const auto out = fedsim::krum(make_set(updates, ids), a);
    const int oracle_winner = fedsim::oracle::krum_winner(updates, ids, a);
    CHECK(out.selected == std::vector<int>{ids[static_cast<std::size_t>(oracle_winner)]});
  }
}

TEST_CASE("multi-krum closed forms and oracle equivalence") {
  SUBCASE("select 1 equals krum") {
    fedsim::RngStream rng = fedsim::RngStream::derive(6, "mk1");
    const auto updates = random_updates(6, 4, rng);
    const auto mk = fedsim::multi_krum(make_set(updates), 1, 1);
    const auto k = fedsim::krum(make_set(updates), 1);
    CHECK(mk.selected == k.selected);
    CHECK((mk.aggregate - k.aggregate).norm() == 0.0);
  }
  SUBCASE("identical updates average to the common value") {
    std::vector<Eigen::VectorXd> same(6, vec1(2.5));
    const auto mk = fedsim::multi_krum(make_set(same), 0, 4);
    CHECK(mk.aggregate(0) == 2.5);
    CHECK(mk.selected.size() == 4);
  }
  SUBCASE("oracle equivalence on 100 random instances") {
    fedsim::RngStream rng = fedsim::RngStream::derive(7, "mk-oracle");
    for (int trial = 0; trial < 100; ++trial) {
      const int m = 5 + rng.uniform_int(4);  // 5..8
      const int d = 1 + rng.uniform_int(16);
      const int a = rng.uniform_int(m - 4 + 1);  // keep at least select=2 legal
      const int select = 1 + rng.uniform_int(m - a - 2);
      const auto updates = random_updates(m, d, rng);
      std::vector<int> ids;
      for (int i = 0; i < m; ++i) ids.push_back(10 + i);
      const auto out = fedsim::multi_krum(make_set(updates, ids), a, select);
      const auto oracle = fedsim::oracle::multi_krum_selection(updates, ids, a, select);
      CHECK(out.selected == oracle);
    }
  }
}

TEST_CASE("dnc worked example: far outlier excluded") {
  fedsim::RngStream rng = fedsim::RngStream::derive(8, "dnc-outlier");
  std::vector<Eigen::VectorXd> updates;
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd u(2);
    u << 0.01 * rng.gaussian(), 0.01 * rng.gaussian();
    updates.push_back(u);
  }
  Eigen::VectorXd far(2);
  far << 10.0, 0.0;
  updates.push_back(far);
  fedsim::RngStream agg_rng = fedsim::RngStream::derive(8, "dnc-rng");
  const auto out = fedsim::dnc(make_set(updates), 1, 1.0, 2, agg_rng);
  CHECK(out.selected.size() == 5);
  CHECK(std::find(out.selected.begin(), out.selected.end(), 6) == out.selected.end());
}

TEST_CASE("dnc: identical updates keep the first M - floor(c_f A) ids") {
  std::vector<Eigen::VectorXd> same(6, vec1(1.0));
  fedsim::RngStream rng = fedsim::RngStream::derive(9, "dnc-same");
  const auto out = fedsim::dnc(make_set(same), 2, 1.0, 1, rng);
  CHECK(out.selected == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("dnc matches a full-SVD oracle on 100 random instances") {
  fedsim::RngStream rng = fedsim::RngStream::derive(10, "dnc-oracle");
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 4 + rng.uniform_int(5);
    const int d = 2 + rng.uniform_int(15);  // 2..16
    const int a = 1 + rng.uniform_int(2);
    if (m - a < 1) continue;
    const auto updates = random_updates(m, d, rng);
    std::vector<int> ids;
    for (int i = 0; i < m; ++i) ids.push_back(i + 1);
    fedsim::RngStream agg_rng = fedsim::RngStream::derive(100 + trial, "dnc-run");
    const auto out = fedsim::dnc(make_set(updates, ids), a, 1.0, d, agg_rng);
    std::vector<int> coords;
    for (int j = 0; j < d; ++j) coords.push_back(j);
    const auto oracle = fedsim::oracle::dnc_selection(updates, ids, a, 1.0, coords);
    CHECK(out.selected == oracle);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("signguard behavior") {
  SUBCASE("identical updates keep everyone") {
    fedsim::RngStream rng = fedsim::RngStream::derive(11, "sg-same");
    std::vector<Eigen::VectorXd> same(5, vec1(0.7));
    const auto out = fedsim::signguard(make_set(same), rng);
    CHECK(out.selected == std::vector<int>{1, 2, 3, 4, 5});
  }
  SUBCASE("sign-flipped client lands in the smaller cluster") {
    fedsim::RngStream rng = fedsim::RngStream::derive(12, "sg-flip");
    Eigen::VectorXd base(6);
    base << 1.0, -2.0, 0.5, 3.0, -0.25, 1.5;
    std::vector<Eigen::VectorXd> updates(5, base);
    updates.push_back(-base);  // client 6 flips every sign
    const auto out = fedsim::signguard(make_set(updates), rng);
    CHECK(out.selected.size() == 5);
    CHECK(std::find(out.selected.begin(), out.selected.end(), 6) == out.selected.end());
  }
  SUBCASE("100x scaled update fails the norm filter") {
    fedsim::RngStream rng = fedsim::RngStream::derive(13, "sg-scale");
    Eigen::VectorXd base(4);
    base << 1.0, 0.5, -0.5, 0.25;
    std::vector<Eigen::VectorXd> updates(5, base);
    updates.push_back(100.0 * base);
    const auto out = fedsim::signguard(make_set(updates), rng);
    CHECK(std::find(out.selected.begin(), out.selected.end(), 6) == out.selected.end());
  }
}

TEST_CASE("balance acceptance rule") {
  Eigen::VectorXd ref(2);
  ref << 1.0, 0.0;
  SUBCASE("identical update accepted for any positive phi") {
    const auto out = fedsim::balance(make_set({ref}), ref, 1e-6, 1.0, 0, 10);
    CHECK(out.selected == std::vector<int>{1});
  }
  SUBCASE("distance 2 vs threshold 1 rejected (falls back to closest)") {
    Eigen::VectorXd far(2);
    far << 3.0, 0.0;
    Eigen::VectorXd near(2);
    near << 1.5, 0.0;
    fedsim::set_log_enabled(false);
    const auto out = fedsim::balance(make_set({far, near}), ref, 1.0, 0.0, 0, 10);
    fedsim::set_log_enabled(true);
    CHECK(out.selected == std::vector<int>{2});  // nothing within phi=1: closest wins
  }
  SUBCASE("threshold shrinks by e^-kappa as k goes 0 -> K") {
    Eigen::VectorXd update(2);
    update << 0.5, 0.0;  // distance 0.5 from [1,0]... 
    Eigen::VectorXd g(2);
    g << 1.0, 0.5;  // distance 0.5 from ref
    fedsim::set_log_enabled(false);
    const auto at0 = fedsim::balance(make_set({g}), ref, 0.6, 1.0, 0, 10);
    const auto atK = fedsim::balance(make_set({g, ref}), ref, 0.6, 1.0, 10, 10);
    fedsim::set_log_enabled(true);
    CHECK(at0.selected == std::vector<int>{1});                       // 0.5 <= 0.6
    CHECK(std::find(atK.selected.begin(), atK.selected.end(), 1) ==
          atK.selected.end());                                        // 0.5 > 0.6/e = 0.2207
  }
}

TEST_CASE("freqfed: DCT anchor and clustering") {
  SUBCASE("orthonormal DCT-II of a constant block") {
    Eigen::VectorXd ones(4);
    ones << 1.0, 1.0, 1.0, 1.0;
    const Eigen::VectorXd coef = fedsim::dct2_truncated(ones, 4);
    CHECK(coef(0) == doctest::Approx(2.0).epsilon(1e-12));
    for (int k = 1; k < 4; ++k) CHECK(std::abs(coef(k)) <= 1e-12);
  }
  SUBCASE("identical updates form one cluster") {
    std::vector<Eigen::VectorXd> same(4, vec1(1.0));
    const auto out = fedsim::freqfed(make_set(same));
    CHECK(out.selected == std::vector<int>{1, 2, 3, 4});
  }
  SUBCASE("an update pointing elsewhere is excluded") {
    Eigen::VectorXd v(8);
    v << 1, 1, 1, 1, 1, 1, 1, 1;  // energy in the DC coefficient
    std::vector<Eigen::VectorXd> updates(5, v);
    Eigen::VectorXd w(8);
    w << 1, 1, 1, 1, -1, -1, -1, -1;  // low-frequency energy in the odd bins
    updates.push_back(w);
    const auto out = fedsim::freqfed(make_set(updates));
    CHECK(out.selected == std::vector<int>{1, 2, 3, 4, 5});
  }
}

TEST_CASE("every rule: output dimension, non-empty selection, subset of inputs") {
  fedsim::RngStream rng = fedsim::RngStream::derive(14, "all-rules");
  const auto updates = random_updates(6, 10, rng);
  const auto set = make_set(updates);
  Eigen::VectorXd ref = updates[0];
  std::vector<AggregationOutcome> outcomes;
  outcomes.push_back(fedsim::fedavg(set));
  outcomes.push_back(fedsim::coordinate_median(set));
  outcomes.push_back(fedsim::trimmed_mean(set, 1));
  outcomes.push_back(fedsim::krum(set, 1));
  outcomes.push_back(fedsim::multi_krum(set, 1, 2));
  {
    fedsim::RngStream r = fedsim::RngStream::derive(14, "dnc");
    outcomes.push_back(fedsim::dnc(set, 1, 1.0, 10, r));
  }
  {
    fedsim::RngStream r = fedsim::RngStream::derive(14, "sg");
    outcomes.push_back(fedsim::signguard(set, r));
  }
  fedsim::set_log_enabled(false);
  outcomes.push_back(fedsim::balance(set, ref, 0.4, 1.0, 3, 10));
  fedsim::set_log_enabled(true);
  outcomes.push_back(fedsim::freqfed(set));
  for (const auto& out : outcomes) {
    CHECK(out.aggregate.size() == 10);
    CHECK(!out.selected.empty());
    for (const int id : out.selected) {
      CHECK(id >= 1);
      CHECK(id <= 6);
    }
  }
}

TEST_CASE("median and trimmed mean: permutation and scale equivariance") {
  fedsim::RngStream rng = fedsim::RngStream::derive(15, "median-equiv");
  const auto updates = random_updates(5, 6, rng);
  const auto base_m = fedsim::coordinate_median(make_set(updates));
  const auto base_t = fedsim::trimmed_mean(make_set(updates), 1);
  std::vector<Eigen::VectorXd> perm = {updates[4], updates[2], updates[0], updates[1], updates[3]};
  const auto perm_m = fedsim::coordinate_median(make_set(perm, {5, 3, 1, 2, 4}));
  const auto perm_t = fedsim::trimmed_mean(make_set(perm, {5, 3, 1, 2, 4}), 1);
  CHECK((base_m.aggregate - perm_m.aggregate).norm() == 0.0);
  CHECK((base_t.aggregate - perm_t.aggregate).norm() == 0.0);

  auto scaled = updates;
  for (auto& u : scaled) u *= 3.0;
  const auto scaled_m = fedsim::coordinate_median(make_set(scaled));
  CHECK((scaled_m.aggregate - 3.0 * base_m.aggregate).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("krum-family and dnc: chosen values are permutation-invariant on tie-free instances") {
  fedsim::RngStream rng = fedsim::RngStream::derive(16, "krum-perm");
  const auto updates = random_updates(6, 8, rng);  // random gaussians: ties have measure zero
  const auto a = fedsim::krum(make_set(updates, {1, 2, 3, 4, 5, 6}), 1);
  std::vector<Eigen::VectorXd> perm = {updates[5], updates[3], updates[1], updates[0], updates[4], updates[2]};
  const auto b = fedsim::krum(make_set(perm, {6, 4, 2, 1, 5, 3}), 1);
  CHECK((a.aggregate - b.aggregate).norm() == 0.0);
}

TEST_CASE("aggregate dispatch by rule name") {
  fedsim::RngStream rng = fedsim::RngStream::derive(17, "dispatch");
  const auto updates = random_updates(5, 4, rng);
  const auto set = make_set(updates);
  fedsim::AggregationParams params;
  for (const std::string rule : {"fedavg", "median", "trimmed_mean", "krum", "multikrum",
                                  "dnc", "signguard", "freqfed"}) {
    params.rule = rule;
    fedsim::RngStream r = fedsim::RngStream::derive(17, rule);
    const auto out = fedsim::aggregate(set, params, nullptr, 10, r);
    CHECK(out.aggregate.size() == 4);
  }
  params.rule = "balance";
  CHECK_THROWS_AS({
    fedsim::RngStream r = fedsim::RngStream::derive(17, "balance");
    fedsim::aggregate(set, params, nullptr, 10, r);
  }, fedsim::ConfigError);
  params.rule = "nonsense";
  CHECK_THROWS_AS({
    fedsim::RngStream r = fedsim::RngStream::derive(17, "nonsense");
    fedsim::aggregate(set, params, nullptr, 10, r);
  }, fedsim::ConfigError);
}
