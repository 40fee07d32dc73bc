#include <doctest.h>

#include <algorithm>

#include "fedsim/adversary.hpp"
#include "fedsim/assignment.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/synthetic.hpp"
#include "test_util.hpp"

using fedsim::AttackConfig;
using fedsim::DummyParam;

namespace {

Eigen::VectorXd vecd(std::initializer_list<double> vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (const double x : vals) v(i++) = x;
  return v;
}

}  // namespace

TEST_CASE("observe_global_grad arithmetic") {
  const Eigen::VectorXd g = fedsim::observe_global_grad(vecd({1.0, 1.0}), vecd({0.9, 1.1}), 0.1);
  CHECK(g(0) == doctest::Approx(1.0));
  CHECK(g(1) == doctest::Approx(-1.0));
  CHECK(fedsim::observe_global_grad(vecd({2.0}), vecd({2.0}), 0.5).norm() == 0.0);
  CHECK_THROWS_AS(fedsim::observe_global_grad(vecd({1.0}), vecd({1.0}), 0.0), fedsim::ContractError);
  // linear in (w_k - w_next)
  const Eigen::VectorXd a = fedsim::observe_global_grad(vecd({3.0, 1.0}), vecd({1.0, 0.0}), 1.0);
  const Eigen::VectorXd b = fedsim::observe_global_grad(vecd({6.0, 2.0}), vecd({2.0, 0.0}), 1.0);
  CHECK((b - 2.0 * a).norm() <= 1e-12);
}

TEST_CASE("sign flip poison") {
  CHECK((fedsim::poison_sign_flip(vecd({1.0, -2.0}), 1.0) - vecd({-1.0, 2.0})).norm() == 0.0);
  CHECK((fedsim::poison_sign_flip(vecd({1.0, 0.0}), 2.0) - vecd({-2.0, 0.0})).norm() == 0.0);
  const Eigen::VectorXd g = vecd({0.3, -0.7, 2.0});
  CHECK((fedsim::poison_sign_flip(fedsim::poison_sign_flip(g, 1.0), 1.0) - g).norm() == 0.0);
}

TEST_CASE("gaussian poison moments") {
  fedsim::RngStream rng = fedsim::RngStream::derive(31, "gauss-poison");
  CHECK(fedsim::poison_gaussian(5, 0.0, rng).norm() == 0.0);
  const int draws = 100000;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < draws / 10; ++i) {
    const Eigen::VectorXd z = fedsim::poison_gaussian(10, 1.0, rng);
    sum += z.sum();
    sum_sq += z.squaredNorm();
  }
  const double mean = sum / draws;
  const double var = sum_sq / draws - mean * mean;
  CHECK(std::abs(mean) <= 0.02);
  CHECK(var == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("backdoor poison") {
  fedsim::BackdoorPattern pat = fedsim::default_backdoor_pattern(8, 8, 0);
  CHECK(pat.pixel_indices.size() == 16);
  Eigen::MatrixXd batch = Eigen::MatrixXd::Zero(2, 64);
  std::vector<int> labels = {3, 7};
  fedsim::poison_backdoor(batch, labels, pat);
  CHECK(labels == std::vector<int>{0, 0});
  double ones = 0.0;
  for (int p = 0; p < 64; ++p) ones += batch(0, p);
  CHECK(ones == doctest::Approx(16.0));
  // idempotent
  Eigen::MatrixXd again = batch;
  std::vector<int> labels2 = labels;
  fedsim::poison_backdoor(again, labels2, pat);
  CHECK((again - batch).norm() == 0.0);
  CHECK(labels2 == labels);
}

TEST_CASE("surrogate mean behaves like fedavg") {
  CHECK(fedsim::surrogate_mean({vecd({1.0}), vecd({3.0})})(0) == doctest::Approx(2.0));
  CHECK(fedsim::surrogate_mean({vecd({5.0})})(0) == 5.0);
  // linearity
  fedsim::RngStream rng = fedsim::RngStream::derive(32, "mean-lin");
  std::vector<Eigen::VectorXd> gs;
  for (int i = 0; i < 3; ++i) gs.push_back(testutil::random_tensor(4, 1, rng).col(0));
  auto scaled = gs;
  for (auto& g : scaled) g *= 2.0;
  CHECK((fedsim::surrogate_mean(scaled) - 2.0 * fedsim::surrogate_mean(gs)).norm() <= 1e-12);
}

TEST_CASE("soft median limits") {
  SUBCASE("huge temperature tends to the mean") {
    std::vector<Eigen::VectorXd> gs = {vecd({0.2}), vecd({0.8}), vecd({0.5})};
    const double mean = 0.5;
    CHECK(fedsim::surrogate_soft_median(gs, 1e6)(0) == doctest::Approx(mean).epsilon(1e-6));
  }
  SUBCASE("tiny temperature concentrates on points nearest the mean") {
    std::vector<Eigen::VectorXd> gs = {vecd({0.0}), vecd({0.0}), vecd({100.0})};
    CHECK(std::abs(fedsim::surrogate_soft_median(gs, 1e-3)(0)) <= 1e-6);
  }
  SUBCASE("all equal values are a fixed point") {
    std::vector<Eigen::VectorXd> gs(4, vecd({0.5}));
    CHECK(fedsim::surrogate_soft_median(gs, 0.7)(0) == 0.5);
  }
  SUBCASE("permutation invariant over clients") {
    fedsim::RngStream rng = fedsim::RngStream::derive(33, "sm-perm");
    std::vector<Eigen::VectorXd> gs;
    for (int i = 0; i < 4; ++i) gs.push_back(testutil::random_tensor(5, 1, rng).col(0));
    std::vector<Eigen::VectorXd> perm = {gs[2], gs[0], gs[3], gs[1]};
    CHECK((fedsim::surrogate_soft_median(gs, 0.3) - fedsim::surrogate_soft_median(perm, 0.3)).norm() <= 1e-12);
  }
}

TEST_CASE("pseudo krum selection") {
  std::vector<Eigen::VectorXd> one = {vecd({7.0})};
  fedsim::RngStream rng = fedsim::RngStream::derive(34, "pk-single");
  CHECK(fedsim::surrogate_pseudo_krum(one, rng)(0) == 7.0);

  std::vector<Eigen::VectorXd> four = {vecd({0.0}), vecd({1.0}), vecd({2.0}), vecd({3.0})};
  std::vector<int> counts(4, 0);
  fedsim::RngStream rng2 = fedsim::RngStream::derive(34, "pk-freq");
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const double v = fedsim::surrogate_pseudo_krum(four, rng2)(0);
    const int idx = static_cast<int>(v);
    CHECK(v == static_cast<double>(idx));  // always exactly one of the inputs
    counts[static_cast<std::size_t>(idx)]++;
  }
  for (const int c : counts) {
    CHECK(std::abs(c / static_cast<double>(draws) - 0.25) <= 0.02);
  }
}

TEST_CASE("decoder pretraining") {
  fedsim::RngStream data_rng = fedsim::RngStream::derive(35, "ae-data");
  const fedsim::Dataset data = fedsim::make_synthetic_dataset(96, 8, 8, 10, data_rng);

  // 5-seed mean of per-epoch MSE decreases over the first 3 epochs.
  std::vector<double> epoch_mean(3, 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    fedsim::RngStream rng = fedsim::RngStream::derive(seed, "ae-train");
    std::vector<double> mse;
    fedsim::pretrain_decoder(data.images, 8, 24, 3, 16, 1e-2, rng, &mse);
    REQUIRE(mse.size() == 3);
    for (int e = 0; e < 3; ++e) epoch_mean[static_cast<std::size_t>(e)] += mse[static_cast<std::size_t>(e)] / 5.0;
  }
  CHECK(epoch_mean[1] < epoch_mean[0]);
  CHECK(epoch_mean[2] < epoch_mean[1]);

  fedsim::RngStream rng = fedsim::RngStream::derive(36, "ae-io");
  const fedsim::Autoencoder ae = fedsim::pretrain_decoder(data.images, 8, 24, 1, 16, 1e-2, rng);
  fedsim::RngStream zrng = fedsim::RngStream::derive(36, "ae-z");
  const Eigen::MatrixXd z = testutil::random_tensor(5, 8, zrng);
  const Eigen::MatrixXd x = ae.decode(z);
  CHECK(x.rows() == 5);
  CHECK(x.cols() == 64);  // d_in
  CHECK(x.minCoeff() >= 0.0);
  CHECK(x.maxCoeff() <= 1.0);
}

TEST_CASE("hungarian assignment solves a known instance") {
  Eigen::MatrixXd cost(3, 3);
  cost << 4, 1, 3,
          2, 0, 5,
          3, 2, 2;
  const auto match = fedsim::hungarian_assignment(cost);  // optimal cost 5: (0,1),(1,0),(2,2)
  CHECK(match == std::vector<int>{1, 0, 2});
  const auto greedy = fedsim::greedy_assignment(cost);
  double greedy_cost = 0.0;
  for (int i = 0; i < 3; ++i) greedy_cost += cost(i, greedy[static_cast<std::size_t>(i)]);
  CHECK(greedy_cost >= 5.0);
}

TEST_CASE("rmse_eval") {
  fedsim::RngStream rng = fedsim::RngStream::derive(37, "rmse");
  Eigen::MatrixXd truth(4, 9);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 9; ++j) truth(i, j) = 0.15 + 0.7 * rng.next_double();
  }
  SUBCASE("identical inputs give zero") {
    const auto rep = fedsim::rmse_eval(truth, truth);
    CHECK(rep.mean == 0.0);
  }
  SUBCASE("constant offset in the interior gives exactly the offset") {
    const Eigen::MatrixXd shifted = truth.array() + 0.1;
    const auto rep = fedsim::rmse_eval(shifted, truth);
    CHECK(rep.mean == doctest::Approx(0.1).epsilon(1e-9));
  }
  SUBCASE("a permutation is recovered by assignment matching") {
    Eigen::MatrixXd perm(4, 9);
    perm.row(0) = truth.row(2);
    perm.row(1) = truth.row(0);
    perm.row(2) = truth.row(3);
    perm.row(3) = truth.row(1);
    const auto rep = fedsim::rmse_eval(perm, truth);
    CHECK(rep.mean == 0.0);
  }
  SUBCASE("size mismatch evaluates over the smaller count") {
    fedsim::set_log_enabled(false);
    const auto rep = fedsim::rmse_eval(truth.topRows(2), truth);
    fedsim::set_log_enabled(true);
    CHECK(rep.per_pair.size() == 2);
    CHECK(rep.mean == 0.0);
  }
}

TEST_CASE("reconstruction: self-generated target is recovered (pixel dummies)") {
  fedsim::RngStream data_rng = fedsim::RngStream::derive(38, "recon-data");
  const fedsim::Dataset data = fedsim::make_synthetic_dataset(4, 14, 14, 10, data_rng);

  fedsim::ModelSpec spec;
  spec.input_dim = 196;
  spec.class_count = 10;
  spec.hidden = {32};
  fedsim::RngStream wrng = fedsim::RngStream::derive(38, "recon-w");
  const fedsim::ParamVector w = fedsim::init_params(spec, wrng);

  // Target gradient from a known example (M = 1, B = 1, tau = 1).
  const Eigen::VectorXd x_true = data.images.row(0).transpose();
  const fedsim::ParamVector g = fedsim::per_example_grad(spec, w, x_true, data.labels[0]);

  AttackConfig cfg;
  cfg.dummy_param = DummyParam::kPixel;
  cfg.surrogates = {"mean"};
  cfg.recon_restarts = 2;
  cfg.recon_iterations = 900;
  cfg.recon_step = 0.1;
  cfg.recon_batch = 1;

  const auto state = fedsim::reconstruct(g.values, spec, w, cfg, 1, 1, nullptr, 77, 0, 2);
  CHECK(state.final_loss <= 1e-3);
  CHECK(state.dummies.minCoeff() >= 0.0);
  CHECK(state.dummies.maxCoeff() <= 1.0);
  Eigen::MatrixXd truth(1, 196);
  truth.row(0) = x_true.transpose();
  const auto rep = fedsim::rmse_eval(state.dummies, truth);
  CHECK(rep.mean <= 0.25);
  // loss trace is non-increasing (accepted steps only)
  for (std::size_t i = 1; i < state.loss_trace.size(); ++i) {
    CHECK(state.loss_trace[i] <= state.loss_trace[i - 1] + 1e-15);
  }
}

TEST_CASE("reconstruction: zero observed gradient still descends") {
  fedsim::ModelSpec spec;
  spec.input_dim = 16;
  spec.class_count = 4;
  spec.hidden = {8};
  fedsim::RngStream wrng = fedsim::RngStream::derive(39, "zero-g");
  const fedsim::ParamVector w = fedsim::init_params(spec, wrng);
  AttackConfig cfg;
  cfg.dummy_param = DummyParam::kPixel;
  cfg.surrogates = {"mean"};
  cfg.recon_restarts = 1;
  cfg.recon_iterations = 50;
  cfg.recon_batch = 2;
  const auto state = fedsim::reconstruct(Eigen::VectorXd::Zero(fedsim::param_dim(spec)), spec, w,
                                         cfg, 1, 1, nullptr, 5, 0);
  CHECK(state.final_loss <= state.initial_loss);
}

TEST_CASE("reconstruction via decoder latents stays in [0,1] and descends") {
  fedsim::RngStream data_rng = fedsim::RngStream::derive(40, "dec-data");
  const fedsim::Dataset data = fedsim::make_synthetic_dataset(64, 8, 8, 10, data_rng);
  fedsim::RngStream ae_rng = fedsim::RngStream::derive(40, "dec-train");
  const fedsim::Autoencoder ae =
      fedsim::pretrain_decoder(data.images, 6, 24, 2, 16, 1e-2, ae_rng);

  fedsim::ModelSpec spec;
  spec.input_dim = 64;
  spec.class_count = 10;
  spec.hidden = {16};
  fedsim::RngStream wrng = fedsim::RngStream::derive(40, "dec-w");
  const fedsim::ParamVector w = fedsim::init_params(spec, wrng);
  const Eigen::VectorXd x_true = data.images.row(1).transpose();
  const fedsim::ParamVector g = fedsim::per_example_grad(spec, w, x_true, data.labels[1]);

  AttackConfig cfg;
  cfg.dummy_param = DummyParam::kDecoder;
  cfg.latent_dim = 6;
  cfg.surrogates = {"mean"};
  cfg.recon_restarts = 1;
  cfg.recon_iterations = 120;
  cfg.recon_batch = 1;
  const auto state = fedsim::reconstruct(g.values, spec, w, cfg, 1, 1, &ae, 41, 0);
  CHECK(state.final_loss < state.initial_loss);
  CHECK(state.dummies.minCoeff() >= 0.0);
  CHECK(state.dummies.maxCoeff() <= 1.0);
  CHECK(state.dummies.rows() == 1);
}

TEST_CASE("soft_median surrogate fits a median-aggregated target better than mean") {
  // True server rule = coordinate median over M = 4 clients, one of which is
  // far off; count which surrogate the attacker settles on across 5 seeds.
  fedsim::ModelSpec spec;
  spec.input_dim = 36;
  spec.class_count = 4;
  spec.hidden = {10};
  fedsim::RngStream data_rng = fedsim::RngStream::derive(42, "sm-data");
  const fedsim::Dataset data = fedsim::make_synthetic_dataset(16, 6, 6, 4, data_rng);

  int soft_median_wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    fedsim::RngStream wrng = fedsim::RngStream::derive(seed, "sm-w");
    const fedsim::ParamVector w = fedsim::init_params(spec, wrng);
    std::vector<Eigen::VectorXd> client_grads;
    for (int m = 0; m < 4; ++m) {
      Eigen::VectorXd g = fedsim::per_example_grad(spec, w, data.images.row(m).transpose(),
                                                   data.labels[static_cast<std::size_t>(m)]).values;
      if (m == 3) g *= 25.0;  // outlier client the median suppresses
      client_grads.push_back(g);
    }
    Eigen::VectorXd target(client_grads[0].size());
    for (Eigen::Index j = 0; j < target.size(); ++j) {
      std::array<double, 4> col{client_grads[0](j), client_grads[1](j), client_grads[2](j),
                                client_grads[3](j)};
      std::sort(col.begin(), col.end());
      target(j) = 0.5 * (col[1] + col[2]);
    }
    AttackConfig cfg;
    cfg.dummy_param = DummyParam::kPixel;
    cfg.surrogates = {"mean", "soft_median"};
    cfg.soft_median_temperature = 0.05;
    cfg.recon_restarts = 1;
    cfg.recon_iterations = 120;
    cfg.recon_batch = 1;
    const auto state = fedsim::reconstruct(target, spec, w, cfg, 4, 1, nullptr, seed, 0, 2);
    if (state.chosen_surrogate == "soft_median") ++soft_median_wins;
  }
  CHECK(soft_median_wins >= 3);
}

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  cfg.backdoor.pixel_indices = {999};
  CHECK_THROWS_AS(cfg.validate(64), fedsim::ConfigError);
  AttackConfig cfg2;
  cfg2.recon_step = -1.0;
  CHECK_THROWS_AS(cfg2.validate(64), fedsim::ConfigError);
}
