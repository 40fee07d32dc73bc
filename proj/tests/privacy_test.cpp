#include <doctest.h>

#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/privacy.hpp"
#include "test_util.hpp"

using fedsim::calibrate_sigma;
using fedsim::clip_gradient;
using fedsim::privatize_batch;
using fedsim::report_epsilon;

TEST_CASE("clip closed forms") {
  Eigen::VectorXd g(2);
  g << 8.0, 0.0;
  SUBCASE("norm 8, clip 4 halves the vector") {
    const Eigen::VectorXd c = clip_gradient(g, 4.0);
    CHECK(c(0) == doctest::Approx(4.0));
    CHECK(c.norm() == doctest::Approx(4.0));
  }
  SUBCASE("norm below the bound is unchanged") {
    Eigen::VectorXd small(2);
    small << 2.0, 0.0;
    CHECK((clip_gradient(small, 4.0) - small).norm() == 0.0);
  }
  SUBCASE("zero maps to zero") {
    CHECK(clip_gradient(Eigen::VectorXd::Zero(3), 4.0).norm() == 0.0);
  }
}

TEST_CASE("clip properties over 10^4 random vectors") {
  fedsim::RngStream rng = fedsim::RngStream::derive(21, "clip-props");
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = 1 + rng.uniform_int(8);
    Eigen::VectorXd g(d);
    for (int i = 0; i < d; ++i) g(i) = 4.0 * rng.gaussian();
    const double clip = 0.1 + 5.0 * rng.next_double();
    const Eigen::VectorXd c = clip_gradient(g, clip);
    CHECK(c.norm() <= clip + 1e-12);
    // idempotent
    CHECK((clip_gradient(c, clip) - c).norm() <= 1e-15 * std::max(1.0, c.norm()));
    // positively proportional to the input
    if (g.norm() > 1e-12) {
      const double ratio = c.norm() / g.norm();
      CHECK((c - ratio * g).norm() <= 1e-9 * std::max(1.0, g.norm()));
      CHECK(ratio > 0.0);
    }
  }
}

TEST_CASE("privatize_batch: sigma = 0 reproduces the clipped mean bit-exactly") {
  fedsim::RngStream rng = fedsim::RngStream::derive(22, "dp-mean");
  std::vector<Eigen::VectorXd> grads;
  for (int i = 0; i < 4; ++i) {
    Eigen::VectorXd g(3);
    for (int j = 0; j < 3; ++j) g(j) = rng.gaussian();
    grads.push_back(g);
  }
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(3);
  for (const auto& g : grads) expected += clip_gradient(g, 1.0);
  expected /= 4.0;
  fedsim::RngStream noise = fedsim::RngStream::derive(22, "noise");
  const Eigen::VectorXd out = privatize_batch(grads, 1.0, 0.0, noise);
  CHECK((out - expected).norm() == 0.0);
}

TEST_CASE("privatize_batch: single in-bound gradient passes through exactly") {
  Eigen::VectorXd g(3);
  g << 0.5, -0.25, 0.1;
  fedsim::RngStream noise = fedsim::RngStream::derive(23, "noise");
  const Eigen::VectorXd out = privatize_batch({g}, 4.0, 0.0, noise);
  CHECK((out - g).norm() == 0.0);
}

TEST_CASE("privatize_batch noise variance is (C/B)^2 sigma^2") {
  // All-zero grads, sigma = 1, C = 4, B = 2: per-coordinate variance 4.
  const int dim = 4;
  std::vector<Eigen::VectorXd> zeros(2, Eigen::VectorXd::Zero(dim));
  fedsim::RngStream noise = fedsim::RngStream::derive(24, "noise-var");
  double sum = 0.0;
  double sum_sq = 0.0;
  const int draws = 25000;  // times 4 coordinates = 1e5 samples
  for (int i = 0; i < draws; ++i) {
    const Eigen::VectorXd out = privatize_batch(zeros, 4.0, 1.0, noise);
    for (int j = 0; j < dim; ++j) {
      sum += out(j);
      sum_sq += out(j) * out(j);
    }
  }
  const double n = static_cast<double>(draws) * dim;
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  CHECK(var == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("calibrate_sigma arithmetic anchor") {
  // 0.01 * sqrt(1000 * ln(1e5)) / 1 = 1.072983...
  const double sigma = calibrate_sigma(0.01, 1000.0, 1e-5, 1.0, 1.0);
  CHECK(sigma == doctest::Approx(1.0730).epsilon(1e-4));
  // epsilon doubled -> sigma halved exactly
  CHECK(calibrate_sigma(0.01, 1000.0, 1e-5, 2.0, 1.0) == doctest::Approx(sigma / 2.0).epsilon(1e-15));
}

TEST_CASE("calibrate/report round trip") {
  const double eps = 0.7;
  const double sigma = calibrate_sigma(0.05, 500.0, 1e-5, eps, 1.3);
  CHECK(report_epsilon(sigma, 0.05, 500.0, 1e-5, 1.3) == doctest::Approx(eps).epsilon(1e-9));
}

TEST_CASE("report_epsilon edge behavior") {
  CHECK(std::isinf(report_epsilon(0.0, 0.01, 100.0, 1e-5, 1.0)));
  // monotone decreasing in sigma
  double prev = report_epsilon(0.5, 0.01, 100.0, 1e-5, 1.0);
  for (const double s : {1.0, 2.0, 4.0, 8.0}) {
    const double e = report_epsilon(s, 0.01, 100.0, 1e-5, 1.0);
    CHECK(e < prev);
    prev = e;
  }
  // monotone increasing in total steps
  CHECK(report_epsilon(1.0, 0.01, 400.0, 1e-5, 1.0) >
        report_epsilon(1.0, 0.01, 100.0, 1e-5, 1.0));
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(calibrate_sigma(0.01, 100.0, 1e-5, 0.0, 1.0), fedsim::ConfigError);
  CHECK_THROWS_AS(calibrate_sigma(0.01, 100.0, 2.0, 1.0, 1.0), fedsim::ConfigError);
  CHECK_THROWS_AS(clip_gradient(Eigen::VectorXd::Zero(2), 0.0), fedsim::ContractError);
  fedsim::DpConfig bad;
  bad.enabled = true;
  bad.clip = -1.0;
  CHECK_THROWS_AS(bad.validate(), fedsim::ConfigError);
}
