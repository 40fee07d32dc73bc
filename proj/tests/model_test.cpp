#include <doctest.h>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"
#include "fedsim/model.hpp"
#include "test_util.hpp"

using fedsim::ModelSpec;
using fedsim::ParamVector;
using testutil::finite_difference;
using testutil::rel_error;

namespace {

ModelSpec linear_spec(int d_in, int classes) {
  ModelSpec s;
  s.input_dim = d_in;
  s.class_count = classes;
  return s;
}

ParamVector zero_params(const ModelSpec& spec) {
  ParamVector p;
  p.values = Eigen::VectorXd::Zero(fedsim::param_dim(spec));
  p.slices = fedsim::param_slices(spec);
  return p;
}

}  // namespace

TEST_CASE("parameter layout partitions [0, d) exactly") {
  ModelSpec spec;
  spec.input_dim = 7;
  spec.class_count = 3;
  spec.hidden = {5, 4};
  const auto slices = fedsim::param_slices(spec);
  int expected_offset = 0;
  for (const auto& s : slices) {
    CHECK(s.offset == expected_offset);
    expected_offset += s.length();
  }
  CHECK(expected_offset == fedsim::param_dim(spec));
  CHECK(fedsim::param_dim(spec) == 7 * 5 + 5 + 5 * 4 + 4 + 4 * 3 + 3);
}

TEST_CASE("orthogonal init: W^T W = I for a square weight") {
  ModelSpec spec = linear_spec(8, 8);
  spec.init = fedsim::InitScheme::kOrthogonal;
  fedsim::RngStream rng = fedsim::RngStream::derive(1, "orth");
  const ParamVector p = fedsim::init_params(spec, rng);
  const auto t = fedsim::unpack_params(spec, p.values);
  const Eigen::MatrixXd wtw = t[0].transpose() * t[0];
  CHECK((wtw - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(t[1].norm() == 0.0);  // bias zero
}

TEST_CASE("kaiming uniform: bound and variance") {
  // fan_in = 100 so the bound is 0.1 and the variance 1/300; 1000 x 100
  // weights give 1e5 draws.
  ModelSpec spec = linear_spec(100, 1000);
  spec.init = fedsim::InitScheme::kKaimingUniform;
  fedsim::RngStream rng = fedsim::RngStream::derive(2, "kaiming");
  const ParamVector p = fedsim::init_params(spec, rng);
  const auto t = fedsim::unpack_params(spec, p.values);
  CHECK(t[0].cwiseAbs().maxCoeff() <= 0.1);
  const double mean = t[0].mean();
  const double var = (t[0].array() - mean).square().mean();
  CHECK(var == doctest::Approx(1.0 / 300.0).epsilon(0.2));
}

TEST_CASE("lecun uniform: bound sqrt(3/fan_in)") {
  ModelSpec spec = linear_spec(3, 50);
  spec.init = fedsim::InitScheme::kLecunUniform;
  fedsim::RngStream rng = fedsim::RngStream::derive(3, "lecun");
  const ParamVector p = fedsim::init_params(spec, rng);
  const auto t = fedsim::unpack_params(spec, p.values);
  CHECK(t[0].cwiseAbs().maxCoeff() <= 1.0);
  CHECK(t[1].norm() == 0.0);
}

TEST_CASE("orthogonal falls back for a degenerate weight shape") {
  fedsim::set_log_enabled(false);
  ModelSpec spec;
  spec.input_dim = 1;
  spec.class_count = 4;  // weight (4, 1) has a single column: not a matrix case
  spec.init = fedsim::InitScheme::kOrthogonal;
  fedsim::RngStream rng = fedsim::RngStream::derive(4, "orth-fallback");
  const ParamVector p = fedsim::init_params(spec, rng);
  const auto t = fedsim::unpack_params(spec, p.values);
  CHECK(t[0].cwiseAbs().maxCoeff() <= std::sqrt(3.0));  // lecun bound at fan_in 1
  fedsim::set_log_enabled(true);
}

TEST_CASE("forward closed forms") {
  SUBCASE("all-zero params give all-zero logits") {
    ModelSpec spec;
    spec.input_dim = 4;
    spec.class_count = 3;
    spec.hidden = {5};
    const ParamVector p = zero_params(spec);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(2, 4);
    CHECK(fedsim::forward(spec, p, x).norm() == 0.0);
  }
  SUBCASE("identity single layer") {
    ModelSpec spec = linear_spec(2, 2);
    ParamVector p = zero_params(spec);
    p.values(0) = 1.0;  // W(0,0); column-major (2x2): [w00 w10 w01 w11]
    p.values(3) = 1.0;  // W(1,1)
    Eigen::MatrixXd x(1, 2);
    x << 1.0, 2.0;
    const Eigen::MatrixXd logits = fedsim::forward(spec, p, x);
    CHECK(logits(0, 0) == doctest::Approx(1.0));
    CHECK(logits(0, 1) == doctest::Approx(2.0));
  }
  SUBCASE("forward is pure") {
    ModelSpec spec;
    spec.input_dim = 6;
    spec.class_count = 4;
    spec.hidden = {8};
    fedsim::RngStream rng = fedsim::RngStream::derive(5, "pure");
    const ParamVector p = fedsim::init_params(spec, rng);
    const Eigen::MatrixXd x = testutil::random_tensor(3, 6, rng);
    const Eigen::MatrixXd a = fedsim::forward(spec, p, x);
    const Eigen::MatrixXd b = fedsim::forward(spec, p, x);
    CHECK((a - b).norm() == 0.0);
  }
}

TEST_CASE("cross-entropy: non-negative, ln(C) at zero logits") {
  ModelSpec spec;
  spec.input_dim = 5;
  spec.class_count = 10;
  spec.hidden = {4};
  const ParamVector p = zero_params(spec);
  fedsim::RngStream rng = fedsim::RngStream::derive(6, "celoss");
  const Eigen::MatrixXd x = testutil::random_tensor(8, 5, rng);
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(rng.uniform_int(10));
  const double loss = fedsim::mean_loss(spec, p, x, labels);
  CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  const ParamVector q = fedsim::init_params(spec, rng);
  CHECK(fedsim::mean_loss(spec, q, x, labels) >= 0.0);
}

TEST_CASE("per-example gradient: closed-form softmax case") {
  // Single linear layer, W = 0, x = [1, 0], y = 0: dL/dW = (p - e_y) x^T
  // with p = [0.5, 0.5].
  ModelSpec spec = linear_spec(2, 2);
  const ParamVector p = zero_params(spec);
  Eigen::VectorXd x(2);
  x << 1.0, 0.0;
  const ParamVector g = fedsim::per_example_grad(spec, p, x, 0);
  const auto t = fedsim::unpack_params(spec, g.values);
  CHECK(t[0](0, 0) == doctest::Approx(-0.5));
  CHECK(t[0](0, 1) == doctest::Approx(0.0));
  CHECK(t[0](1, 0) == doctest::Approx(0.5));
  CHECK(t[0](1, 1) == doctest::Approx(0.0));
}

TEST_CASE("per-example gradient matches finite differences") {
  ModelSpec spec;
  spec.input_dim = 5;
  spec.class_count = 3;
  spec.hidden = {4};
  fedsim::RngStream rng = fedsim::RngStream::derive(7, "fd-grad");
  const ParamVector w = fedsim::init_params(spec, rng);
  const Eigen::VectorXd x = testutil::random_tensor(5, 1, rng).col(0);
  const int y = 2;
  const ParamVector g = fedsim::per_example_grad(spec, w, x, y);

  Eigen::MatrixXd xrow(1, 5);
  xrow.row(0) = x.transpose();
  const auto loss_at = [&](const Eigen::MatrixXd& flat) {
    ParamVector pv = w;
    pv.values = Eigen::Map<const Eigen::VectorXd>(flat.data(), flat.size());
    return fedsim::mean_loss(spec, pv, xrow, {y});
  };
  Eigen::MatrixXd flat(w.values.size(), 1);
  flat.col(0) = w.values;
  const Eigen::MatrixXd fd = finite_difference(loss_at, flat);
  CHECK(rel_error(g.values, fd.col(0)) <= 1e-6);
}

TEST_CASE("batch gradient equals the mean of per-example gradients") {
  ModelSpec spec;
  spec.input_dim = 6;
  spec.class_count = 4;
  spec.hidden = {5};
  fedsim::RngStream rng = fedsim::RngStream::derive(8, "batch-mean");
  const ParamVector w = fedsim::init_params(spec, rng);
  const int batch = 5;
  const Eigen::MatrixXd x = testutil::random_tensor(batch, 6, rng);
  std::vector<int> labels;
  for (int i = 0; i < batch; ++i) labels.push_back(rng.uniform_int(4));

  fedsim::LossProgram prog(spec, batch);
  Eigen::VectorXd batch_grad;
  prog.gradient(w, x, fedsim::one_hot(labels, 4), batch_grad);

  Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(w.values.size());
  for (int i = 0; i < batch; ++i) {
    mean_grad += fedsim::per_example_grad(spec, w, x.row(i).transpose(), labels[static_cast<std::size_t>(i)]).values;
  }
  mean_grad /= batch;
  CHECK((batch_grad - mean_grad).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("label out of range is a contract error") {
  ModelSpec spec = linear_spec(2, 2);
  const ParamVector p = zero_params(spec);
  Eigen::VectorXd x(2);
  x << 0.5, 0.5;
  CHECK_THROWS_AS(fedsim::per_example_grad(spec, p, x, 2), fedsim::ContractError);
  CHECK_THROWS_AS(fedsim::per_example_grad(spec, p, x, -1), fedsim::ContractError);
}

TEST_CASE("graph forward agrees with the plain forward pass") {
  ModelSpec spec;
  spec.input_dim = 9;
  spec.class_count = 4;
  spec.hidden = {6};
  spec.activation = fedsim::Activation::kTanh;
  fedsim::RngStream rng = fedsim::RngStream::derive(9, "fwd-agree");
  const ParamVector w = fedsim::init_params(spec, rng);
  const Eigen::MatrixXd x = testutil::random_tensor(3, 9, rng);
  std::vector<int> labels = {0, 1, 2};

  const double plain = fedsim::mean_loss(spec, w, x, labels);
  fedsim::LossProgram prog(spec, 3);
  const double graph = prog.loss(w, x, fedsim::one_hot(labels, 4));
  CHECK(plain == doctest::Approx(graph).epsilon(1e-12));
}
