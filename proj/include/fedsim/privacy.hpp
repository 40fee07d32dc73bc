#ifndef FEDSIM_PRIVACY_HPP
#define FEDSIM_PRIVACY_HPP

#include <Eigen/Dense>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// Client-side local DP knobs. `sigma` is the noise multiplier; the injected
// per-coordinate noise has standard deviation (clip/batch) * sigma.
struct DpConfig {
  bool enabled = false;
  double clip = 4.0;
  double sigma = 0.0;
  double delta = 1e-5;
  double calibration_c = 1.0;

  void validate() const;
};

// g / max{1, ||g||_2 / clip}: norm capped at clip, direction preserved, zero
// maps to itself.
Eigen::VectorXd clip_gradient(const Eigen::VectorXd& g, double clip);

// (1/B) sum_i clip(g_i, C) + n with n ~ N(0, (C/B)^2 sigma^2 I). Summation is
// in index order, so sigma = 0 reproduces the clipped mean bit-exactly.
Eigen::VectorXd privatize_batch(const std::vector<Eigen::VectorXd>& per_example_grads,
                                double clip, double sigma, RngStream& rng);

// sigma = c * q * sqrt(total_steps * ln(1/delta)) / epsilon.
double calibrate_sigma(double sampling_rate, double total_steps, double delta,
                       double epsilon, double calibration_c);

// Inverse of calibrate_sigma; the value is a nominal heuristic budget, not an
// accountant output. sigma = 0 reports epsilon = +inf.
double report_epsilon(double sigma, double sampling_rate, double total_steps,
                      double delta, double calibration_c);

}  // namespace fedsim

#endif  // FEDSIM_PRIVACY_HPP
