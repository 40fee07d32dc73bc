#include "fedsim/privacy.hpp"

#include <cmath>
#include <limits>

#include "fedsim/errors.hpp"

namespace fedsim {

void DpConfig::validate() const {
  if (!enabled) return;
  if (clip <= 0.0) throw ConfigError("dp.clip must be positive");
  if (sigma < 0.0) throw ConfigError("dp.sigma must be non-negative");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("dp.delta must lie in (0,1)");
  if (calibration_c <= 0.0) throw ConfigError("dp.c must be positive");
}

Eigen::VectorXd clip_gradient(const Eigen::VectorXd& g, double clip) {
  if (clip <= 0.0) throw ContractError("clip_gradient: clip bound must be positive");
  const double norm = g.norm();
  const double scale = std::max(1.0, norm / clip);
  return g / scale;
}

Eigen::VectorXd privatize_batch(const std::vector<Eigen::VectorXd>& per_example_grads,
                                double clip, double sigma, RngStream& rng) {
  if (per_example_grads.empty()) throw ContractError("privatize_batch: empty batch");
  const double batch = static_cast<double>(per_example_grads.size());
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(per_example_grads.front().size());
  for (const auto& g : per_example_grads) {
    if (g.size() != acc.size()) throw ContractError("privatize_batch: dimension mismatch");
    acc += clip_gradient(g, clip);
  }
  acc /= batch;
  if (sigma > 0.0) {
    const double noise_std = (clip / batch) * sigma;
    for (Eigen::Index i = 0; i < acc.size(); ++i) acc(i) += noise_std * rng.gaussian();
  }
  return acc;
}

double calibrate_sigma(double sampling_rate, double total_steps, double delta,
                       double epsilon, double calibration_c) {
  if (epsilon <= 0.0) throw ConfigError("calibrate_sigma: epsilon must be positive");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("calibrate_sigma: delta must lie in (0,1)");
  return calibration_c * sampling_rate * std::sqrt(total_steps * std::log(1.0 / delta)) / epsilon;
}

double report_epsilon(double sigma, double sampling_rate, double total_steps,
                      double delta, double calibration_c) {
  if (sigma < 0.0) throw ContractError("report_epsilon: sigma must be non-negative");
  if (delta <= 0.0 || delta >= 1.0) throw ConfigError("report_epsilon: delta must lie in (0,1)");
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  return calibration_c * sampling_rate * std::sqrt(total_steps * std::log(1.0 / delta)) / sigma;
}

}  // namespace fedsim
