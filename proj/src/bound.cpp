#include "fedsim/bound.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fedsim/errors.hpp"

namespace fedsim {

void BoundInputs::validate() const {
  if (objective_gap < 0.0) throw ContractError("BoundInputs: objective gap must be >= 0");
  if (lipschitz_grad <= 0.0 || lipschitz_recon <= 0.0) {
    throw ContractError("BoundInputs: Lipschitz constants must be positive");
  }
  if (clip <= 0.0) throw ContractError("BoundInputs: clip must be positive");
  if (sigma < 0.0) throw ContractError("BoundInputs: sigma must be >= 0");
  if (clients < 1 || batch < 1 || param_dim < 1) throw ContractError("BoundInputs: bad sizes");
  if (input_dim < 1) throw ContractError("BoundInputs: input_dim must be positive");
  if (data_norm <= 0.0) throw ContractError("BoundInputs: data norm must be positive");
  if (base_error < 0.0 || round < 0) throw ContractError("BoundInputs: bad base error or round");
}

double rho0(double lipschitz_recon, double lipschitz_grad, int round, double eta) {
  if (round < 0) throw ContractError("rho0: round must be >= 0");
  const double effective_eta = eta > 0.0 ? eta : 1.0 / lipschitz_grad;
  return 2.0 * lipschitz_recon * std::sqrt(2.0 * round / effective_eta);
}

double rho1(double lipschitz_recon, double clip, int round, int clients, int batch,
            int param_dim) {
  if (round < 0 || clients < 1 || batch < 1 || param_dim < 1) {
    throw ContractError("rho1: bad arguments");
  }
  return 2.0 * std::sqrt(2.0 * param_dim) * lipschitz_recon * clip * round /
         (std::sqrt(static_cast<double>(clients)) * batch);
}

double theorem_bound(const BoundInputs& in) {
  in.validate();
  const double r0 = rho0(in.lipschitz_recon, in.lipschitz_grad, in.round, in.eta);
  const double r1 = rho1(in.lipschitz_recon, in.clip, in.round, in.clients, in.batch,
                         in.param_dim);
  const double open_form = in.base_error + r0 * in.objective_gap + r1 * in.sigma;
  return std::min(open_form, 2.0 * in.data_norm) / std::sqrt(static_cast<double>(in.input_dim));
}

double estimate_lipschitz(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                          const Eigen::VectorXd& center, double radius, int probe_count,
                          RngStream& rng) {
  if (probe_count < 2) throw ContractError("estimate_lipschitz: need at least 2 probes");
  auto sample = [&]() {
    Eigen::VectorXd p = center;
    for (Eigen::Index i = 0; i < p.size(); ++i) p(i) += radius * rng.gaussian();
    return p;
  };
  double best = 0.0;
  for (int i = 0; i < probe_count; ++i) {
    const Eigen::VectorXd a = sample();
    const Eigen::VectorXd b = sample();
    const double denom = (a - b).norm();
    if (denom < 1e-12) continue;
    best = std::max(best, (map(a) - map(b)).norm() / denom);
  }
  return best;
}

double objective_gap_from_losses(const std::vector<double>& losses, int round) {
  if (losses.empty() || round < 0 || round >= static_cast<int>(losses.size())) {
    throw ContractError("objective_gap_from_losses: round outside recorded trace");
  }
  const double drop = losses.front() - losses[static_cast<std::size_t>(round)];
  return std::sqrt(std::max(drop, 0.0));
}

double base_error_from_round0(const std::vector<double>& per_example_rmse, int input_dim) {
  if (per_example_rmse.empty()) throw ContractError("base_error_from_round0: no pairs");
  const double worst = *std::max_element(per_example_rmse.begin(), per_example_rmse.end());
  return worst * std::sqrt(static_cast<double>(input_dim));
}

double data_norm_bound(const Eigen::MatrixXd& images, bool* violated) {
  if (images.rows() == 0) throw ContractError("data_norm_bound: empty data");
  double max_norm = 0.0;
  double min_norm = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    const double n = images.row(i).norm();
    max_norm = std::max(max_norm, n);
    min_norm = std::min(min_norm, n);
  }
  if (violated != nullptr) {
    *violated = (max_norm - min_norm) > 1e-9 * std::max(1.0, max_norm);
  }
  return max_norm;
}

}  // namespace fedsim
