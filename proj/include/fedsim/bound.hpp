#ifndef FEDSIM_BOUND_HPP
#define FEDSIM_BOUND_HPP

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// Inputs to the reconstruction-error bound diagnostic.
struct BoundInputs {
  double objective_gap = 0.0;  // Delta >= 0
  double lipschitz_grad = 1.0; // L_g > 0
  double lipschitz_recon = 1.0;// L_psi > 0
  double clip = 4.0;           // C
  double sigma = 0.0;
  int clients = 1;             // M
  int batch = 1;               // B
  int param_dim = 1;           // d
  int input_dim = 1;           // d_in
  double data_norm = 1.0;      // upsilon
  double base_error = 0.0;     // e^(0)
  int round = 0;               // k
  double eta = 0.0;            // <= 0 means "not supplied"; uses 1/L_g

  void validate() const;
};

// rho0 = 2 L_psi sqrt(2k / eta); with eta = 1/L_g this is 2 L_psi sqrt(2 L_g k).
double rho0(double lipschitz_recon, double lipschitz_grad, int round, double eta = 0.0);

// rho1 = 2 sqrt(2d) L_psi C k / (sqrt(M) B).
double rho1(double lipschitz_recon, double clip, int round, int clients, int batch,
            int param_dim);

// min{ e0 + rho0*Delta + rho1*sigma, 2*upsilon } / sqrt(d_in).
double theorem_bound(const BoundInputs& in);

// Max sampled ratio ||f(a)-f(b)|| / ||a-b|| over random probe pairs around
// the given center; a diagnostic estimate, not a certified constant.
double estimate_lipschitz(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& map,
                          const Eigen::VectorXd& center, double radius, int probe_count,
                          RngStream& rng);

struct ConstantEstimates {
  double lipschitz_grad = 0.0;
  double lipschitz_recon = 0.0;
  double objective_gap = 0.0;
  double base_error = 0.0;
  double data_norm = 0.0;
  bool equal_norm_violated = false;  // real images rarely share one norm
};

// Objective gap sqrt(max(f(w0) - f(wk), 0)) from a recorded loss trace.
double objective_gap_from_losses(const std::vector<double>& losses, int round);

// e^(0): worst per-example pixel error at round 0, scaled back to the
// unnormalized norm (RMSE * sqrt(d_in)).
double base_error_from_round0(const std::vector<double>& per_example_rmse, int input_dim);

// upsilon = max row norm; flags violation of the equal-norm assumption.
double data_norm_bound(const Eigen::MatrixXd& images, bool* violated);

}  // namespace fedsim

#endif  // FEDSIM_BOUND_HPP
