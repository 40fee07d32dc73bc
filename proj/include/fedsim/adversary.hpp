#ifndef FEDSIM_ADVERSARY_HPP
#define FEDSIM_ADVERSARY_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fedsim/model.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class PoisonKind { kPassive, kSignFlip, kGaussian, kBackdoor };
enum class DummyParam { kPixel, kDecoder };
enum class MatchObjective { kSquaredError, kCosineTv };  // kCosineTv: InvertGrad-style

PoisonKind poison_kind_from_string(const std::string& s);

struct BackdoorPattern {
  std::vector<int> pixel_indices;
  std::vector<double> values;
  int target_label = 0;
};

// 4x4 block of full-intensity pixels in the bottom-right corner.
BackdoorPattern default_backdoor_pattern(int image_rows, int image_cols, int target_label = 0);

struct AttackConfig {
  PoisonKind poison = PoisonKind::kPassive;
  double sign_flip_scale = 1.0;   // kappa
  double gaussian_sigma = 1.0;    // sigma_zeta
  BackdoorPattern backdoor;

  int recon_every = 1;  // rounds between reconstructions; 0 disables
  int recon_iterations = 200;
  double recon_step = 0.05;
  int recon_restarts = 3;
  std::vector<std::string> surrogates = {"mean", "soft_median", "pseudo_krum"};
  double soft_median_temperature = 1.0;
  DummyParam dummy_param = DummyParam::kDecoder;
  MatchObjective objective = MatchObjective::kSquaredError;
  double tv_weight = 1e-2;
  int image_rows = 0;  // needed by the TV penalty; 0 = square inferred
  int recon_batch = 4;  // B_rec per simulated client
  int latent_dim = 16;
  int decoder_hidden = 64;
  int decoder_epochs = 3;
  int decoder_batch = 16;
  double decoder_lr = 1e-2;

  void validate(int input_dim) const;
};

// --- Observation and poisoning -------------------------------------------

// (w_k - w_next) / eta: the aggregated gradient the attacker reads off two
// successive broadcasts.
Eigen::VectorXd observe_global_grad(const Eigen::VectorXd& w_k,
                                    const Eigen::VectorXd& w_next, double eta);

Eigen::VectorXd poison_sign_flip(const Eigen::VectorXd& g, double kappa);
Eigen::VectorXd poison_gaussian(int dim, double sigma, RngStream& rng);

// Writes the pattern pixels (clamped to [0,1]) and relabels the whole batch.
void poison_backdoor(Eigen::MatrixXd& batch, std::vector<int>& labels,
                     const BackdoorPattern& pattern);

// --- Surrogate aggregation functions (value level) ------------------------

Eigen::VectorXd surrogate_mean(const std::vector<Eigen::VectorXd>& grads);

// Coordinate-wise softmin-weighted average around the mean estimate;
// temperature controls how sharply weight concentrates on near-median values.
Eigen::VectorXd surrogate_soft_median(const std::vector<Eigen::VectorXd>& grads,
                                      double temperature);

// Uniformly sampled input vector (the surrogate picks a client blindly).
Eigen::VectorXd surrogate_pseudo_krum(const std::vector<Eigen::VectorXd>& grads,
                                      RngStream& rng);

// --- Pretrained autoencoder ------------------------------------------------

// MLP autoencoder: d_in -> hidden(tanh) -> latent -> hidden(tanh) ->
// d_in(sigmoid). Only the decoder half participates in the attack.
struct Autoencoder {
  int input_dim = 0;
  int hidden = 0;
  int latent_dim = 0;
  // enc_w1 (h,d_in), enc_b1, enc_w2 (z,h), enc_b2, dec_w1 (h,z), dec_b1,
  // dec_w2 (d_in,h), dec_b2 — flattened in that order.
  Eigen::VectorXd params;

  std::vector<std::pair<int, int>> tensor_shapes() const;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd reconstruct_pixels(const Eigen::MatrixXd& x) const;
};

// Trains by pixel MSE on the attacker's local images; per-epoch training MSE
// is appended to `epoch_mse` when provided.
Autoencoder pretrain_decoder(const Eigen::MatrixXd& attacker_images, int latent_dim,
                             int hidden, int epochs, int batch, double lr,
                             RngStream& rng, std::vector<double>* epoch_mse = nullptr);

// --- Reconstruction --------------------------------------------------------

struct ReconstructionState {
  Eigen::MatrixXd dummies;       // (clients * recon_batch, d_in), clamped to [0,1]
  Eigen::MatrixXd label_logits;  // (clients * recon_batch, class_count)
  std::string chosen_surrogate;
  int chosen_restart = 0;
  double final_loss = 0.0;
  double initial_loss = 0.0;
  std::vector<double> loss_trace;  // accepted losses of the winning branch
  int aborted_branches = 0;
};

// Runs the inversion: for every surrogate and restart, first-order optimization of
// latents (or pixels) and label logits against ||Phi_q({dummy grads}) * tau -
// observed||^2, with halving backtracking; returns the branch with minimal
// final loss (ties by surrogate order, then restart).
ReconstructionState reconstruct(const Eigen::VectorXd& observed_grad,
                                const ModelSpec& spec, const ParamVector& w,
                                const AttackConfig& cfg, int clients, int local_steps,
                                const Autoencoder* decoder, std::uint64_t seed,
                                int round, int threads = 1);

// --- Evaluation -------------------------------------------------------------

struct RmseReport {
  std::vector<double> per_pair;
  double mean = 0.0;
  double stddev = 0.0;
};

// Assignment-matched RMSE: pairs reconstructions with ground truth by
// minimum total squared pixel error (Hungarian for <= 64 pairs, greedy
// beyond), then reports per-pair sqrt(||x_hat - x||^2 / d_in). Counts are
// truncated to the smaller side with a logged note.
RmseReport rmse_eval(const Eigen::MatrixXd& reconstructions, const Eigen::MatrixXd& truth);

}  // namespace fedsim

#endif  // FEDSIM_ADVERSARY_HPP
