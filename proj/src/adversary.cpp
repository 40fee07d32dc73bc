#include "fedsim/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "fedsim/assignment.hpp"
#include "fedsim/autodiff.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

PoisonKind poison_kind_from_string(const std::string& s) {
  if (s == "passive") return PoisonKind::kPassive;
  if (s == "sign_flip") return PoisonKind::kSignFlip;
  if (s == "gaussian") return PoisonKind::kGaussian;
  if (s == "backdoor") return PoisonKind::kBackdoor;
  throw ConfigError("unknown attack.poison: " + s);
}

BackdoorPattern default_backdoor_pattern(int image_rows, int image_cols, int target_label) {
  BackdoorPattern p;
  p.target_label = target_label;
  const int size = std::min({4, image_rows, image_cols});
  for (int r = image_rows - size; r < image_rows; ++r) {
    for (int c = image_cols - size; c < image_cols; ++c) {
      p.pixel_indices.push_back(r * image_cols + c);
      p.values.push_back(1.0);
    }
  }
  return p;
}

void AttackConfig::validate(int input_dim) const {
  if (sign_flip_scale <= 0.0) throw ConfigError("attack.kappa must be positive");
  if (gaussian_sigma < 0.0) throw ConfigError("attack.gaussian_sigma must be non-negative");
  for (const int idx : backdoor.pixel_indices) {
    if (idx < 0 || idx >= input_dim) throw ConfigError("attack.backdoor pattern index out of range");
  }
  if (recon_every > 0) {
    if (recon_iterations < 1 || recon_restarts < 1 || recon_batch < 1) {
      throw ConfigError("attack reconstruction settings must be positive");
    }
    if (recon_step <= 0.0) throw ConfigError("attack.step must be positive");
    if (surrogates.empty()) throw ConfigError("attack.surrogates must not be empty");
  }
}

Eigen::VectorXd observe_global_grad(const Eigen::VectorXd& w_k,
                                    const Eigen::VectorXd& w_next, double eta) {
  if (eta <= 0.0) throw ContractError("observe_global_grad: eta must be positive");
  if (w_k.size() != w_next.size()) throw ContractError("observe_global_grad: dimension mismatch");
  return (w_k - w_next) / eta;
}

Eigen::VectorXd poison_sign_flip(const Eigen::VectorXd& g, double kappa) {
  return -kappa * g;
}

Eigen::VectorXd poison_gaussian(int dim, double sigma, RngStream& rng) {
  Eigen::VectorXd z(dim);
  for (int i = 0; i < dim; ++i) z(i) = sigma == 0.0 ? 0.0 : sigma * rng.gaussian();
  return z;
}

void poison_backdoor(Eigen::MatrixXd& batch, std::vector<int>& labels,
                     const BackdoorPattern& pattern) {
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    for (std::size_t p = 0; p < pattern.pixel_indices.size(); ++p) {
      batch(i, pattern.pixel_indices[p]) = std::clamp(pattern.values[p], 0.0, 1.0);
    }
  }
  for (int& y : labels) y = pattern.target_label;
}

Eigen::VectorXd surrogate_mean(const std::vector<Eigen::VectorXd>& grads) {
  if (grads.empty()) throw ContractError("surrogate_mean: empty input");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(grads.front().size());
  for (const auto& g : grads) acc += g;
  return acc / static_cast<double>(grads.size());
}

Eigen::VectorXd surrogate_soft_median(const std::vector<Eigen::VectorXd>& grads,
                                      double temperature) {
  if (grads.empty()) throw ContractError("surrogate_soft_median: empty input");
  if (temperature <= 0.0) throw ContractError("surrogate_soft_median: temperature must be positive");
  const int m = static_cast<int>(grads.size());
  const Eigen::Index d = grads.front().size();
  Eigen::VectorXd center = surrogate_mean(grads);
  Eigen::VectorXd out(d);
  std::vector<double> dist(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < d; ++j) {
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < m; ++i) {
      dist[static_cast<std::size_t>(i)] = std::abs(grads[static_cast<std::size_t>(i)](j) - center(j));
      dmin = std::min(dmin, dist[static_cast<std::size_t>(i)]);
    }
    double norm = 0.0;
    double acc = 0.0;
    for (int i = 0; i < m; ++i) {
      const double w = std::exp(-(dist[static_cast<std::size_t>(i)] - dmin) / temperature);
      norm += w;
      acc += w * grads[static_cast<std::size_t>(i)](j);
    }
    out(j) = acc / norm;
  }
  return out;
}

Eigen::VectorXd surrogate_pseudo_krum(const std::vector<Eigen::VectorXd>& grads,
                                      RngStream& rng) {
  if (grads.empty()) throw ContractError("surrogate_pseudo_krum: empty input");
  return grads[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(grads.size())))];
}

// --- Autoencoder ------------------------------------------------------------

std::vector<std::pair<int, int>> Autoencoder::tensor_shapes() const {
  return {
      {hidden, input_dim}, {1, hidden},      // encoder layer 1
      {latent_dim, hidden}, {1, latent_dim}, // encoder layer 2
      {hidden, latent_dim}, {1, hidden},     // decoder layer 1
      {input_dim, hidden}, {1, input_dim},   // decoder layer 2
  };
}

namespace {

std::vector<ad::Tensor> split_flat(const Eigen::VectorXd& flat,
                                   const std::vector<std::pair<int, int>>& shapes) {
  std::vector<ad::Tensor> out;
  int offset = 0;
  for (const auto& [r, c] : shapes) {
    out.emplace_back(Eigen::Map<const ad::Tensor>(flat.data() + offset, r, c));
    offset += r * c;
  }
  if (offset != flat.size()) throw ContractError("split_flat: size mismatch");
  return out;
}

int flat_size(const std::vector<std::pair<int, int>>& shapes) {
  int total = 0;
  for (const auto& [r, c] : shapes) total += r * c;
  return total;
}

// Simple Adam with external learning-rate control (backtracking rescales it).
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int t = 0;

  explicit Adam(Eigen::Index n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}

  void step(Eigen::VectorXd& x, const Eigen::VectorXd& g, double lr) {
    ++t;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    x -= lr * (m / bc1).cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
  }
};

}  // namespace

Eigen::MatrixXd Autoencoder::decode(const Eigen::MatrixXd& z) const {
  const auto t = split_flat(params, tensor_shapes());
  Eigen::MatrixXd h = ((z * t[4].transpose()).rowwise() + t[5].row(0)).array().tanh().matrix();
  Eigen::MatrixXd o = (h * t[6].transpose()).rowwise() + t[7].row(0);
  return (1.0 / (1.0 + (-o.array()).exp())).matrix();
}

Eigen::MatrixXd Autoencoder::reconstruct_pixels(const Eigen::MatrixXd& x) const {
  const auto t = split_flat(params, tensor_shapes());
  Eigen::MatrixXd h = ((x * t[0].transpose()).rowwise() + t[1].row(0)).array().tanh().matrix();
  Eigen::MatrixXd z = (h * t[2].transpose()).rowwise() + t[3].row(0);
  return decode(z);
}

Autoencoder pretrain_decoder(const Eigen::MatrixXd& attacker_images, int latent_dim,
                             int hidden, int epochs, int batch, double lr,
                             RngStream& rng, std::vector<double>* epoch_mse) {
  if (attacker_images.rows() == 0) throw ContractError("pretrain_decoder: empty attacker dataset");
  Autoencoder ae;
  ae.input_dim = static_cast<int>(attacker_images.cols());
  ae.hidden = hidden;
  ae.latent_dim = latent_dim;
  const auto shapes = ae.tensor_shapes();
  ae.params.resize(flat_size(shapes));
  {
    int offset = 0;
    for (const auto& [r, c] : shapes) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(c));
      for (int i = 0; i < r * c; ++i) ae.params(offset + i) = rng.uniform(-bound, bound);
      offset += r * c;
    }
  }

  const int n = static_cast<int>(attacker_images.rows());
  const int b = std::min(batch, n);

  // MSE training graph for one batch shape.
  ad::Graph g;
  const int x_leaf = g.leaf(b, ae.input_dim);
  std::vector<int> param_leaves;
  for (const auto& [r, c] : shapes) param_leaves.push_back(g.leaf(r, c));
  int h = g.tanh(g.affine(x_leaf, param_leaves[0], param_leaves[1]));
  int z = g.affine(h, param_leaves[2], param_leaves[3]);
  int h2 = g.tanh(g.affine(z, param_leaves[4], param_leaves[5]));
  int out = g.sigmoid(g.affine(h2, param_leaves[6], param_leaves[7]));
  const int loss = g.mean_all(g.mul(g.sub(out, x_leaf), g.sub(out, x_leaf)));
  g.freeze();

  Adam adam(ae.params.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int steps = 0;
    for (int start = 0; start + b <= n; start += b) {
      Eigen::MatrixXd xb(b, ae.input_dim);
      for (int i = 0; i < b; ++i) xb.row(i) = attacker_images.row(order[static_cast<std::size_t>(start + i)]);
      g.bind(x_leaf, xb);
      const auto tensors = split_flat(ae.params, shapes);
      for (std::size_t i = 0; i < tensors.size(); ++i) g.bind(param_leaves[i], tensors[i]);
      g.evaluate(loss);
      g.backward(loss);
      Eigen::VectorXd grad(ae.params.size());
      int offset = 0;
      for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& [r, c] = shapes[i];
        Eigen::Map<ad::Tensor>(grad.data() + offset, r, c) = g.grad(param_leaves[i]);
        offset += r * c;
      }
      epoch_loss += g.value(loss)(0, 0);
      ++steps;
      adam.step(ae.params, grad, lr);
    }
    if (epoch_mse != nullptr && steps > 0) epoch_mse->push_back(epoch_loss / steps);
  }
  return ae;
}

// --- Reconstruction ----------------------------------------------------------

namespace {

// One surrogate branch: the inversion graph plus the bookkeeping to bind
// leaves from a flat optimization vector.
struct InversionProgram {
  ad::Graph g;
  std::vector<int> input_leaves;   // per client: pixel or latent leaf
  std::vector<int> label_leaves;   // per client: label logits leaf
  std::vector<int> select_leaves;  // pseudo_krum one-hot scalars (may be empty)
  std::vector<int> pixel_nodes;    // per client: x in [0,1]
  int match_loss = -1;
  int input_rows = 0;
  int input_cols = 0;
  int label_cols = 0;
  int likely_label = 0;  // most negative coordinate of the observed output-bias gradient

  int theta_size(int clients) const {
    return clients * input_rows * (input_cols + label_cols);
  }

  void bind_theta(const Eigen::VectorXd& theta) {
    const int clients = static_cast<int>(input_leaves.size());
    int offset = 0;
    for (int m = 0; m < clients; ++m) {
      g.bind(input_leaves[static_cast<std::size_t>(m)],
             Eigen::Map<const ad::Tensor>(theta.data() + offset, input_rows, input_cols));
      offset += input_rows * input_cols;
    }
    for (int m = 0; m < clients; ++m) {
      g.bind(label_leaves[static_cast<std::size_t>(m)],
             Eigen::Map<const ad::Tensor>(theta.data() + offset, input_rows, label_cols));
      offset += input_rows * label_cols;
    }
  }

  Eigen::VectorXd grad_theta() {
    const int clients = static_cast<int>(input_leaves.size());
    Eigen::VectorXd out(theta_size(clients));
    int offset = 0;
    for (int m = 0; m < clients; ++m) {
      Eigen::Map<ad::Tensor>(out.data() + offset, input_rows, input_cols) =
          g.grad(input_leaves[static_cast<std::size_t>(m)]);
      offset += input_rows * input_cols;
    }
    for (int m = 0; m < clients; ++m) {
      Eigen::Map<ad::Tensor>(out.data() + offset, input_rows, label_cols) =
          g.grad(label_leaves[static_cast<std::size_t>(m)]);
      offset += input_rows * label_cols;
    }
    return out;
  }
};

// Elementwise |a - b| from the closed op set.
int abs_diff(ad::Graph& g, int a, int b) {
  return g.add(g.relu(g.sub(a, b)), g.relu(g.sub(b, a)));
}

// Elementwise min via a - relu(a - b).
int elementwise_min(ad::Graph& g, int a, int b) {
  return g.sub(a, g.relu(g.sub(a, b)));
}

// Soft median across client nodes, coordinate-wise, with max-stabilized
// weights so tiny temperatures stay finite.
int soft_median_nodes(ad::Graph& g, const std::vector<int>& grads, int mean_node,
                      double temperature) {
  const int m = static_cast<int>(grads.size());
  std::vector<int> dist;
  dist.reserve(static_cast<std::size_t>(m));
  for (const int gm : grads) dist.push_back(abs_diff(g, gm, mean_node));
  int dmin = dist[0];
  for (int i = 1; i < m; ++i) dmin = elementwise_min(g, dmin, dist[static_cast<std::size_t>(i)]);
  std::vector<int> weight;
  weight.reserve(static_cast<std::size_t>(m));
  int total = -1;
  for (int i = 0; i < m; ++i) {
    const int e = g.exp(g.scale(g.sub(dist[static_cast<std::size_t>(i)], dmin), -1.0 / temperature));
    weight.push_back(e);
    total = total < 0 ? e : g.add(total, e);
  }
  const int inv_total = g.recip(total);
  int acc = -1;
  for (int i = 0; i < m; ++i) {
    const int term = g.mul(g.mul(weight[static_cast<std::size_t>(i)], inv_total), grads[static_cast<std::size_t>(i)]);
    acc = acc < 0 ? term : g.add(acc, term);
  }
  return acc;
}

// Constant matrices mapping a flattened (rows x cols) image to horizontal and
// vertical neighbor differences, for the total-variation penalty.
ad::Tensor difference_operator(int rows, int cols, bool horizontal) {
  const int out = horizontal ? rows * (cols - 1) : (rows - 1) * cols;
  ad::Tensor d = ad::Tensor::Zero(out, rows * cols);
  int k = 0;
  if (horizontal) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c + 1 < cols; ++c, ++k) {
        d(k, r * cols + c + 1) = 1.0;
        d(k, r * cols + c) = -1.0;
      }
    }
  } else {
    for (int r = 0; r + 1 < rows; ++r) {
      for (int c = 0; c < cols; ++c, ++k) {
        d(k, (r + 1) * cols + c) = 1.0;
        d(k, r * cols + c) = -1.0;
      }
    }
  }
  return d;
}

InversionProgram build_inversion_program(const Eigen::VectorXd& observed_grad,
                                         const ModelSpec& spec, const ParamVector& w,
                                         const AttackConfig& cfg, int clients,
                                         int local_steps, const Autoencoder* decoder,
                                         const std::string& surrogate) {
  InversionProgram prog;
  ad::Graph& g = prog.g;
  const bool pixels = cfg.dummy_param == DummyParam::kPixel;
  prog.input_rows = cfg.recon_batch;
  prog.input_cols = pixels ? spec.input_dim : decoder->latent_dim;
  prog.label_cols = spec.class_count;

  // Model parameters and per-layer targets enter as constants.
  const auto w_tensors = unpack_params(spec, w.values);
  std::vector<int> w_nodes;
  for (const auto& t : w_tensors) w_nodes.push_back(g.constant(t));
  const auto slices = param_slices(spec);
  std::vector<int> target_nodes;
  for (const auto& s : slices) {
    target_nodes.push_back(g.constant(
        Eigen::Map<const ad::Tensor>(observed_grad.data() + s.offset, s.rows, s.cols)));
  }

  std::vector<int> dec_nodes;
  if (!pixels) {
    const auto dec_tensors = split_flat(decoder->params, decoder->tensor_shapes());
    for (const auto& t : dec_tensors) dec_nodes.push_back(g.constant(t));
  }

  // The softmax-xent output-bias gradient is p - y averaged over the batch;
  // its most negative coordinate marks the dominant true label. Half the
  // restarts start their label logits biased there.
  {
    const auto& bias_slice = slices.back();
    int best = 0;
    for (int c = 1; c < bias_slice.length(); ++c) {
      if (observed_grad(bias_slice.offset + c) < observed_grad(bias_slice.offset + best)) best = c;
    }
    prog.likely_label = best;
  }

  // Per simulated client: dummy pixels, soft labels, loss, parameter grads.
  std::vector<std::vector<int>> client_grads;  // [client][param tensor]
  for (int m = 0; m < clients; ++m) {
    const int input = g.leaf(prog.input_rows, prog.input_cols);
    prog.input_leaves.push_back(input);
    int x;
    if (pixels) {
      x = g.sigmoid(input);
    } else {
      // decoder tail: tanh hidden then sigmoid output
      const int h = g.tanh(g.affine(input, dec_nodes[4], dec_nodes[5]));
      x = g.sigmoid(g.affine(h, dec_nodes[6], dec_nodes[7]));
    }
    prog.pixel_nodes.push_back(x);
    const int logits_leaf = g.leaf(prog.input_rows, prog.label_cols);
    prog.label_leaves.push_back(logits_leaf);
    const int y = g.softmax(logits_leaf);
    const int loss = build_loss_on(g, spec, x, y, w_nodes);
    client_grads.push_back(g.grad_nodes(loss, w_nodes));
  }

  // Surrogate aggregation per parameter tensor.
  const bool pseudo = surrogate == "pseudo_krum";
  if (pseudo) {
    for (int m = 0; m < clients; ++m) prog.select_leaves.push_back(g.leaf(1, 1));
  }
  std::vector<int> aggregated;
  for (std::size_t p = 0; p < slices.size(); ++p) {
    std::vector<int> per_client;
    for (int m = 0; m < clients; ++m) per_client.push_back(client_grads[static_cast<std::size_t>(m)][p]);
    int phi;
    if (surrogate == "mean") {
      int acc = per_client[0];
      for (int m = 1; m < clients; ++m) acc = g.add(acc, per_client[static_cast<std::size_t>(m)]);
      phi = g.scale(acc, 1.0 / clients);
    } else if (surrogate == "soft_median") {
      int acc = per_client[0];
      for (int m = 1; m < clients; ++m) acc = g.add(acc, per_client[static_cast<std::size_t>(m)]);
      const int mean_node = g.scale(acc, 1.0 / clients);
      phi = soft_median_nodes(g, per_client, mean_node, cfg.soft_median_temperature);
    } else if (pseudo) {
      int acc = -1;
      for (int m = 0; m < clients; ++m) {
        const int term = g.scalar_mul(per_client[static_cast<std::size_t>(m)], prog.select_leaves[static_cast<std::size_t>(m)]);
        acc = acc < 0 ? term : g.add(acc, term);
      }
      phi = acc;
    } else {
      throw ConfigError("unknown surrogate: " + surrogate);
    }
    // The attacker knows tau; a tau-step update is modeled as tau one-step
    // gradients at the broadcast point.
    aggregated.push_back(g.scale(phi, static_cast<double>(local_steps)));
  }

  if (cfg.objective == MatchObjective::kSquaredError) {
    int total = -1;
    for (std::size_t p = 0; p < slices.size(); ++p) {
      const int term = g.squared_norm(g.sub(aggregated[p], target_nodes[p]));
      total = total < 0 ? term : g.add(total, term);
    }
    prog.match_loss = total;
  } else {
    // InvertGrad-style: 1 - cosine(phi, target) + tv_weight * TV(pixels).
    int dot = -1;
    int phi_sq = -1;
    double target_sq = 0.0;
    for (std::size_t p = 0; p < slices.size(); ++p) {
      const int dterm = g.sum(g.mul(aggregated[p], target_nodes[p]));
      const int sterm = g.squared_norm(aggregated[p]);
      dot = dot < 0 ? dterm : g.add(dot, dterm);
      phi_sq = phi_sq < 0 ? sterm : g.add(phi_sq, sterm);
      target_sq += Eigen::Map<const Eigen::VectorXd>(observed_grad.data() + slices[p].offset,
                                                     slices[p].length())
                       .squaredNorm();
    }
    const double target_norm = std::sqrt(std::max(target_sq, 1e-30));
    const int phi_norm = g.sqrt(g.add(phi_sq, g.constant_scalar(1e-30)));
    const int cosine = g.mul(dot, g.recip(g.scale(phi_norm, target_norm)));
    int objective = g.add(g.constant_scalar(1.0), g.scale(cosine, -1.0));
    if (cfg.tv_weight > 0.0) {
      const int rows_img = cfg.image_rows > 0
                               ? cfg.image_rows
                               : static_cast<int>(std::lround(std::sqrt(spec.input_dim)));
      const int cols_img = spec.input_dim / rows_img;
      const int dh = g.constant(difference_operator(rows_img, cols_img, true));
      const int dv = g.constant(difference_operator(rows_img, cols_img, false));
      int tv = -1;
      for (const int x : prog.pixel_nodes) {
        const int hdiff = g.matmul(x, dh, false, true);
        const int vdiff = g.matmul(x, dv, false, true);
        const int term = g.add(g.sum(g.add(g.relu(hdiff), g.relu(g.scale(hdiff, -1.0)))),
                               g.sum(g.add(g.relu(vdiff), g.relu(g.scale(vdiff, -1.0)))));
        tv = tv < 0 ? term : g.add(tv, term);
      }
      objective = g.add(objective, g.scale(tv, cfg.tv_weight));
    }
    prog.match_loss = objective;
  }
  g.freeze();
  return prog;
}

struct BranchResult {
  double final_loss = std::numeric_limits<double>::infinity();
  double initial_loss = 0.0;
  int surrogate_index = 0;
  int restart = 0;
  bool aborted = false;
  Eigen::MatrixXd dummies;
  Eigen::MatrixXd label_logits;
  std::vector<double> trace;
};

BranchResult run_branch(InversionProgram& prog, const AttackConfig& cfg, int clients,
                        int surrogate_index, int restart, std::uint64_t seed, int round) {
  BranchResult res;
  res.surrogate_index = surrogate_index;
  res.restart = restart;
  RngStream rng = RngStream::derive(seed, "recon-init", static_cast<std::uint64_t>(round),
                                    (static_cast<std::uint64_t>(surrogate_index) << 32) |
                                        static_cast<std::uint64_t>(restart));

  Eigen::VectorXd theta(prog.theta_size(clients));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = rng.gaussian();
  if (restart % 2 == 0) {
    // Bias the label logits of every dummy toward the label read off the
    // observed output-bias gradient; odd restarts keep the plain init.
    // Label blocks live behind the pixel blocks and map column-major.
    const int labels_base = clients * prog.input_rows * prog.input_cols;
    for (int m = 0; m < clients; ++m) {
      const int block = labels_base + m * prog.input_rows * prog.label_cols;
      for (int r = 0; r < prog.input_rows; ++r) {
        theta(block + prog.likely_label * prog.input_rows + r) += 6.0;
      }
    }
  }

  if (!prog.select_leaves.empty()) {
    const int pick = rng.uniform_int(clients);
    for (int m = 0; m < clients; ++m) {
      ad::Tensor sel(1, 1);
      sel(0, 0) = (m == pick) ? 1.0 : 0.0;
      prog.g.bind(prog.select_leaves[static_cast<std::size_t>(m)], sel);
    }
  }

  try {
    prog.bind_theta(theta);
    prog.g.evaluate(prog.match_loss);
    double current = prog.g.value(prog.match_loss)(0, 0);
    res.initial_loss = current;
    res.trace.push_back(current);

    Adam adam(theta.size());
    double lr = cfg.recon_step;
    for (int it = 0; it < cfg.recon_iterations; ++it) {
      prog.g.backward(prog.match_loss);
      const Eigen::VectorXd grad = prog.grad_theta();

      const Eigen::VectorXd theta_snap = theta;
      const Adam adam_snap = adam;
      bool accepted = false;
      for (int tries = 0; tries < 20; ++tries) {
        adam.step(theta, grad, lr);
        prog.bind_theta(theta);
        prog.g.evaluate(prog.match_loss);
        const double next = prog.g.value(prog.match_loss)(0, 0);
        if (next <= current) {
          current = next;
          accepted = true;
          // a clean first-try step earns the rate back, up to the configured one
          if (tries == 0) lr = std::min(lr * 1.25, cfg.recon_step);
          break;
        }
        theta = theta_snap;
        adam = adam_snap;
        lr *= 0.5;
      }
      if (!accepted) {
        prog.bind_theta(theta);
        prog.g.evaluate(prog.match_loss);
        break;  // no downhill step left at any scale
      }
      res.trace.push_back(current);
      if (current < 1e-14) break;
    }
    res.final_loss = current;

    res.dummies.resize(clients * cfg.recon_batch, prog.g.cols(prog.pixel_nodes[0]));
    res.label_logits.resize(clients * cfg.recon_batch, prog.label_cols);
    for (int m = 0; m < clients; ++m) {
      res.dummies.middleRows(static_cast<Eigen::Index>(m) * cfg.recon_batch, cfg.recon_batch) =
          prog.g.value(prog.pixel_nodes[static_cast<std::size_t>(m)]);
      res.label_logits.middleRows(static_cast<Eigen::Index>(m) * cfg.recon_batch, cfg.recon_batch) =
          prog.g.value(prog.label_leaves[static_cast<std::size_t>(m)]);
    }
    res.dummies = res.dummies.cwiseMax(0.0).cwiseMin(1.0);
  } catch (const NumericError& e) {
    log_note(std::string("reconstruct: branch aborted (") + e.what() + ")");
    res.aborted = true;
  }
  return res;
}

}  // namespace

ReconstructionState reconstruct(const Eigen::VectorXd& observed_grad,
                                const ModelSpec& spec, const ParamVector& w,
                                const AttackConfig& cfg, int clients, int local_steps,
                                const Autoencoder* decoder, std::uint64_t seed,
                                int round, int threads) {
  if (observed_grad.size() != param_dim(spec)) {
    throw ContractError("reconstruct: observed gradient has wrong dimension");
  }
  if (cfg.dummy_param == DummyParam::kDecoder && decoder == nullptr) {
    throw ContractError("reconstruct: decoder parameterization requires a pretrained decoder");
  }
  cfg.validate(spec.input_dim);

  struct Branch {
    int surrogate_index;
    int restart;
  };
  std::vector<Branch> branches;
  for (int q = 0; q < static_cast<int>(cfg.surrogates.size()); ++q) {
    for (int r = 0; r < cfg.recon_restarts; ++r) branches.push_back({q, r});
  }
  std::vector<BranchResult> results(branches.size());

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(branches.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < branches.size(); ++i) {
      InversionProgram prog = build_inversion_program(
          observed_grad, spec, w, cfg, clients, local_steps, decoder,
          cfg.surrogates[static_cast<std::size_t>(branches[i].surrogate_index)]);
      results[i] = run_branch(prog, cfg, clients, branches[i].surrogate_index,
                              branches[i].restart, seed, round);
    }
  } else {
    std::vector<std::thread> pool;
    std::mutex next_mutex;
    std::size_t next = 0;
    for (int t = 0; t < workers; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(next_mutex);
            if (next >= branches.size()) return;
            i = next++;
          }
          InversionProgram prog = build_inversion_program(
              observed_grad, spec, w, cfg, clients, local_steps, decoder,
              cfg.surrogates[static_cast<std::size_t>(branches[i].surrogate_index)]);
          results[i] = run_branch(prog, cfg, clients, branches[i].surrogate_index,
                                  branches[i].restart, seed, round);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  int aborted = 0;
  int best = -1;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].aborted) {
      ++aborted;
      continue;
    }
    if (best < 0) {
      best = static_cast<int>(i);
      continue;
    }
    const auto& a = results[i];
    const auto& b = results[static_cast<std::size_t>(best)];
    if (a.final_loss < b.final_loss ||
        (a.final_loss == b.final_loss &&
         (a.surrogate_index < b.surrogate_index ||
          (a.surrogate_index == b.surrogate_index && a.restart < b.restart)))) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) throw NumericError("reconstruct: every restart aborted with non-finite loss");

  const BranchResult& win = results[static_cast<std::size_t>(best)];
  ReconstructionState state;
  state.dummies = win.dummies;
  state.label_logits = win.label_logits;
  state.chosen_surrogate = cfg.surrogates[static_cast<std::size_t>(win.surrogate_index)];
  state.chosen_restart = win.restart;
  state.final_loss = win.final_loss;
  state.initial_loss = win.initial_loss;
  state.loss_trace = win.trace;
  state.aborted_branches = aborted;
  return state;
}

RmseReport rmse_eval(const Eigen::MatrixXd& reconstructions, const Eigen::MatrixXd& truth) {
  if (reconstructions.cols() != truth.cols()) {
    throw ContractError("rmse_eval: pixel dimension mismatch");
  }
  const int d_in = static_cast<int>(truth.cols());
  const bool recon_smaller = reconstructions.rows() <= truth.rows();
  const Eigen::MatrixXd& small = recon_smaller ? reconstructions : truth;
  const Eigen::MatrixXd& large = recon_smaller ? truth : reconstructions;
  if (reconstructions.rows() != truth.rows()) {
    log_note("rmse_eval: size mismatch (" + std::to_string(reconstructions.rows()) + " vs " +
             std::to_string(truth.rows()) + "); evaluating over the smaller count");
  }

  Eigen::MatrixXd cost(small.rows(), large.rows());
  for (Eigen::Index i = 0; i < small.rows(); ++i) {
    for (Eigen::Index j = 0; j < large.rows(); ++j) {
      cost(i, j) = (small.row(i) - large.row(j)).squaredNorm();
    }
  }
  const std::vector<int> match = (small.rows() <= 64) ? hungarian_assignment(cost)
                                                      : greedy_assignment(cost);
  RmseReport report;
  for (Eigen::Index i = 0; i < small.rows(); ++i) {
    report.per_pair.push_back(std::sqrt(cost(i, match[static_cast<std::size_t>(i)]) / d_in));
  }
  double mean = 0.0;
  for (const double v : report.per_pair) mean += v;
  mean /= report.per_pair.empty() ? 1.0 : static_cast<double>(report.per_pair.size());
  report.mean = mean;
  double var = 0.0;
  for (const double v : report.per_pair) var += (v - mean) * (v - mean);
  report.stddev = report.per_pair.size() > 1
                      ? std::sqrt(var / static_cast<double>(report.per_pair.size()))
                      : 0.0;
  return report;
}

}  // namespace fedsim
