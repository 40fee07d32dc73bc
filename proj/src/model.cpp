#include "fedsim/model.hpp"

#include <cmath>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

std::vector<ModelSpec::Layer> ModelSpec::layers() const {
  std::vector<Layer> out;
  int fan_in = input_dim;
  for (const int h : hidden) {
    out.push_back({fan_in, h});
    fan_in = h;
  }
  out.push_back({fan_in, class_count});
  return out;
}

void ModelSpec::validate() const {
  if (input_dim <= 0) throw ConfigError("ModelSpec: input_dim must be positive");
  if (class_count <= 1) throw ConfigError("ModelSpec: class_count must exceed 1");
  for (const int h : hidden) {
    if (h <= 0) throw ConfigError("ModelSpec: hidden widths must be positive");
  }
}

int param_dim(const ModelSpec& spec) {
  int d = 0;
  for (const auto& l : spec.layers()) d += l.fan_out * l.fan_in + l.fan_out;
  return d;
}

std::vector<ParamVector::Slice> param_slices(const ModelSpec& spec) {
  std::vector<ParamVector::Slice> slices;
  int offset = 0;
  for (const auto& l : spec.layers()) {
    slices.push_back({offset, l.fan_out, l.fan_in});
    offset += l.fan_out * l.fan_in;
    slices.push_back({offset, 1, l.fan_out});
    offset += l.fan_out;
  }
  return slices;
}

std::vector<ad::Tensor> unpack_params(const ModelSpec& spec, const Eigen::VectorXd& flat) {
  const auto slices = param_slices(spec);
  if (flat.size() != param_dim(spec)) {
    throw ContractError("unpack_params: flat vector has wrong dimension");
  }
  std::vector<ad::Tensor> out;
  out.reserve(slices.size());
  for (const auto& s : slices) {
    out.emplace_back(Eigen::Map<const ad::Tensor>(flat.data() + s.offset, s.rows, s.cols));
  }
  return out;
}

Eigen::VectorXd pack_params(const ModelSpec& spec, const std::vector<ad::Tensor>& tensors) {
  const auto slices = param_slices(spec);
  if (tensors.size() != slices.size()) throw ContractError("pack_params: tensor count mismatch");
  Eigen::VectorXd flat(param_dim(spec));
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    if (tensors[i].rows() != s.rows || tensors[i].cols() != s.cols) {
      throw ContractError("pack_params: tensor shape mismatch");
    }
    Eigen::Map<ad::Tensor>(flat.data() + s.offset, s.rows, s.cols) = tensors[i];
  }
  return flat;
}

namespace {

void fill_uniform(Eigen::Map<ad::Tensor> block, double bound, RngStream& rng) {
  for (Eigen::Index c = 0; c < block.cols(); ++c) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      block(r, c) = rng.uniform(-bound, bound);
    }
  }
}

// QR of a standard-Gaussian matrix, sign-corrected so the factorization is
// unique (diagonal of R made non-negative). Wide matrices get orthonormal
// rows via the transpose.
ad::Tensor orthogonal_matrix(int rows, int cols, RngStream& rng) {
  const bool wide = rows < cols;
  const int m = wide ? cols : rows;
  const int n = wide ? rows : cols;
  ad::Tensor gauss(m, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < m; ++r) gauss(r, c) = rng.gaussian();
  }
  Eigen::HouseholderQR<ad::Tensor> qr(gauss);
  ad::Tensor q = qr.householderQ() * ad::Tensor::Identity(m, n);
  const ad::Tensor r_mat = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r_mat(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return wide ? ad::Tensor(q.transpose()) : q;
}

}  // namespace

ParamVector init_params(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ParamVector pv;
  pv.slices = param_slices(spec);
  pv.values = Eigen::VectorXd::Zero(param_dim(spec));
  const auto layers = spec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& weight = pv.slices[2 * l];
    const auto& bias = pv.slices[2 * l + 1];
    Eigen::Map<ad::Tensor> w(pv.values.data() + weight.offset, weight.rows, weight.cols);
    Eigen::Map<ad::Tensor> b(pv.values.data() + bias.offset, bias.rows, bias.cols);
    const double fan_in = static_cast<double>(layers[l].fan_in);
    switch (spec.init) {
      case InitScheme::kKaimingUniform: {
        const double bound = 1.0 / std::sqrt(fan_in);
        fill_uniform(w, bound, rng);
        fill_uniform(b, bound, rng);
        break;
      }
      case InitScheme::kLecunUniform:
        fill_uniform(w, std::sqrt(3.0 / fan_in), rng);
        b.setZero();
        break;
      case InitScheme::kOrthogonal:
        if (weight.rows < 2 || weight.cols < 2) {
          log_note("init_params: orthogonal needs a matrix weight; layer " +
                   std::to_string(l) + " falls back to lecun_uniform");
          fill_uniform(w, std::sqrt(3.0 / fan_in), rng);
        } else {
          w = orthogonal_matrix(weight.rows, weight.cols, rng);
        }
        b.setZero();
        break;
    }
  }
  return pv;
}

namespace {

Eigen::MatrixXd apply_activation(const Eigen::MatrixXd& h, Activation act) {
  switch (act) {
    case Activation::kRelu: return h.cwiseMax(0.0);
    case Activation::kSigmoid:
      return (1.0 / (1.0 + (-h.array()).exp())).matrix();
    case Activation::kTanh: return h.array().tanh().matrix();
  }
  return h;
}

}  // namespace

Eigen::MatrixXd forward(const ModelSpec& spec, const ParamVector& params,
                        const Eigen::MatrixXd& X) {
  if (X.cols() != spec.input_dim) throw ContractError("forward: input dimension mismatch");
  const auto tensors = unpack_params(spec, params.values);
  Eigen::MatrixXd h = X;
  const auto layers = spec.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const ad::Tensor& w = tensors[2 * l];
    const ad::Tensor& b = tensors[2 * l + 1];
    h = (h * w.transpose()).rowwise() + b.row(0);
    if (l + 1 < layers.size()) h = apply_activation(h, spec.activation);
  }
  return h;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int class_count) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw ContractError("one_hot: label out of range");
    }
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

double mean_loss(const ModelSpec& spec, const ParamVector& params,
                 const Eigen::MatrixXd& X, const std::vector<int>& labels) {
  const Eigen::MatrixXd logits = forward(spec, params, X);
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    total += lse - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  return total / static_cast<double>(logits.rows());
}

int build_loss_on(ad::Graph& g, const ModelSpec& spec, int x_node, int y_node,
                  const std::vector<int>& param_nodes) {
  const auto layers = spec.layers();
  if (param_nodes.size() != 2 * layers.size()) {
    throw ContractError("build_loss_on: parameter node count mismatch");
  }
  int h = x_node;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = g.affine(h, param_nodes[2 * l], param_nodes[2 * l + 1]);
    if (l + 1 < layers.size()) {
      switch (spec.activation) {
        case Activation::kRelu: h = g.relu(h); break;
        case Activation::kSigmoid: h = g.sigmoid(h); break;
        case Activation::kTanh: h = g.tanh(h); break;
      }
    }
  }
  return g.softmax_xent_mean(h, y_node);
}

LossProgram::LossProgram(const ModelSpec& spec, int batch) : spec_(spec), batch_(batch) {
  spec_.validate();
  x_ = g_.leaf(batch, spec.input_dim);
  y_ = g_.leaf(batch, spec.class_count);
  for (const auto& s : param_slices(spec)) param_ids_.push_back(g_.leaf(s.rows, s.cols));
  loss_ = build_loss_on(g_, spec_, x_, y_, param_ids_);
  g_.freeze();
}

void LossProgram::bind_all(const ParamVector& params, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd& Y) {
  if (X.rows() != batch_) throw ContractError("LossProgram: batch size mismatch");
  g_.bind(x_, X);
  g_.bind(y_, Y);
  const auto tensors = unpack_params(spec_, params.values);
  for (std::size_t i = 0; i < tensors.size(); ++i) g_.bind(param_ids_[i], tensors[i]);
}

double LossProgram::gradient(const ParamVector& params, const Eigen::MatrixXd& X,
                             const Eigen::MatrixXd& Y, Eigen::VectorXd& grad_out) {
  bind_all(params, X, Y);
  g_.evaluate(loss_);
  g_.backward(loss_);
  std::vector<ad::Tensor> grads;
  grads.reserve(param_ids_.size());
  for (const int id : param_ids_) grads.push_back(g_.grad(id));
  grad_out = pack_params(spec_, grads);
  return g_.value(loss_)(0, 0);
}

double LossProgram::loss(const ParamVector& params, const Eigen::MatrixXd& X,
                         const Eigen::MatrixXd& Y) {
  bind_all(params, X, Y);
  g_.evaluate(loss_);
  return g_.value(loss_)(0, 0);
}

ParamVector per_example_grad(const ModelSpec& spec, const ParamVector& params,
                             const Eigen::VectorXd& x, int label) {
  if (label < 0 || label >= spec.class_count) {
    throw ContractError("per_example_grad: label out of range");
  }
  LossProgram prog(spec, 1);
  Eigen::MatrixXd X(1, spec.input_dim);
  X.row(0) = x.transpose();
  Eigen::VectorXd grad;
  prog.gradient(params, X, one_hot({label}, spec.class_count), grad);
  ParamVector out;
  out.values = grad;
  out.slices = param_slices(spec);
  return out;
}

}  // namespace fedsim
