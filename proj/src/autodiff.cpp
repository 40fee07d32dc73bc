#include "fedsim/autodiff.hpp"

#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kAddRowVec: return "add_rowvec";
    case Op::kRelu: return "relu";
    case Op::kReluMask: return "relu_mask";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kRecip: return "recip";
    case Op::kSqrt: return "sqrt";
    case Op::kSoftmax: return "softmax";
    case Op::kSoftmaxXentMean: return "softmax_xent_mean";
    case Op::kSum: return "sum";
  }
  return "?";
}

Node& Graph::at(int id) {
  if (id < 0 || id >= node_count()) throw ContractError("Graph: node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

const Node& Graph::at(int id) const {
  if (id < 0 || id >= node_count()) throw ContractError("Graph: node id out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

int Graph::push(Node n) {
  if (frozen_) throw ContractError("Graph: cannot add nodes after freeze()");
  if (n.rows <= 0 || n.cols <= 0) throw ConfigError("Graph: node shape must be positive");
  nodes_.push_back(std::move(n));
  return node_count() - 1;
}

void Graph::check_shape_match(int a, int b, const char* what) const {
  if (at(a).rows != at(b).rows || at(a).cols != at(b).cols) {
    throw ConfigError(std::string("Graph: shape mismatch in ") + what);
  }
}

int Graph::leaf(int rows, int cols) {
  Node n;
  n.op = Op::kLeaf;
  n.rows = rows;
  n.cols = cols;
  const int id = push(std::move(n));
  leaves_.push_back(id);
  return id;
}

int Graph::constant(const Tensor& value) {
  Node n;
  n.op = Op::kConst;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.value = value;
  n.bound = true;
  return push(std::move(n));
}

int Graph::constant_scalar(double value) {
  Tensor t(1, 1);
  t(0, 0) = value;
  return constant(t);
}

int Graph::matmul(int a, int b, bool trans_a, bool trans_b) {
  const int ar = trans_a ? at(a).cols : at(a).rows;
  const int ac = trans_a ? at(a).rows : at(a).cols;
  const int br = trans_b ? at(b).cols : at(b).rows;
  const int bc = trans_b ? at(b).rows : at(b).cols;
  if (ac != br) throw ConfigError("Graph: inner dimensions do not agree in matmul");
  Node n;
  n.op = Op::kMatMul;
  n.a = a;
  n.b = b;
  n.trans_a = trans_a;
  n.trans_b = trans_b;
  n.rows = ar;
  n.cols = bc;
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  check_shape_match(a, b, "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

int Graph::sub(int a, int b) { return add(a, scale(b, -1.0)); }

int Graph::mul(int a, int b) {
  check_shape_match(a, b, "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

int Graph::scale(int a, double factor) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.factor = factor;
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

int Graph::scalar_mul(int a, int scalar_node) {
  if (at(scalar_node).rows != 1 || at(scalar_node).cols != 1) {
    throw ConfigError("Graph: scalar_mul multiplier must be 1x1");
  }
  Node n;
  n.op = Op::kScalarMul;
  n.a = a;
  n.b = scalar_node;
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

int Graph::add_rowvec(int a, int row) {
  if (at(row).rows != 1 || at(row).cols != at(a).cols) {
    throw ConfigError("Graph: add_rowvec operand must be (1, cols of A)");
  }
  Node n;
  n.op = Op::kAddRowVec;
  n.a = a;
  n.b = row;
  n.rows = at(a).rows;
  n.cols = at(a).cols;
  return push(std::move(n));
}

namespace {
Node unary(Op op, int a, int rows, int cols) {
  Node n;
  n.op = op;
  n.a = a;
  n.rows = rows;
  n.cols = cols;
  return n;
}
}  // namespace

int Graph::relu(int a) { return push(unary(Op::kRelu, a, at(a).rows, at(a).cols)); }
int Graph::relu_mask(int a) { return push(unary(Op::kReluMask, a, at(a).rows, at(a).cols)); }
int Graph::sigmoid(int a) { return push(unary(Op::kSigmoid, a, at(a).rows, at(a).cols)); }
int Graph::tanh(int a) { return push(unary(Op::kTanh, a, at(a).rows, at(a).cols)); }
int Graph::exp(int a) { return push(unary(Op::kExp, a, at(a).rows, at(a).cols)); }
int Graph::recip(int a) { return push(unary(Op::kRecip, a, at(a).rows, at(a).cols)); }
int Graph::sqrt(int a) { return push(unary(Op::kSqrt, a, at(a).rows, at(a).cols)); }
int Graph::softmax(int a) { return push(unary(Op::kSoftmax, a, at(a).rows, at(a).cols)); }
int Graph::sum(int a) { return push(unary(Op::kSum, a, 1, 1)); }

int Graph::softmax_xent_mean(int logits, int targets) {
  check_shape_match(logits, targets, "softmax_xent_mean");
  Node n;
  n.op = Op::kSoftmaxXentMean;
  n.a = logits;
  n.b = targets;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

int Graph::squared_norm(int a) { return sum(mul(a, a)); }

int Graph::affine(int x, int w, int b) {
  return add_rowvec(matmul(x, w, false, true), b);
}

int Graph::mean_all(int a) {
  const double numel = static_cast<double>(at(a).rows) * at(a).cols;
  return scale(sum(a), 1.0 / numel);
}

void Graph::freeze() { frozen_ = true; }

void Graph::bind(int leaf_id, const Tensor& value) {
  Node& n = at(leaf_id);
  if (n.op != Op::kLeaf) throw ContractError("Graph::bind: node is not a leaf");
  if (value.rows() != n.rows || value.cols() != n.cols) {
    throw ConfigError("Graph::bind: bound value has wrong shape");
  }
  n.value = value;
  n.bound = true;
}

const Tensor& Graph::value(int id) const {
  const Node& n = at(id);
  if (!n.bound) throw ContractError("Graph::value: node has not been evaluated");
  return n.value;
}

const Tensor& Graph::grad(int id) const {
  const Node& n = at(id);
  if (!n.grad_set) {
    // Lazily sized zero; callers treat unset gradients as zeros.
    auto* self = const_cast<Graph*>(this);
    self->zero_scratch_ = Tensor::Zero(n.rows, n.cols);
    return zero_scratch_;
  }
  return n.grad;
}

void Graph::forward_one(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  switch (n.op) {
    case Op::kLeaf:
      if (!n.bound) throw ConfigError("Graph::evaluate: unbound leaf node");
      return;  // already checked finite on bind path below
    case Op::kConst:
      return;
    case Op::kMatMul: {
      const Tensor& A = nodes_[static_cast<std::size_t>(n.a)].value;
      const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
      if (!n.trans_a && !n.trans_b) n.value.noalias() = A * B;
      else if (n.trans_a && !n.trans_b) n.value.noalias() = A.transpose() * B;
      else if (!n.trans_a && n.trans_b) n.value.noalias() = A * B.transpose();
      else n.value.noalias() = A.transpose() * B.transpose();
      break;
    }
    case Op::kAdd:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value + nodes_[static_cast<std::size_t>(n.b)].value;
      break;
    case Op::kMul:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.cwiseProduct(
          nodes_[static_cast<std::size_t>(n.b)].value);
      break;
    case Op::kScale:
      n.value = n.factor * nodes_[static_cast<std::size_t>(n.a)].value;
      break;
    case Op::kScalarMul:
      n.value = nodes_[static_cast<std::size_t>(n.b)].value(0, 0) *
                nodes_[static_cast<std::size_t>(n.a)].value;
      break;
    case Op::kAddRowVec:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.rowwise() +
                nodes_[static_cast<std::size_t>(n.b)].value.row(0);
      break;
    case Op::kRelu:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.cwiseMax(0.0);
      break;
    case Op::kReluMask:
      n.value = (nodes_[static_cast<std::size_t>(n.a)].value.array() > 0.0).cast<double>();
      break;
    case Op::kSigmoid:
      n.value = (1.0 / (1.0 + (-nodes_[static_cast<std::size_t>(n.a)].value.array()).exp())).matrix();
      break;
    case Op::kTanh:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.array().tanh().matrix();
      break;
    case Op::kExp:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.array().exp().matrix();
      break;
    case Op::kRecip:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.array().inverse().matrix();
      break;
    case Op::kSqrt:
      n.value = nodes_[static_cast<std::size_t>(n.a)].value.array().sqrt().matrix();
      break;
    case Op::kSoftmax: {
      const Tensor& X = nodes_[static_cast<std::size_t>(n.a)].value;
      n.value.resize(X.rows(), X.cols());
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mx = X.row(r).maxCoeff();
        Eigen::ArrayXd e = (X.row(r).array() - mx).exp();
        n.value.row(r) = (e / e.sum()).matrix();
      }
      break;
    }
    case Op::kSoftmaxXentMean: {
      const Tensor& X = nodes_[static_cast<std::size_t>(n.a)].value;
      const Tensor& Y = nodes_[static_cast<std::size_t>(n.b)].value;
      double total = 0.0;
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mx = X.row(r).maxCoeff();
        const double lse = mx + std::log((X.row(r).array() - mx).exp().sum());
        total += lse - X.row(r).dot(Y.row(r));
      }
      n.value.resize(1, 1);
      n.value(0, 0) = total / static_cast<double>(X.rows());
      break;
    }
    case Op::kSum:
      n.value.resize(1, 1);
      n.value(0, 0) = nodes_[static_cast<std::size_t>(n.a)].value.sum();
      break;
  }
  n.bound = true;
  if (!n.value.allFinite()) {
    throw NumericError(std::string("Graph::evaluate: non-finite value at node #") +
                       std::to_string(id) + " (" + op_name(n.op) + ")");
  }
}

void Graph::evaluate(int upto) {
  const int last = upto < 0 ? node_count() - 1 : upto;
  for (int id = 0; id <= last; ++id) forward_one(id);
}

void Graph::accumulate(int id, const Tensor& contribution) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_set) {
    n.grad = contribution;
    n.grad_set = true;
  } else {
    n.grad += contribution;
  }
}

void Graph::backward_one(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const Tensor& U = n.grad;
  auto val = [&](int i) -> const Tensor& { return nodes_[static_cast<std::size_t>(i)].value; };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
    case Op::kReluMask:
      return;
    case Op::kMatMul: {
      const Tensor& A = val(n.a);
      const Tensor& B = val(n.b);
      if (!n.trans_a && !n.trans_b) {
        accumulate(n.a, U * B.transpose());
        accumulate(n.b, A.transpose() * U);
      } else if (n.trans_a && !n.trans_b) {
        accumulate(n.a, B * U.transpose());
        accumulate(n.b, A * U);
      } else if (!n.trans_a && n.trans_b) {
        accumulate(n.a, U * B);
        accumulate(n.b, U.transpose() * A);
      } else {
        accumulate(n.a, B.transpose() * U.transpose());
        accumulate(n.b, U.transpose() * A.transpose());
      }
      return;
    }
    case Op::kAdd:
      accumulate(n.a, U);
      accumulate(n.b, U);
      return;
    case Op::kMul:
      accumulate(n.a, U.cwiseProduct(val(n.b)));
      accumulate(n.b, U.cwiseProduct(val(n.a)));
      return;
    case Op::kScale:
      accumulate(n.a, n.factor * U);
      return;
    case Op::kScalarMul: {
      accumulate(n.a, val(n.b)(0, 0) * U);
      Tensor ds(1, 1);
      ds(0, 0) = U.cwiseProduct(val(n.a)).sum();
      accumulate(n.b, ds);
      return;
    }
    case Op::kAddRowVec:
      accumulate(n.a, U);
      accumulate(n.b, U.colwise().sum());
      return;
    case Op::kRelu:
      accumulate(n.a, U.cwiseProduct((val(n.a).array() > 0.0).cast<double>().matrix()));
      return;
    case Op::kSigmoid: {
      const Tensor& s = n.value;
      accumulate(n.a, U.cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix())));
      return;
    }
    case Op::kTanh: {
      const Tensor& t = n.value;
      accumulate(n.a, U.cwiseProduct((1.0 - t.array().square()).matrix()));
      return;
    }
    case Op::kExp:
      accumulate(n.a, U.cwiseProduct(n.value));
      return;
    case Op::kRecip:
      accumulate(n.a, -U.cwiseProduct(n.value.cwiseProduct(n.value)));
      return;
    case Op::kSqrt:
      accumulate(n.a, 0.5 * U.cwiseQuotient(n.value));
      return;
    case Op::kSoftmax: {
      const Tensor& P = n.value;
      Tensor dX(P.rows(), P.cols());
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        const double dot = U.row(r).dot(P.row(r));
        dX.row(r) = P.row(r).cwiseProduct(U.row(r) - Tensor::Constant(1, P.cols(), dot));
      }
      accumulate(n.a, dX);
      return;
    }
    case Op::kSoftmaxXentMean: {
      const Tensor& X = val(n.a);
      const Tensor& Y = val(n.b);
      Tensor P(X.rows(), X.cols());
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mx = X.row(r).maxCoeff();
        Eigen::ArrayXd e = (X.row(r).array() - mx).exp();
        P.row(r) = (e / e.sum()).matrix();
      }
      const double u = U(0, 0) / static_cast<double>(X.rows());
      accumulate(n.a, u * (P - Y));
      accumulate(n.b, -u * X);
      return;
    }
    case Op::kSum:
      accumulate(n.a, Tensor::Constant(val(n.a).rows(), val(n.a).cols(), U(0, 0)));
      return;
  }
}

void Graph::backward(int root) {
  const Node& r = at(root);
  if (r.rows != 1 || r.cols != 1) throw ContractError("Graph::backward: root must be scalar");
  if (!r.bound) throw ContractError("Graph::backward: evaluate must run first");
  for (int id = 0; id <= root; ++id) {
    nodes_[static_cast<std::size_t>(id)].grad_set = false;
  }
  Tensor one(1, 1);
  one(0, 0) = 1.0;
  accumulate(root, one);
  for (int id = root; id >= 0; --id) {
    if (nodes_[static_cast<std::size_t>(id)].grad_set) backward_one(id);
  }
}

std::vector<int> Graph::grad_nodes(int root, const std::vector<int>& wrt) {
  const Node& r = at(root);
  if (r.rows != 1 || r.cols != 1) throw ContractError("Graph::grad_nodes: root must be scalar");
  std::vector<int> adj(static_cast<std::size_t>(root) + 1, -1);
  adj[static_cast<std::size_t>(root)] = constant_scalar(1.0);

  auto feed = [&](int target, int contribution) {
    if (target > root) throw ContractError("Graph::grad_nodes: bad topological order");
    int& slot = adj[static_cast<std::size_t>(target)];
    slot = (slot < 0) ? contribution : add(slot, contribution);
  };

  for (int id = root; id >= 0; --id) {
    const int u = adj[static_cast<std::size_t>(id)];
    if (u < 0) continue;
    // Copy: push may reallocate nodes_.
    const Node n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConst:
      case Op::kReluMask:
        break;
      case Op::kMatMul:
        if (!n.trans_a && !n.trans_b) {
          feed(n.a, matmul(u, n.b, false, true));
          feed(n.b, matmul(n.a, u, true, false));
        } else if (n.trans_a && !n.trans_b) {
          feed(n.a, matmul(n.b, u, false, true));
          feed(n.b, matmul(n.a, u, false, false));
        } else if (!n.trans_a && n.trans_b) {
          feed(n.a, matmul(u, n.b, false, false));
          feed(n.b, matmul(u, n.a, true, false));
        } else {
          feed(n.a, matmul(n.b, u, true, true));
          feed(n.b, matmul(u, n.a, true, true));
        }
        break;
      case Op::kAdd:
        feed(n.a, u);
        feed(n.b, u);
        break;
      case Op::kMul:
        feed(n.a, mul(u, n.b));
        feed(n.b, mul(u, n.a));
        break;
      case Op::kScale:
        feed(n.a, scale(u, n.factor));
        break;
      case Op::kScalarMul:
        feed(n.a, scalar_mul(u, n.b));
        feed(n.b, sum(mul(u, n.a)));
        break;
      case Op::kAddRowVec: {
        feed(n.a, u);
        feed(n.b, matmul(constant(Tensor::Ones(1, n.rows)), u));
        break;
      }
      case Op::kRelu:
        feed(n.a, mul(u, relu_mask(n.a)));
        break;
      case Op::kSigmoid: {
        const int one = constant(Tensor::Ones(n.rows, n.cols));
        feed(n.a, mul(u, mul(id, add(one, scale(id, -1.0)))));
        break;
      }
      case Op::kTanh: {
        const int one = constant(Tensor::Ones(n.rows, n.cols));
        feed(n.a, mul(u, add(one, scale(mul(id, id), -1.0))));
        break;
      }
      case Op::kExp:
        feed(n.a, mul(u, id));
        break;
      case Op::kRecip:
        feed(n.a, scale(mul(u, mul(id, id)), -1.0));
        break;
      case Op::kSqrt:
        feed(n.a, scale(mul(u, recip(id)), 0.5));
        break;
      case Op::kSoftmax: {
        // dX = P .* (U - rowsum(U .* P) * ones_row)
        const int p = id;
        const int up = mul(u, p);
        const int rowsum = matmul(up, constant(Tensor::Ones(n.cols, 1)));
        const int bcast = matmul(rowsum, constant(Tensor::Ones(1, n.cols)));
        feed(n.a, mul(p, add(u, scale(bcast, -1.0))));
        break;
      }
      case Op::kSoftmaxXentMean: {
        const int rows = at(n.a).rows;
        const int p = softmax(n.a);
        feed(n.a, scalar_mul(scale(add(p, scale(n.b, -1.0)), 1.0 / rows), u));
        feed(n.b, scalar_mul(scale(n.a, -1.0 / rows), u));
        break;
      }
      case Op::kSum:
        feed(n.a, scalar_mul(constant(Tensor::Ones(at(n.a).rows, at(n.a).cols)), u));
        break;
    }
  }

  std::vector<int> out;
  out.reserve(wrt.size());
  for (const int w : wrt) {
    if (w <= root && adj[static_cast<std::size_t>(w)] >= 0) {
      out.push_back(adj[static_cast<std::size_t>(w)]);
    } else {
      out.push_back(constant(Tensor::Zero(at(w).rows, at(w).cols)));
    }
  }
  return out;
}

Tensor evaluate(Graph& g, const std::unordered_map<int, Tensor>& bindings, int root) {
  for (const auto& [id, v] : bindings) g.bind(id, v);
  g.evaluate();
  return g.value(root);
}

std::unordered_map<int, Tensor> backward(Graph& g, int root,
                                         const std::vector<int>& leaf_ids) {
  g.backward(root);
  std::unordered_map<int, Tensor> out;
  for (const int id : leaf_ids) out[id] = g.grad(id);
  return out;
}

GradMatchProgram::GradMatchProgram(
    int x_rows, int x_cols, int y_rows, int y_cols,
    const std::vector<std::pair<int, int>>& param_shapes,
    const std::function<int(Graph&, int, int, const std::vector<int>&)>& build_loss) {
  x_leaf_ = g_.leaf(x_rows, x_cols);
  y_leaf_ = g_.leaf(y_rows, y_cols);
  for (const auto& [r, c] : param_shapes) param_leaves_.push_back(g_.leaf(r, c));
  const int loss = build_loss(g_, x_leaf_, y_leaf_, param_leaves_);
  grad_ids_ = g_.grad_nodes(loss, param_leaves_);
  int total = -1;
  for (std::size_t i = 0; i < grad_ids_.size(); ++i) {
    const auto& [r, c] = param_shapes[i];
    const int target = g_.leaf(r, c);
    target_leaves_.push_back(target);
    const int term = g_.squared_norm(g_.sub(grad_ids_[i], target));
    total = total < 0 ? term : g_.add(total, term);
  }
  match_loss_ = total;
  g_.freeze();
}

GradMatchProgram::Result GradMatchProgram::run(const Tensor& x, const Tensor& y,
                                               const std::vector<Tensor>& params,
                                               const std::vector<Tensor>& target_grads) {
  if (params.size() != param_leaves_.size() || target_grads.size() != target_leaves_.size()) {
    throw ContractError("GradMatchProgram::run: parameter/target count mismatch");
  }
  g_.bind(x_leaf_, x);
  g_.bind(y_leaf_, y);
  for (std::size_t i = 0; i < params.size(); ++i) g_.bind(param_leaves_[i], params[i]);
  for (std::size_t i = 0; i < target_grads.size(); ++i) g_.bind(target_leaves_[i], target_grads[i]);
  g_.evaluate(match_loss_);
  g_.backward(match_loss_);
  Result res;
  res.matching_loss = g_.value(match_loss_)(0, 0);
  res.dx = g_.grad(x_leaf_);
  res.dy = g_.grad(y_leaf_);
  return res;
}

}  // namespace fedsim::ad
