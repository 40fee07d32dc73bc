#ifndef FEDSIM_AUTODIFF_HPP
#define FEDSIM_AUTODIFF_HPP

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fedsim::ad {

// All engine arithmetic is 64-bit. Tensors are dense rank-2 buffers; vectors
// travel as single-column or single-row matrices.
using Tensor = Eigen::MatrixXd;

enum class Op {
  kLeaf,      // variable, bound before evaluation
  kConst,     // fixed value baked in at build time
  kMatMul,    // op(A) * op(B) with optional transposes
  kAdd,       // A + B, same shape
  kMul,       // A .* B, same shape
  kScale,     // c * A, compile-time constant c
  kScalarMul, // s * A where s is a (1,1) node
  kAddRowVec, // A + broadcast of a (1,n) row vector
  kRelu,
  kReluMask,  // 1 where input > 0 else 0; derivative defined as 0 everywhere
  kSigmoid,
  kTanh,
  kExp,
  kRecip,     // elementwise 1/x
  kSqrt,
  kSoftmax,   // row-wise
  kSoftmaxXentMean,  // mean over rows of logsumexp(x_i) - x_i . y_i
  kSum,       // scalar (1,1)
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  int a = -1;
  int b = -1;
  bool trans_a = false;
  bool trans_b = false;
  double factor = 1.0;  // kScale only
  int rows = 0;
  int cols = 0;
  Tensor value;  // filled by evaluation (constants at construction)
  Tensor grad;   // filled by a numeric backward pass
  bool grad_set = false;
  bool bound = false;  // leaves: has a value been bound
};

// Topologically ordered expression DAG. Construction appends nodes whose
// operands strictly precede them; freeze() fixes the structure, after which
// only leaf values, node values and gradient slots change. A single Graph
// instance must not be shared across concurrent passes.
//
// Gradients come in two forms sharing the same per-op rules:
//   * backward(root) runs a numeric reverse sweep filling gradient slots;
//   * grad_nodes(root, wrt) appends symbolic gradient nodes, so a later
//     numeric backward through them yields second-order derivatives (the
//     "differentiation through a recorded backward graph" route).
class Graph {
 public:
  int leaf(int rows, int cols);
  int constant(const Tensor& value);
  int constant_scalar(double value);

  int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
  int add(int a, int b);
  int sub(int a, int b);  // add(a, scale(b, -1))
  int mul(int a, int b);
  int scale(int a, double factor);
  int scalar_mul(int a, int scalar_node);
  int add_rowvec(int a, int row);
  int relu(int a);
  int relu_mask(int a);
  int sigmoid(int a);
  int tanh(int a);
  int exp(int a);
  int recip(int a);
  int sqrt(int a);
  int softmax(int a);
  int softmax_xent_mean(int logits, int targets);
  int sum(int a);
  int squared_norm(int a);       // sum(a .* a)
  int affine(int x, int w, int b);  // x * w^T + row-broadcast b
  int mean_all(int a);           // sum(a) / numel

  void freeze();
  bool frozen() const { return frozen_; }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  int rows(int id) const { return at(id).rows; }
  int cols(int id) const { return at(id).cols; }
  const std::vector<int>& leaves() const { return leaves_; }

  void bind(int leaf_id, const Tensor& value);
  bool is_leaf(int id) const { return at(id).op == Op::kLeaf; }

  // Forward pass over nodes [0, upto]; upto < 0 means all nodes. Requires
  // every leaf in that range to be bound. Non-finite results raise
  // NumericError naming the offending node.
  void evaluate(int upto = -1);
  const Tensor& value(int id) const;

  // Numeric reverse sweep from a scalar root. Fills gradient slots of every
  // node that influences the root; other slots are left unset.
  void backward(int root);
  const Tensor& grad(int id) const;       // zero tensor if unset
  bool grad_is_set(int id) const { return at(id).grad_set; }

  // Symbolic gradients d(root)/d(wrt[i]) appended as nodes. Must be called
  // before freeze(). Untouched wrt entries map to constant zeros.
  std::vector<int> grad_nodes(int root, const std::vector<int>& wrt);

 private:
  Node& at(int id);
  const Node& at(int id) const;
  int push(Node n);
  void check_shape_match(int a, int b, const char* what) const;
  void forward_one(int id);
  void backward_one(int id);
  void accumulate(int id, const Tensor& contribution);

  std::vector<Node> nodes_;
  std::vector<int> leaves_;
  bool frozen_ = false;
  Tensor zero_scratch_;
};

// --- Spec-level convenience wrappers -------------------------------------

// Forward over the whole graph with the given leaf bindings; returns the
// value of `root`.
Tensor evaluate(Graph& g, const std::unordered_map<int, Tensor>& bindings, int root);

// Numeric reverse pass from a scalar root; returns gradients for the
// requested leaves (zeros for leaves that do not influence the root).
std::unordered_map<int, Tensor> backward(Graph& g, int root,
                                         const std::vector<int>& leaf_ids);

// A reusable "gradient matching" program: given a scalar training-loss graph
// over (inputs x, soft labels y, parameters w), extends it with symbolic
// parameter gradients and the squared distance to a bound target gradient.
// Running it yields the matching loss and its gradient with respect to x and
// y, i.e. the second-order quantity the inversion attack descends on.
class GradMatchProgram {
 public:
  // `build_loss` must construct the scalar loss node from the given leaf ids.
  GradMatchProgram(int x_rows, int x_cols, int y_rows, int y_cols,
                   const std::vector<std::pair<int, int>>& param_shapes,
                   const std::function<int(Graph&, int x, int y,
                                           const std::vector<int>& params)>& build_loss);

  // Evaluates the matching loss ||grad_w loss(x, y) - target||^2 and its
  // gradients with respect to x and y.
  struct Result {
    double matching_loss = 0.0;
    Tensor dx;
    Tensor dy;
  };
  Result run(const Tensor& x, const Tensor& y, const std::vector<Tensor>& params,
             const std::vector<Tensor>& target_grads);

  Graph& graph() { return g_; }

 private:
  Graph g_;
  int x_leaf_ = -1;
  int y_leaf_ = -1;
  std::vector<int> param_leaves_;
  std::vector<int> target_leaves_;
  std::vector<int> grad_ids_;
  int match_loss_ = -1;
};

}  // namespace fedsim::ad

#endif  // FEDSIM_AUTODIFF_HPP
