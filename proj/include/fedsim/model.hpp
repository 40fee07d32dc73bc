#ifndef FEDSIM_MODEL_HPP
#define FEDSIM_MODEL_HPP

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "fedsim/autodiff.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Activation { kRelu, kSigmoid, kTanh };
enum class InitScheme { kKaimingUniform, kLecunUniform, kOrthogonal };

// Fully connected classifier family: input_dim -> hidden... -> class_count
// with softmax-cross-entropy loss. Hidden layers use `activation`; logits are
// raw. Convolutional fronts are not part of this family.
struct ModelSpec {
  int input_dim = 0;
  int class_count = 0;
  std::vector<int> hidden;
  Activation activation = Activation::kRelu;
  InitScheme init = InitScheme::kKaimingUniform;

  struct Layer {
    int fan_in = 0;
    int fan_out = 0;
  };
  std::vector<Layer> layers() const;
  void validate() const;
};

// Flat parameter vector w in R^d plus the slice table mapping it onto the
// per-layer tensors. Layout per layer: weight (fan_out x fan_in, column
// major), then bias (1 x fan_out). Slices partition [0, d) exactly.
struct ParamVector {
  Eigen::VectorXd values;
  struct Slice {
    int offset = 0;
    int rows = 0;
    int cols = 0;
    int length() const { return rows * cols; }
  };
  std::vector<Slice> slices;

  int dim() const { return static_cast<int>(values.size()); }
};

int param_dim(const ModelSpec& spec);
std::vector<ParamVector::Slice> param_slices(const ModelSpec& spec);

// Views between the flat vector and the per-tensor shapes used by graphs.
std::vector<ad::Tensor> unpack_params(const ModelSpec& spec, const Eigen::VectorXd& flat);
Eigen::VectorXd pack_params(const ModelSpec& spec, const std::vector<ad::Tensor>& tensors);

ParamVector init_params(const ModelSpec& spec, RngStream& rng);

// Batch forward pass: X is (batch, input_dim); returns (batch, class_count)
// logits. Pure and deterministic.
Eigen::MatrixXd forward(const ModelSpec& spec, const ParamVector& params,
                        const Eigen::MatrixXd& X);

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int class_count);

// Mean softmax-cross-entropy of the batch under hard labels.
double mean_loss(const ModelSpec& spec, const ParamVector& params,
                 const Eigen::MatrixXd& X, const std::vector<int>& labels);

// Reusable loss program for a fixed batch size: leaves (X, Y, layer params),
// root = mean cross-entropy. gradient() runs forward + numeric backward and
// returns the flat parameter gradient.
class LossProgram {
 public:
  LossProgram(const ModelSpec& spec, int batch);

  double gradient(const ParamVector& params, const Eigen::MatrixXd& X,
                  const Eigen::MatrixXd& Y, Eigen::VectorXd& grad_out);
  double loss(const ParamVector& params, const Eigen::MatrixXd& X,
              const Eigen::MatrixXd& Y);

  int batch() const { return batch_; }

 private:
  void bind_all(const ParamVector& params, const Eigen::MatrixXd& X,
                const Eigen::MatrixXd& Y);
  ModelSpec spec_;
  int batch_ = 0;
  ad::Graph g_;
  int x_ = -1;
  int y_ = -1;
  int loss_ = -1;
  std::vector<int> param_ids_;
};

// grad of the sample loss at a single (x, y): Eq.-level unit of everything
// the DP mechanism clips.
ParamVector per_example_grad(const ModelSpec& spec, const ParamVector& params,
                             const Eigen::VectorXd& x, int label);

// Appends the model forward + loss onto an existing graph; used by the
// inversion attack which owns leaves for inputs/labels. Returns the scalar
// loss node. `param_nodes` must follow param_slices order.
int build_loss_on(ad::Graph& g, const ModelSpec& spec, int x_node, int y_node,
                  const std::vector<int>& param_nodes);

}  // namespace fedsim

#endif  // FEDSIM_MODEL_HPP
