#ifndef FEDSIM_DATA_HPP
#define FEDSIM_DATA_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "fedsim/rng.hpp"

namespace fedsim {

// Grayscale image dataset: rows of `images` are flattened examples scaled to
// [0, 1]; labels index classes in [0, class_count).
struct Dataset {
  Eigen::MatrixXd images;  // (N, input_dim)
  std::vector<int> labels;
  int class_count = 10;
  std::string name;

  int size() const { return static_cast<int>(labels.size()); }
  int input_dim() const { return static_cast<int>(images.cols()); }
  void validate() const;
};

// IDX container, bit-exact: big-endian u32 magic (0x00000803 images,
// 0x00000801 labels), big-endian dims, row-major unsigned bytes. Files ending
// in .gz are transparently decompressed.
Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 const std::string& name = "idx");
void write_idx(const Dataset& data, const std::string& image_path,
               const std::string& label_path, int image_rows, int image_cols);

// Average-pools (rows x cols) images by factor k in each direction. k must
// divide both sides.
Dataset downsample(const Dataset& data, int image_rows, int image_cols, int k);

struct PartitionPlan {
  std::vector<std::vector<int>> client_indices;   // disjoint index lists over [N]
  std::vector<std::vector<double>> proportions;   // drawn q_m, one per client
  double alpha = 0.0;
  int substitutions = 0;  // indices refilled from the global residual pool
};

// Dirichlet non-IID split: client m draws q_m ~ Dir(alpha * 1), receives
// per-class counts by largest-remainder rounding of q_{m,k} * per_client, and
// fills them from per-class pools (global residual pool when a class pool
// runs dry; substitutions are counted and logged).
PartitionPlan dirichlet_partition(const Dataset& data, int clients, double alpha,
                                  int per_client, RngStream& rng);

// Deterministic epoch iterator over a fixed local index list: each epoch is a
// fresh seeded permutation and covers every index exactly once.
class BatchIterator {
 public:
  BatchIterator(std::vector<int> indices, int batch_size, RngStream rng);
  std::vector<int> next();

 private:
  std::vector<int> indices_;
  int batch_size_ = 0;
  std::size_t cursor_ = 0;
  RngStream rng_;
};

}  // namespace fedsim

#endif  // FEDSIM_DATA_HPP
