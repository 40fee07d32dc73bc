#include "fedsim/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "fedsim/errors.hpp"

namespace fedsim {

namespace {

struct Blob {
  double row;
  double col;
  double sigma;
  double amp;
};

// Class prototypes are derived from a fixed key, not the caller's stream, so
// the class geometry is identical across dataset seeds.
std::vector<Blob> class_prototype(int cls, int image_rows, int image_cols) {
  RngStream proto = RngStream::derive(0x5f3759df, "class-prototype", static_cast<std::uint64_t>(cls));
  const int blobs = 2 + proto.uniform_int(2);  // 2 or 3 blobs
  std::vector<Blob> out;
  for (int j = 0; j < blobs; ++j) {
    Blob b;
    b.row = proto.uniform(0.2, 0.8) * image_rows;
    b.col = proto.uniform(0.2, 0.8) * image_cols;
    b.sigma = proto.uniform(0.10, 0.16) * std::min(image_rows, image_cols);
    b.amp = proto.uniform(0.7, 1.0);
    out.push_back(b);
  }
  return out;
}

}  // namespace

Dataset make_synthetic_dataset(int count, int image_rows, int image_cols,
                               int class_count, RngStream& rng, const std::string& name) {
  if (count <= 0 || image_rows <= 0 || image_cols <= 0 || class_count <= 1) {
    throw ConfigError("make_synthetic_dataset: invalid geometry");
  }
  std::vector<std::vector<Blob>> prototypes;
  for (int c = 0; c < class_count; ++c) prototypes.push_back(class_prototype(c, image_rows, image_cols));

  Dataset d;
  d.name = name;
  d.class_count = class_count;
  d.images.resize(count, static_cast<Eigen::Index>(image_rows) * image_cols);
  d.labels.resize(static_cast<std::size_t>(count));

  for (int i = 0; i < count; ++i) {
    const int cls = rng.uniform_int(class_count);
    d.labels[static_cast<std::size_t>(i)] = cls;
    const double shift_r = rng.uniform(-1.5, 1.5);
    const double shift_c = rng.uniform(-1.5, 1.5);
    const double gain = rng.uniform(0.75, 1.0);
    for (int r = 0; r < image_rows; ++r) {
      for (int c = 0; c < image_cols; ++c) {
        double v = 0.0;
        for (const Blob& b : prototypes[static_cast<std::size_t>(cls)]) {
          const double dr = (r - (b.row + shift_r)) / b.sigma;
          const double dc = (c - (b.col + shift_c)) / b.sigma;
          v += b.amp * std::exp(-0.5 * (dr * dr + dc * dc));
        }
        v = gain * v + 0.02 * rng.gaussian();
        d.images(i, r * image_cols + c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return d;
}

}  // namespace fedsim
