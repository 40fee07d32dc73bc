#ifndef FEDSIM_SYNTHETIC_HPP
#define FEDSIM_SYNTHETIC_HPP

#include "fedsim/data.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Procedural grayscale 10-class dataset in MNIST geometry. Every class is a
// fixed arrangement of Gaussian blobs; samples jitter position, amplitude and
// pixel noise, so a small MLP separates the classes within a few epochs while
// individual examples remain distinct enough for reconstruction metrics.
Dataset make_synthetic_dataset(int count, int image_rows, int image_cols,
                               int class_count, RngStream& rng,
                               const std::string& name = "synthetic");

}  // namespace fedsim

#endif  // FEDSIM_SYNTHETIC_HPP
