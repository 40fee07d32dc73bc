// Writes the procedural dataset as IDX files, so the `run` subcommand can be
// exercised against real file inputs (and as a stand-in when the MNIST files
// are not on disk).
#include <CLI11.hpp>

#include <iostream>

#include "fedsim/data.hpp"
#include "fedsim/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic IDX image/label pair"};
  int count = 2048;
  int rows = 28;
  int cols = 28;
  std::uint64_t seed = 1;
  std::string images = "synth-images-idx3-ubyte";
  std::string labels = "synth-labels-idx1-ubyte";
  app.add_option("--count", count, "Number of examples");
  app.add_option("--rows", rows, "Image rows");
  app.add_option("--cols", cols, "Image cols");
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--images", images, "Output image file");
  app.add_option("--labels", labels, "Output label file");
  CLI11_PARSE(app, argc, argv);

  fedsim::RngStream rng = fedsim::RngStream::derive(seed, "synth-idx-tool");
  const fedsim::Dataset d = fedsim::make_synthetic_dataset(count, rows, cols, 10, rng);
  fedsim::write_idx(d, images, labels, rows, cols);
  std::cout << "wrote " << count << " examples to " << images << " / " << labels << "\n";
  return 0;
}
