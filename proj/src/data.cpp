#include "fedsim/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fedsim/errors.hpp"
#include "fedsim/log.hpp"

namespace fedsim {

void Dataset::validate() const {
  if (images.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw ConfigError("Dataset: image/label count mismatch");
  }
  for (const int y : labels) {
    if (y < 0 || y >= class_count) throw ConfigError("Dataset: label out of range");
  }
  if ((images.array() < 0.0).any() || (images.array() > 1.0).any()) {
    throw ConfigError("Dataset: pixel outside [0,1]");
  }
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Whole file into memory, gunzipping when the extension says so.
std::vector<unsigned char> read_bytes(const std::string& path) {
  if (ends_with(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (f == nullptr) throw IoError("cannot open " + path);
    std::vector<unsigned char> out;
    unsigned char buf[1 << 16];
    int n = 0;
    while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw IoError("gzip read failed for " + path);
    return out;
  }
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f),
                                    std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

}  // namespace

Dataset load_idx(const std::string& image_path, const std::string& label_path,
                 const std::string& name) {
  const auto ib = read_bytes(image_path);
  if (ib.size() < 16) throw IoError("truncated IDX image file: " + image_path);
  if (be32(ib, 0) != kImageMagic) {
    throw IoError("bad IDX image magic in " + image_path);
  }
  const std::uint32_t n = be32(ib, 4);
  const std::uint32_t rows = be32(ib, 8);
  const std::uint32_t cols = be32(ib, 12);
  const std::size_t pixel_count = static_cast<std::size_t>(n) * rows * cols;
  if (ib.size() != 16 + pixel_count) throw IoError("truncated IDX image payload: " + image_path);

  const auto lb = read_bytes(label_path);
  if (lb.size() < 8) throw IoError("truncated IDX label file: " + label_path);
  if (be32(lb, 0) != kLabelMagic) {
    throw IoError("bad IDX label magic in " + label_path);
  }
  const std::uint32_t ln = be32(lb, 4);
  if (lb.size() != 8 + ln) throw IoError("truncated IDX label payload: " + label_path);
  if (ln != n) throw IoError("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                             std::to_string(ln));

  Dataset d;
  d.name = name;
  d.images.resize(n, static_cast<Eigen::Index>(rows) * cols);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t base = 16 + static_cast<std::size_t>(i) * rows * cols;
    for (std::uint32_t p = 0; p < rows * cols; ++p) {
      d.images(i, p) = static_cast<double>(ib[base + p]) / 255.0;
    }
  }
  d.labels.resize(n);
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<int>(lb[8 + i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = std::max(10, max_label + 1);
  d.validate();
  return d;
}

void write_idx(const Dataset& data, const std::string& image_path,
               const std::string& label_path, int image_rows, int image_cols) {
  if (image_rows * image_cols != data.input_dim()) {
    throw ContractError("write_idx: geometry does not match input_dim");
  }
  std::vector<unsigned char> ib;
  put_be32(ib, kImageMagic);
  put_be32(ib, static_cast<std::uint32_t>(data.size()));
  put_be32(ib, static_cast<std::uint32_t>(image_rows));
  put_be32(ib, static_cast<std::uint32_t>(image_cols));
  for (int i = 0; i < data.size(); ++i) {
    for (int p = 0; p < data.input_dim(); ++p) {
      const double v = std::clamp(data.images(i, p), 0.0, 1.0);
      ib.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  std::vector<unsigned char> lb;
  put_be32(lb, kLabelMagic);
  put_be32(lb, static_cast<std::uint32_t>(data.size()));
  for (const int y : data.labels) lb.push_back(static_cast<unsigned char>(y));

  for (const auto& [path, bytes] : {std::pair{image_path, &ib}, std::pair{label_path, &lb}}) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes->data()),
            static_cast<std::streamsize>(bytes->size()));
    if (!f) throw IoError("short write to " + path);
  }
}

Dataset downsample(const Dataset& data, int image_rows, int image_cols, int k) {
  if (k <= 0 || image_rows % k != 0 || image_cols % k != 0) {
    throw ConfigError("downsample: factor must divide the image geometry");
  }
  if (image_rows * image_cols != data.input_dim()) {
    throw ContractError("downsample: geometry does not match input_dim");
  }
  if (k == 1) return data;
  const int out_rows = image_rows / k;
  const int out_cols = image_cols / k;
  Dataset out;
  out.name = data.name;
  out.labels = data.labels;
  out.class_count = data.class_count;
  out.images.resize(data.size(), static_cast<Eigen::Index>(out_rows) * out_cols);
  for (int i = 0; i < data.size(); ++i) {
    for (int r = 0; r < out_rows; ++r) {
      for (int c = 0; c < out_cols; ++c) {
        double acc = 0.0;
        for (int dr = 0; dr < k; ++dr) {
          for (int dc = 0; dc < k; ++dc) {
            acc += data.images(i, (r * k + dr) * image_cols + (c * k + dc));
          }
        }
        out.images(i, r * out_cols + c) = acc / (k * k);
      }
    }
  }
  return out;
}

PartitionPlan dirichlet_partition(const Dataset& data, int clients, double alpha,
                                  int per_client, RngStream& rng) {
  if (clients <= 0 || per_client <= 0) throw ConfigError("dirichlet_partition: sizes must be positive");
  if (alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be positive");
  if (static_cast<long long>(clients) * per_client > data.size()) {
    throw ConfigError("dirichlet_partition: M*N_m exceeds dataset size");
  }
  const int k_classes = data.class_count;

  // Per-class pools, deterministically shuffled.
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(k_classes));
  for (int i = 0; i < data.size(); ++i) pools[static_cast<std::size_t>(data.labels[i])].push_back(i);
  for (auto& pool : pools) rng.shuffle(pool);
  std::vector<std::size_t> pool_pos(static_cast<std::size_t>(k_classes), 0);

  PartitionPlan plan;
  plan.alpha = alpha;
  const std::vector<double> conc(static_cast<std::size_t>(k_classes), alpha);

  std::vector<std::vector<int>> want(static_cast<std::size_t>(clients));
  for (int m = 0; m < clients; ++m) {
    const std::vector<double> q = rng.dirichlet(conc);
    plan.proportions.push_back(q);
    // Largest-remainder rounding of q_k * per_client to integer counts.
    std::vector<int> counts(static_cast<std::size_t>(k_classes), 0);
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (int k = 0; k < k_classes; ++k) {
      const double exact = q[static_cast<std::size_t>(k)] * per_client;
      counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
      assigned += counts[static_cast<std::size_t>(k)];
      remainders.emplace_back(exact - std::floor(exact), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int i = 0; i < per_client - assigned; ++i) {
      counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)] += 1;
    }
    want[static_cast<std::size_t>(m)] = counts;
  }

  // Fill from class pools; exhausted classes substitute from the residual.
  plan.client_indices.assign(static_cast<std::size_t>(clients), {});
  int shortfall = 0;
  for (int m = 0; m < clients; ++m) {
    for (int k = 0; k < k_classes; ++k) {
      int need = want[static_cast<std::size_t>(m)][static_cast<std::size_t>(k)];
      auto& pool = pools[static_cast<std::size_t>(k)];
      auto& pos = pool_pos[static_cast<std::size_t>(k)];
      while (need > 0 && pos < pool.size()) {
        plan.client_indices[static_cast<std::size_t>(m)].push_back(pool[pos++]);
        --need;
      }
      shortfall += need;
    }
  }
  if (shortfall > 0) {
    std::vector<int> residual;
    for (int k = 0; k < k_classes; ++k) {
      auto& pool = pools[static_cast<std::size_t>(k)];
      for (std::size_t p = pool_pos[static_cast<std::size_t>(k)]; p < pool.size(); ++p) {
        residual.push_back(pool[p]);
      }
    }
    rng.shuffle(residual);
    std::size_t cursor = 0;
    for (int m = 0; m < clients; ++m) {
      auto& idx = plan.client_indices[static_cast<std::size_t>(m)];
      while (static_cast<int>(idx.size()) < per_client) {
        if (cursor >= residual.size()) throw ConfigError("dirichlet_partition: pool exhausted");
        idx.push_back(residual[cursor++]);
        plan.substitutions += 1;
      }
    }
    log_note("dirichlet_partition: " + std::to_string(plan.substitutions) +
             " indices substituted from the residual pool");
  }
  return plan;
}

BatchIterator::BatchIterator(std::vector<int> indices, int batch_size, RngStream rng)
    : indices_(std::move(indices)), batch_size_(batch_size), rng_(rng) {
  if (batch_size_ <= 0) throw ConfigError("BatchIterator: batch size must be positive");
  if (indices_.empty()) throw ConfigError("BatchIterator: empty index list");
  rng_.shuffle(indices_);
}

std::vector<int> BatchIterator::next() {
  if (cursor_ >= indices_.size()) {
    rng_.shuffle(indices_);
    cursor_ = 0;
  }
  const std::size_t end = std::min(cursor_ + static_cast<std::size_t>(batch_size_), indices_.size());
  std::vector<int> batch(indices_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         indices_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

}  // namespace fedsim
