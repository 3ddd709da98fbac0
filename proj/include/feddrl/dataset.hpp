#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace feddrl {

// Samples live in rows, flattened row-major to feature_shape.
struct Dataset {
  std::string name;
  int class_count = 0;
  std::vector<Eigen::Index> feature_shape;
  Eigen::MatrixXd features;
  std::vector<int> labels;

  Eigen::Index sample_count() const { return features.rows(); }
  Eigen::Index feature_dim() const { return features.cols(); }
  void validate() const;
};

struct SyntheticSpec {
  int classes = 3;
  Eigen::Index dims = 32;          // ignored when image_like
  Eigen::Index train_samples = 1200;
  Eigen::Index test_samples = 300;
  double separation = 3.0;         // distance of class centers from the origin
  double noise = 1.0;              // per-dimension sample noise
  bool image_like = false;         // 1x28x28 blob images quantized to 1/255 steps
  std::uint64_t seed = 1;
};

// Gaussian clusters around seeded class centers (or blob images when
// image_like). Labels cycle 0..classes-1 so class counts differ by at most 1.
std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec);

// IDX (big-endian header) image/label pairs. Pixel bytes are scaled to [0,1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& name);

// Inverse of load_idx for datasets whose features sit on the k/255 grid.
void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Standard MNIST file names under dir; returns {train, test}.
std::pair<Dataset, Dataset> load_mnist_dir(const std::string& dir);

bool file_exists(const std::string& path);

}  // namespace feddrl
