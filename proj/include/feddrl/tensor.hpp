#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <vector>

#include "feddrl/error.hpp"

namespace feddrl {

// Row-major flat storage plus a shape. Rank 1 covers feature vectors, rank 3
// (channels, height, width) covers image inputs to conv layers.
struct Tensor {
  std::vector<Eigen::Index> shape;
  Eigen::VectorXd data;

  Tensor() = default;
  Tensor(std::vector<Eigen::Index> s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
    if (element_count(shape) != data.size()) throw ConfigError("tensor: shape does not match data size");
  }

  static Eigen::Index element_count(const std::vector<Eigen::Index>& s) {
    Eigen::Index n = 1;
    for (Eigen::Index d : s) {
      if (d <= 0) throw ConfigError("tensor: dimensions must be positive");
      n *= d;
    }
    return n;
  }

  Eigen::Index size() const { return data.size(); }
};

}  // namespace feddrl
