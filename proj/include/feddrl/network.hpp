#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "feddrl/tensor.hpp"

namespace feddrl {

enum class Activation { Identity, Relu, LeakyRelu, Softmax };

struct LayerSpec {
  enum class Kind { Dense, Conv2d, Activation };

  Kind kind = Kind::Dense;
  Eigen::Index in = 0, out = 0;                            // dense
  Eigen::Index in_channels = 0, out_channels = 0, kernel = 0;  // conv2d
  Activation activation = Activation::Identity;
  double leak = 0.01;

  static LayerSpec dense(Eigen::Index in, Eigen::Index out);
  static LayerSpec conv2d(Eigen::Index in_channels, Eigen::Index out_channels, Eigen::Index kernel);
  static LayerSpec act(Activation a, double leak = 0.01);

  bool operator==(const LayerSpec&) const = default;
};

// in -> hidden... -> out dense stack with leaky ReLU between layers and raw
// logits at the end.
std::vector<LayerSpec> mlp_layers(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                  Eigen::Index out, double leak = 0.01);

struct BackwardResult {
  Eigen::VectorXd param_grad;
  Eigen::MatrixXd input_grad;
};

// Feed-forward network over a flat parameter vector. Batched activations are
// row-per-sample matrices; rank >1 sample shapes are carried alongside in
// flattened row-major form.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> specs);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  Eigen::Index param_count() const { return params_.size(); }
  const Eigen::VectorXd& params() const { return params_; }
  void set_params(const Eigen::VectorXd& p);
  void add_scaled(const Eigen::VectorXd& direction, double scale);

  // Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer, weights
  // then biases, in layer order.
  void init_params(std::uint64_t seed);

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  std::vector<Eigen::Index> output_shape(const std::vector<Eigen::Index>& in_shape) const;

  // x holds one flattened sample per row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& in_shape);
  Tensor forward(const Tensor& x);

  // Gradients for the forward pass cached by the last training-mode forward.
  // output_grad has the output's batch layout.
  BackwardResult backward(const Eigen::MatrixXd& output_grad);

 private:
  struct ParamBlock {
    Eigen::Index offset = 0, weight_count = 0, bias_count = 0, fan_in = 1;
  };
  struct Cache {
    Eigen::MatrixXd saved;  // layer input, or output for softmax
    std::vector<Eigen::Index> in_shape;
  };

  Eigen::MatrixXd apply_layer(std::size_t i, const Eigen::MatrixXd& x,
                              const std::vector<Eigen::Index>& in_shape,
                              std::vector<Eigen::Index>& out_shape);
  Eigen::MatrixXd backprop_layer(std::size_t i, const Eigen::MatrixXd& grad,
                                 Eigen::VectorXd& param_grad);
  std::vector<Eigen::Index> layer_out_shape(std::size_t i, const std::vector<Eigen::Index>& in_shape) const;

  std::vector<LayerSpec> specs_;
  std::vector<ParamBlock> blocks_;
  Eigen::VectorXd params_;
  std::vector<Cache> caches_;
  bool training_ = false;
  bool cache_valid_ = false;
};

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& logits);

// Stable -log softmax(logits)[label].
double cross_entropy_loss(const Eigen::VectorXd& logits, int label);

struct BatchLoss {
  double loss = 0.0;              // mean over batch
  Eigen::MatrixXd logits_grad;    // d(mean loss)/d(logits)
};
BatchLoss cross_entropy_with_grad(const Eigen::MatrixXd& logits, const std::vector<int>& labels);

struct SgdConfig {
  double learning_rate = 0.01;
  int batch_size = 10;
  int epochs = 5;
  double proximal_mu = 0.0;  // 0 disables the proximal term
};

// One gradient step on one batch. With a non-null anchor the objective gains
// (proximal_mu/2)*||w - anchor||^2. Returns the batch objective value before
// the step.
double sgd_step(Network& net, const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& in_shape,
                const std::vector<int>& labels, const SgdConfig& cfg,
                const Eigen::VectorXd* anchor = nullptr);

// Text header plus raw little-endian doubles; round-trips bit-exactly.
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace feddrl
