#include "feddrl/network.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"

namespace feddrl {

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Softmax: return "softmax";
  }
  throw ConfigError("unknown activation");
}

Activation activation_from_name(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::Relu;
  if (s == "leaky_relu") return Activation::LeakyRelu;
  if (s == "softmax") return Activation::Softmax;
  throw ConfigError("unknown activation: " + s);
}

}  // namespace

LayerSpec LayerSpec::dense(Eigen::Index in, Eigen::Index out) {
  if (in <= 0 || out <= 0) throw ConfigError("dense layer: in and out must be positive");
  LayerSpec s;
  s.kind = Kind::Dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::conv2d(Eigen::Index in_channels, Eigen::Index out_channels, Eigen::Index kernel) {
  if (in_channels <= 0 || out_channels <= 0 || kernel <= 0)
    throw ConfigError("conv2d layer: channels and kernel must be positive");
  LayerSpec s;
  s.kind = Kind::Conv2d;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  s.kernel = kernel;
  return s;
}

LayerSpec LayerSpec::act(Activation a, double leak) {
  LayerSpec s;
  s.kind = Kind::Activation;
  s.activation = a;
  s.leak = leak;
  return s;
}

std::vector<LayerSpec> mlp_layers(Eigen::Index in, const std::vector<Eigen::Index>& hidden,
                                  Eigen::Index out, double leak) {
  std::vector<LayerSpec> layers;
  Eigen::Index prev = in;
  for (Eigen::Index h : hidden) {
    layers.push_back(LayerSpec::dense(prev, h));
    layers.push_back(LayerSpec::act(Activation::LeakyRelu, leak));
    prev = h;
  }
  layers.push_back(LayerSpec::dense(prev, out));
  return layers;
}

Network::Network(std::vector<LayerSpec> specs) : specs_(std::move(specs)) {
  if (specs_.empty()) throw ConfigError("network needs at least one layer");
  Eigen::Index offset = 0;
  blocks_.reserve(specs_.size());
  for (const auto& s : specs_) {
    ParamBlock b;
    b.offset = offset;
    switch (s.kind) {
      case LayerSpec::Kind::Dense:
        b.weight_count = s.in * s.out;
        b.bias_count = s.out;
        b.fan_in = s.in;
        break;
      case LayerSpec::Kind::Conv2d:
        b.weight_count = s.out_channels * s.in_channels * s.kernel * s.kernel;
        b.bias_count = s.out_channels;
        b.fan_in = s.in_channels * s.kernel * s.kernel;
        break;
      case LayerSpec::Kind::Activation:
        break;
    }
    offset += b.weight_count + b.bias_count;
    blocks_.push_back(b);
  }
  params_ = Eigen::VectorXd::Zero(offset);
  caches_.resize(specs_.size());
}

void Network::set_params(const Eigen::VectorXd& p) {
  if (p.size() != params_.size()) throw ConfigError("set_params: size mismatch");
  params_ = p;
}

void Network::add_scaled(const Eigen::VectorXd& direction, double scale) {
  if (direction.size() != params_.size()) throw ConfigError("add_scaled: size mismatch");
  params_ += scale * direction;
}

void Network::init_params(std::uint64_t seed) {
  auto g = rng::engine(seed);
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& b = blocks_[i];
    if (b.weight_count + b.bias_count == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in));
    for (Eigen::Index j = 0; j < b.weight_count + b.bias_count; ++j)
      params_[b.offset + j] = rng::uniform(g, -bound, bound);
  }
}

std::vector<Eigen::Index> Network::layer_out_shape(std::size_t i,
                                                   const std::vector<Eigen::Index>& in_shape) const {
  const auto& s = specs_[i];
  switch (s.kind) {
    case LayerSpec::Kind::Dense:
      if (Tensor::element_count(in_shape) != s.in)
        throw ConfigError("dense layer: input size mismatch");
      return {s.out};
    case LayerSpec::Kind::Conv2d: {
      if (in_shape.size() != 3) throw ConfigError("conv2d layer: input must be rank 3");
      if (in_shape[0] != s.in_channels) throw ConfigError("conv2d layer: channel mismatch");
      const Eigen::Index oh = in_shape[1] - s.kernel + 1;
      const Eigen::Index ow = in_shape[2] - s.kernel + 1;
      if (oh <= 0 || ow <= 0) throw ConfigError("conv2d layer: kernel larger than input");
      return {s.out_channels, oh, ow};
    }
    case LayerSpec::Kind::Activation:
      if (s.activation == Activation::Softmax && in_shape.size() != 1)
        throw ConfigError("softmax: input must be rank 1");
      return in_shape;
  }
  throw ConfigError("unknown layer kind");
}

std::vector<Eigen::Index> Network::output_shape(const std::vector<Eigen::Index>& in_shape) const {
  std::vector<Eigen::Index> shape = in_shape;
  for (std::size_t i = 0; i < specs_.size(); ++i) shape = layer_out_shape(i, shape);
  return shape;
}

Eigen::MatrixXd Network::apply_layer(std::size_t i, const Eigen::MatrixXd& x,
                                     const std::vector<Eigen::Index>& in_shape,
                                     std::vector<Eigen::Index>& out_shape) {
  const auto& s = specs_[i];
  out_shape = layer_out_shape(i, in_shape);
  switch (s.kind) {
    case LayerSpec::Kind::Dense: {
      ConstRowMajorMap w(params_.data() + blocks_[i].offset, s.out, s.in);
      const auto bias = params_.segment(blocks_[i].offset + blocks_[i].weight_count, s.out);
      Eigen::MatrixXd y = x * w.transpose();
      y.rowwise() += bias.transpose();
      if (training_) {
        caches_[i].saved = x;
        caches_[i].in_shape = in_shape;
      }
      return y;
    }
    case LayerSpec::Kind::Conv2d: {
      const Eigen::Index c = in_shape[0], h = in_shape[1], wd = in_shape[2];
      const Eigen::Index k = s.kernel, f = s.out_channels;
      const Eigen::Index oh = out_shape[1], ow = out_shape[2];
      const double* wt = params_.data() + blocks_[i].offset;
      const double* bias = wt + blocks_[i].weight_count;
      Eigen::MatrixXd y(x.rows(), f * oh * ow);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Eigen::RowVectorXd row = x.row(r);
        for (Eigen::Index fo = 0; fo < f; ++fo) {
          for (Eigen::Index yo = 0; yo < oh; ++yo) {
            for (Eigen::Index xo = 0; xo < ow; ++xo) {
              double acc = bias[fo];
              for (Eigen::Index ci = 0; ci < c; ++ci) {
                const double* wk = wt + ((fo * c + ci) * k * k);
                for (Eigen::Index ki = 0; ki < k; ++ki)
                  for (Eigen::Index kj = 0; kj < k; ++kj)
                    acc += wk[ki * k + kj] * row[ci * h * wd + (yo + ki) * wd + (xo + kj)];
              }
              y(r, (fo * oh + yo) * ow + xo) = acc;
            }
          }
        }
      }
      if (training_) {
        caches_[i].saved = x;
        caches_[i].in_shape = in_shape;
      }
      return y;
    }
    case LayerSpec::Kind::Activation: {
      Eigen::MatrixXd y;
      switch (s.activation) {
        case Activation::Identity:
          y = x;
          break;
        case Activation::Relu:
          y = x.cwiseMax(0.0);
          break;
        case Activation::LeakyRelu:
          y = (x.array() > 0.0).select(x, s.leak * x);
          break;
        case Activation::Softmax: {
          y.resize(x.rows(), x.cols());
          for (Eigen::Index r = 0; r < x.rows(); ++r) {
            Eigen::ArrayXd row = x.row(r).transpose().array();
            row -= row.maxCoeff();
            row = row.exp();
            y.row(r) = (row / row.sum()).transpose();
          }
          break;
        }
      }
      if (training_) {
        caches_[i].saved = (s.activation == Activation::Softmax) ? y : x;
        caches_[i].in_shape = in_shape;
      }
      return y;
    }
  }
  throw ConfigError("unknown layer kind");
}

Eigen::MatrixXd Network::forward(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& in_shape) {
  if (x.rows() < 1) throw ConfigError("forward: empty batch");
  if (x.cols() != Tensor::element_count(in_shape)) throw ConfigError("forward: input shape mismatch");
  if (!x.allFinite()) throw std::runtime_error("forward: non-finite input");
  Eigen::MatrixXd cur = x;
  std::vector<Eigen::Index> shape = in_shape;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    std::vector<Eigen::Index> next;
    cur = apply_layer(i, cur, shape, next);
    shape = std::move(next);
  }
  if (!cur.allFinite()) throw std::runtime_error("forward: non-finite output");
  cache_valid_ = training_;
  return cur;
}

Tensor Network::forward(const Tensor& x) {
  Eigen::MatrixXd row = x.data.transpose();
  Eigen::MatrixXd y = forward(row, x.shape);
  return Tensor(output_shape(x.shape), y.row(0).transpose());
}

Eigen::MatrixXd Network::backprop_layer(std::size_t i, const Eigen::MatrixXd& grad,
                                        Eigen::VectorXd& param_grad) {
  const auto& s = specs_[i];
  const auto& cache = caches_[i];
  switch (s.kind) {
    case LayerSpec::Kind::Dense: {
      ConstRowMajorMap w(params_.data() + blocks_[i].offset, s.out, s.in);
      RowMajorMap dw(param_grad.data() + blocks_[i].offset, s.out, s.in);
      dw += grad.transpose() * cache.saved;
      param_grad.segment(blocks_[i].offset + blocks_[i].weight_count, s.out) +=
          grad.colwise().sum().transpose();
      return grad * w;
    }
    case LayerSpec::Kind::Conv2d: {
      const Eigen::Index c = cache.in_shape[0], h = cache.in_shape[1], wd = cache.in_shape[2];
      const Eigen::Index k = s.kernel, f = s.out_channels;
      const Eigen::Index oh = h - k + 1, ow = wd - k + 1;
      const double* wt = params_.data() + blocks_[i].offset;
      double* dwt = param_grad.data() + blocks_[i].offset;
      double* dbias = dwt + blocks_[i].weight_count;
      Eigen::MatrixXd dx = Eigen::MatrixXd::Zero(cache.saved.rows(), cache.saved.cols());
      for (Eigen::Index r = 0; r < grad.rows(); ++r) {
        for (Eigen::Index fo = 0; fo < f; ++fo) {
          for (Eigen::Index yo = 0; yo < oh; ++yo) {
            for (Eigen::Index xo = 0; xo < ow; ++xo) {
              const double gv = grad(r, (fo * oh + yo) * ow + xo);
              dbias[fo] += gv;
              for (Eigen::Index ci = 0; ci < c; ++ci) {
                const double* wk = wt + ((fo * c + ci) * k * k);
                double* dwk = dwt + ((fo * c + ci) * k * k);
                for (Eigen::Index ki = 0; ki < k; ++ki) {
                  for (Eigen::Index kj = 0; kj < k; ++kj) {
                    const Eigen::Index xi = ci * h * wd + (yo + ki) * wd + (xo + kj);
                    dwk[ki * k + kj] += gv * cache.saved(r, xi);
                    dx(r, xi) += gv * wk[ki * k + kj];
                  }
                }
              }
            }
          }
        }
      }
      return dx;
    }
    case LayerSpec::Kind::Activation: {
      switch (s.activation) {
        case Activation::Identity:
          return grad;
        case Activation::Relu:
          return (cache.saved.array() > 0.0).select(grad, 0.0);
        case Activation::LeakyRelu:
          return (cache.saved.array() > 0.0).select(grad, s.leak * grad);
        case Activation::Softmax: {
          Eigen::MatrixXd dx(grad.rows(), grad.cols());
          for (Eigen::Index r = 0; r < grad.rows(); ++r) {
            const double dot = grad.row(r).dot(cache.saved.row(r));
            dx.row(r) = cache.saved.row(r).array() * (grad.row(r).array() - dot);
          }
          return dx;
        }
      }
      throw ConfigError("unknown activation");
    }
  }
  throw ConfigError("unknown layer kind");
}

BackwardResult Network::backward(const Eigen::MatrixXd& output_grad) {
  if (!cache_valid_) throw std::runtime_error("backward: no cached forward pass");
  BackwardResult res;
  res.param_grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd g = output_grad;
  for (std::size_t i = specs_.size(); i-- > 0;) g = backprop_layer(i, g, res.param_grad);
  res.input_grad = std::move(g);
  cache_valid_ = false;
  if (!res.param_grad.allFinite() || !res.input_grad.allFinite())
    throw std::runtime_error("backward: non-finite gradient");
  return res;
}

Eigen::VectorXd softmax_vec(const Eigen::VectorXd& logits) {
  Eigen::ArrayXd a = logits.array() - logits.maxCoeff();
  a = a.exp();
  return a / a.sum();
}

double cross_entropy_loss(const Eigen::VectorXd& logits, int label) {
  if (label < 0 || label >= logits.size()) throw ConfigError("cross_entropy_loss: label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits[label];
}

BatchLoss cross_entropy_with_grad(const Eigen::MatrixXd& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows())
    throw ConfigError("cross_entropy_with_grad: batch size mismatch");
  BatchLoss out;
  out.logits_grad.resize(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int label = labels[static_cast<std::size_t>(r)];
    if (label < 0 || label >= logits.cols()) throw ConfigError("cross_entropy_with_grad: label out of range");
    Eigen::VectorXd p = softmax_vec(logits.row(r).transpose());
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.loss += (lse - logits(r, label)) * inv_b;
    p[label] -= 1.0;
    out.logits_grad.row(r) = (p * inv_b).transpose();
  }
  return out;
}

double sgd_step(Network& net, const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& in_shape,
                const std::vector<int>& labels, const SgdConfig& cfg, const Eigen::VectorXd* anchor) {
  if (cfg.learning_rate <= 0.0) throw ConfigError("sgd_step: learning_rate must be positive");
  const bool was_training = net.training();
  net.set_training(true);
  const Eigen::MatrixXd logits = net.forward(x, in_shape);
  BatchLoss bl = cross_entropy_with_grad(logits, labels);
  BackwardResult bw = net.backward(bl.logits_grad);
  net.set_training(was_training);
  double loss = bl.loss;
  if (anchor != nullptr && cfg.proximal_mu > 0.0) {
    if (anchor->size() != net.params().size()) throw ConfigError("sgd_step: anchor size mismatch");
    const Eigen::VectorXd diff = net.params() - *anchor;
    loss += 0.5 * cfg.proximal_mu * diff.squaredNorm();
    bw.param_grad += cfg.proximal_mu * diff;
  }
  net.add_scaled(bw.param_grad, -cfg.learning_rate);
  return loss;
}

void save_network(const Network& net, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  std::ostringstream head;
  head << "feddrl-net v1\n";
  head << "layers " << net.specs().size() << "\n";
  head << std::setprecision(17);
  for (const auto& s : net.specs()) {
    switch (s.kind) {
      case LayerSpec::Kind::Dense:
        head << "dense " << s.in << " " << s.out << "\n";
        break;
      case LayerSpec::Kind::Conv2d:
        head << "conv2d " << s.in_channels << " " << s.out_channels << " " << s.kernel << "\n";
        break;
      case LayerSpec::Kind::Activation:
        head << "act " << activation_name(s.activation);
        if (s.activation == Activation::LeakyRelu) head << " " << s.leak;
        head << "\n";
        break;
    }
  }
  head << "params " << net.param_count() << "\n";
  f << head.str();
  f.write(reinterpret_cast<const char*>(net.params().data()),
          static_cast<std::streamsize>(net.param_count()) * 8);
  if (!f) throw std::runtime_error("write failed: " + path);
}

Network load_network(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(f, line) || line != "feddrl-net v1") throw ConfigError("bad checkpoint header: " + path);
  std::size_t layer_count = 0;
  if (!std::getline(f, line)) throw ConfigError("truncated checkpoint: " + path);
  {
    std::istringstream is(line);
    std::string tag;
    if (!(is >> tag >> layer_count) || tag != "layers") throw ConfigError("bad layer count: " + path);
  }
  std::vector<LayerSpec> specs;
  specs.reserve(layer_count);
  for (std::size_t i = 0; i < layer_count; ++i) {
    if (!std::getline(f, line)) throw ConfigError("truncated checkpoint: " + path);
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "dense") {
      Eigen::Index in = 0, out = 0;
      if (!(is >> in >> out)) throw ConfigError("bad dense layer line: " + path);
      specs.push_back(LayerSpec::dense(in, out));
    } else if (kind == "conv2d") {
      Eigen::Index ci = 0, co = 0, k = 0;
      if (!(is >> ci >> co >> k)) throw ConfigError("bad conv2d layer line: " + path);
      specs.push_back(LayerSpec::conv2d(ci, co, k));
    } else if (kind == "act") {
      std::string name;
      if (!(is >> name)) throw ConfigError("bad activation line: " + path);
      const Activation a = activation_from_name(name);
      double leak = 0.01;
      if (a == Activation::LeakyRelu && !(is >> leak)) throw ConfigError("bad leak value: " + path);
      specs.push_back(LayerSpec::act(a, leak));
    } else {
      throw ConfigError("unknown layer kind in checkpoint: " + kind);
    }
  }
  Eigen::Index count = 0;
  if (!std::getline(f, line)) throw ConfigError("truncated checkpoint: " + path);
  {
    std::istringstream is(line);
    std::string tag;
    if (!(is >> tag >> count) || tag != "params") throw ConfigError("bad param count line: " + path);
  }
  Network net(std::move(specs));
  if (net.param_count() != count) throw ConfigError("checkpoint param count mismatch: " + path);
  Eigen::VectorXd p(count);
  f.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(count) * 8);
  if (f.gcount() != static_cast<std::streamsize>(count) * 8) throw ConfigError("truncated parameter block: " + path);
  net.set_params(p);
  return net;
}

}  // namespace feddrl
