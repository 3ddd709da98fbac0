#include "feddrl/dataset.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "feddrl/error.hpp"
#include "feddrl/rng.hpp"
#include "feddrl/tensor.hpp"

namespace feddrl {

namespace {

constexpr Eigen::Index kImageSide = 28;

std::uint32_t read_be32(std::istream& f, const std::string& path) {
  std::array<unsigned char, 4> b{};
  f.read(reinterpret_cast<char*>(b.data()), 4);
  if (!f) throw ConfigError("truncated IDX file: " + path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& f, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {static_cast<unsigned char>(v >> 24),
                                          static_cast<unsigned char>(v >> 16),
                                          static_cast<unsigned char>(v >> 8),
                                          static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b.data()), 4);
}

Dataset make_vector_split(const SyntheticSpec& spec, const Eigen::MatrixXd& centers,
                          Eigen::Index count, std::uint64_t seed, const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.class_count = spec.classes;
  ds.feature_shape = {spec.dims};
  ds.features.resize(count, spec.dims);
  ds.labels.resize(static_cast<std::size_t>(count));
  auto g = rng::engine(seed);
  for (Eigen::Index i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    ds.labels[static_cast<std::size_t>(i)] = label;
    for (Eigen::Index d = 0; d < spec.dims; ++d)
      ds.features(i, d) = centers(label, d) + rng::gaussian(g, 0.0, spec.noise);
  }
  return ds;
}

Dataset make_image_split(const SyntheticSpec& spec, const Eigen::MatrixXd& templates,
                         Eigen::Index count, std::uint64_t seed, const std::string& name) {
  Dataset ds;
  ds.name = name;
  ds.class_count = spec.classes;
  ds.feature_shape = {1, kImageSide, kImageSide};
  ds.features.resize(count, kImageSide * kImageSide);
  ds.labels.resize(static_cast<std::size_t>(count));
  auto g = rng::engine(seed);
  for (Eigen::Index i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % spec.classes);
    ds.labels[static_cast<std::size_t>(i)] = label;
    const double gain = 0.75 + 0.5 * rng::uniform(g);
    for (Eigen::Index p = 0; p < ds.features.cols(); ++p) {
      double v = templates(label, p) * gain + rng::gaussian(g, 0.0, 0.08);
      v = std::clamp(v, 0.0, 1.0);
      ds.features(i, p) = std::round(v * 255.0) / 255.0;
    }
  }
  return ds;
}

}  // namespace

void Dataset::validate() const {
  if (class_count <= 0) throw ConfigError("dataset: class_count must be positive");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw ConfigError("dataset: label count does not match sample count");
  if (features.cols() != Tensor::element_count(feature_shape))
    throw ConfigError("dataset: feature_shape does not match feature columns");
  for (int l : labels)
    if (l < 0 || l >= class_count) throw ConfigError("dataset: label out of range");
}

std::pair<Dataset, Dataset> make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic dataset: need at least 2 classes");
  if (spec.train_samples < spec.classes || spec.test_samples < 1)
    throw ConfigError("synthetic dataset: sample counts too small");

  if (spec.image_like) {
    // Per-class template: a few soft blobs at class-specific positions.
    Eigen::MatrixXd templates = Eigen::MatrixXd::Zero(spec.classes, kImageSide * kImageSide);
    auto g = rng::engine(rng::derive(spec.seed, {0}));
    for (int c = 0; c < spec.classes; ++c) {
      const int blobs = 3;
      for (int bIdx = 0; bIdx < blobs; ++bIdx) {
        const double cy = rng::uniform(g, 5.0, 23.0);
        const double cx = rng::uniform(g, 5.0, 23.0);
        const double sg = rng::uniform(g, 1.8, 3.6);
        const double amp = rng::uniform(g, 0.6, 1.0);
        for (Eigen::Index y = 0; y < kImageSide; ++y) {
          for (Eigen::Index x = 0; x < kImageSide; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            templates(c, y * kImageSide + x) += amp * std::exp(-d2 / (2.0 * sg * sg));
          }
        }
      }
      for (Eigen::Index p = 0; p < templates.cols(); ++p)
        templates(c, p) = std::min(templates(c, p), 1.0);
    }
    return {make_image_split(spec, templates, spec.train_samples, rng::derive(spec.seed, {1}), "synthetic-images-train"),
            make_image_split(spec, templates, spec.test_samples, rng::derive(spec.seed, {2}), "synthetic-images-test")};
  }

  if (spec.dims < 1) throw ConfigError("synthetic dataset: dims must be positive");
  Eigen::MatrixXd centers(spec.classes, spec.dims);
  auto g = rng::engine(rng::derive(spec.seed, {0}));
  for (int c = 0; c < spec.classes; ++c) {
    Eigen::VectorXd dir(spec.dims);
    for (Eigen::Index d = 0; d < spec.dims; ++d) dir[d] = rng::gaussian(g);
    centers.row(c) = (spec.separation / dir.norm()) * dir.transpose();
  }
  return {make_vector_split(spec, centers, spec.train_samples, rng::derive(spec.seed, {1}), "synthetic-train"),
          make_vector_split(spec, centers, spec.test_samples, rng::derive(spec.seed, {2}), "synthetic-test")};
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 const std::string& name) {
  std::ifstream fi(images_path, std::ios::binary);
  if (!fi) throw ConfigError("cannot open IDX images: " + images_path);
  if (read_be32(fi, images_path) != 0x00000803u)
    throw ConfigError("bad IDX image magic: " + images_path);
  const auto count = read_be32(fi, images_path);
  const auto rows = read_be32(fi, images_path);
  const auto cols = read_be32(fi, images_path);
  if (count == 0 || rows == 0 || cols == 0) throw ConfigError("empty IDX image file: " + images_path);

  std::ifstream fl(labels_path, std::ios::binary);
  if (!fl) throw ConfigError("cannot open IDX labels: " + labels_path);
  if (read_be32(fl, labels_path) != 0x00000801u)
    throw ConfigError("bad IDX label magic: " + labels_path);
  if (read_be32(fl, labels_path) != count)
    throw ConfigError("IDX image/label count mismatch: " + labels_path);

  Dataset ds;
  ds.name = name;
  ds.feature_shape = {1, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  ds.features.resize(count, static_cast<Eigen::Index>(rows) * cols);
  ds.labels.resize(count);

  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  for (std::uint32_t i = 0; i < count; ++i) {
    fi.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!fi) throw ConfigError("truncated IDX image data: " + images_path);
    for (std::size_t p = 0; p < buf.size(); ++p)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = buf[p] / 255.0;
  }
  std::vector<unsigned char> lab(count);
  fl.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
  if (!fl) throw ConfigError("truncated IDX label data: " + labels_path);
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.class_count = max_label + 1;
  return ds;
}

void write_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.feature_shape.size() != 3 || ds.feature_shape[0] != 1)
    throw ConfigError("write_idx: dataset is not single-channel image data");
  std::ofstream fi(images_path, std::ios::binary);
  if (!fi) throw std::runtime_error("cannot write IDX images: " + images_path);
  write_be32(fi, 0x00000803u);
  write_be32(fi, static_cast<std::uint32_t>(ds.sample_count()));
  write_be32(fi, static_cast<std::uint32_t>(ds.feature_shape[1]));
  write_be32(fi, static_cast<std::uint32_t>(ds.feature_shape[2]));
  std::vector<unsigned char> buf(static_cast<std::size_t>(ds.feature_dim()));
  for (Eigen::Index i = 0; i < ds.sample_count(); ++i) {
    for (Eigen::Index p = 0; p < ds.feature_dim(); ++p) {
      const double v = std::clamp(ds.features(i, p), 0.0, 1.0);
      buf[static_cast<std::size_t>(p)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    fi.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  std::ofstream fl(labels_path, std::ios::binary);
  if (!fl) throw std::runtime_error("cannot write IDX labels: " + labels_path);
  write_be32(fl, 0x00000801u);
  write_be32(fl, static_cast<std::uint32_t>(ds.sample_count()));
  for (int label : ds.labels) fl.put(static_cast<char>(label));
  if (!fi || !fl) throw std::runtime_error("IDX write failed");
}

std::pair<Dataset, Dataset> load_mnist_dir(const std::string& dir) {
  const std::string base = dir.empty() ? "." : dir;
  return {load_idx(base + "/train-images-idx3-ubyte", base + "/train-labels-idx1-ubyte", "mnist-train"),
          load_idx(base + "/t10k-images-idx3-ubyte", base + "/t10k-labels-idx1-ubyte", "mnist-test")};
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace feddrl
