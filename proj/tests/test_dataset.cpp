#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <map>

#include "feddrl/dataset.hpp"
#include "feddrl/error.hpp"

using namespace feddrl;

namespace {

SyntheticSpec vec_spec() {
  SyntheticSpec s;
  s.classes = 5;
  s.dims = 8;
  s.train_samples = 203;
  s.test_samples = 52;
  s.seed = 9;
  return s;
}

}  // namespace

TEST_CASE("synthetic vector data is balanced, labeled, and validates") {
  const auto [train, test] = make_synthetic(vec_spec());
  train.validate();
  test.validate();
  CHECK(train.sample_count() == 203);
  CHECK(test.sample_count() == 52);
  CHECK(train.feature_dim() == 8);
  CHECK(train.class_count == 5);

  std::map<int, int> counts;
  for (int l : train.labels) counts[l]++;
  int lo = 1 << 30, hi = 0;
  for (auto& [l, c] : counts) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  CHECK(counts.size() == 5);
  CHECK(hi - lo <= 1);
}

TEST_CASE("synthetic generation is seed-deterministic") {
  const auto [a_train, a_test] = make_synthetic(vec_spec());
  const auto [b_train, b_test] = make_synthetic(vec_spec());
  CHECK(a_train.features == b_train.features);
  CHECK(a_train.labels == b_train.labels);
  CHECK(a_test.features == b_test.features);

  auto other = vec_spec();
  other.seed = 10;
  const auto [c_train, c_test] = make_synthetic(other);
  CHECK(a_train.features != c_train.features);
}

TEST_CASE("class centers sit at the separation radius") {
  auto spec = vec_spec();
  spec.noise = 1e-9;
  spec.separation = 4.0;
  const auto [train, test] = make_synthetic(spec);
  for (Eigen::Index i = 0; i < 10; ++i)
    CHECK(train.features.row(i).norm() == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("image-like synthetic data lives on the byte grid") {
  SyntheticSpec s;
  s.classes = 4;
  s.image_like = true;
  s.train_samples = 40;
  s.test_samples = 12;
  s.seed = 3;
  const auto [train, test] = make_synthetic(s);
  train.validate();
  CHECK(train.feature_shape == std::vector<Eigen::Index>{1, 28, 28});
  CHECK(train.feature_dim() == 784);
  for (Eigen::Index i = 0; i < train.sample_count(); ++i) {
    for (Eigen::Index p = 0; p < train.feature_dim(); ++p) {
      const double v = train.features(i, p);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
    }
  }
}

TEST_CASE("IDX files round-trip grid datasets exactly") {
  SyntheticSpec s;
  s.classes = 3;
  s.image_like = true;
  s.train_samples = 25;
  s.test_samples = 5;
  s.seed = 4;
  const auto [train, test] = make_synthetic(s);
  write_idx(train, "ds_imgs.idx", "ds_labels.idx");
  const Dataset back = load_idx("ds_imgs.idx", "ds_labels.idx", "roundtrip");
  CHECK(back.sample_count() == train.sample_count());
  CHECK(back.labels == train.labels);
  CHECK(back.feature_shape == train.feature_shape);
  CHECK((back.features - train.features).cwiseAbs().maxCoeff() == 0.0);
  std::remove("ds_imgs.idx");
  std::remove("ds_labels.idx");
}

TEST_CASE("IDX loader rejects malformed files") {
  {
    std::ofstream f("bad_images.idx", std::ios::binary);
    const char junk[8] = {0, 0, 1, 1, 0, 0, 0, 2};
    f.write(junk, 8);
  }
  CHECK_THROWS_AS(load_idx("bad_images.idx", "bad_images.idx", "x"), ConfigError);
  CHECK_THROWS_AS(load_idx("missing_file.idx", "missing_file.idx", "x"), ConfigError);
  CHECK_THROWS_AS(load_mnist_dir("no_such_dir"), ConfigError);
  std::remove("bad_images.idx");
}

TEST_CASE("spec validation rejects degenerate shapes") {
  SyntheticSpec s;
  s.classes = 1;
  CHECK_THROWS_AS(make_synthetic(s), ConfigError);
  s = SyntheticSpec{};
  s.dims = 0;
  CHECK_THROWS_AS(make_synthetic(s), ConfigError);
  s = SyntheticSpec{};
  s.train_samples = 1;
  s.classes = 5;
  CHECK_THROWS_AS(make_synthetic(s), ConfigError);
}
