#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "core/dataset.hpp"

using namespace tracekit;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tracekit_dataset_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

Dataset random_dataset(std::int64_t n, std::int64_t d, std::int32_t classes,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.class_count = classes;
  ds.features.resize(n, d);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) ds.features(i, j) = gauss(rng);
    ds.labels.push_back(static_cast<std::int32_t>(i % classes));
  }
  return ds;
}

}  // namespace

TEST_CASE("csv load reports shape and classes") {
  auto path = scratch("basic.csv");
  write_file(path, "f0,f1,label\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,0\n");
  Dataset ds = load_dataset(path.string(), FileFormat::kCsv);
  CHECK(ds.rows() == 3);
  CHECK(ds.cols() == 2);
  CHECK(ds.class_count == 2);
  CHECK(ds.labels == std::vector<std::int32_t>{0, 1, 0});
  CHECK(ds.features(1, 0) == 3.0);
  CHECK_FALSE(ds.normalized);
}

TEST_CASE("csv load rejects degenerate input") {
  auto empty = scratch("empty.csv");
  write_file(empty, "");
  CHECK_THROWS_AS(load_dataset(empty.string(), FileFormat::kCsv), Error);

  auto ragged = scratch("ragged.csv");
  write_file(ragged, "f0,f1,label\n1.0,2.0,0\n3.0,1\n");
  try {
    load_dataset(ragged.string(), FileFormat::kCsv);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kParse);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
}

TEST_CASE("label outside the declared class count names the row") {
  auto path = scratch("badlabel.csv");
  write_file(path, "f0,f1,label\n1.0,2.0,0\n3.0,4.0,2\n");
  try {
    load_dataset(path.string(), FileFormat::kCsv, 2);
    FAIL("expected validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("csv and json round trips are bit exact") {
  Dataset ds = random_dataset(23, 5, 3, 99);
  for (FileFormat fmt : {FileFormat::kCsv, FileFormat::kJson}) {
    auto path = scratch(fmt == FileFormat::kCsv ? "round.csv" : "round.json");
    save_dataset(ds, path.string(), fmt);
    Dataset back = load_dataset(path.string(), fmt);
    REQUIRE(back.rows() == ds.rows());
    REQUIRE(back.cols() == ds.cols());
    CHECK(back.class_count == ds.class_count);
    CHECK(back.labels == ds.labels);
    CHECK((back.features.array() == ds.features.array()).all());
  }
}

TEST_CASE("real-labeled datasets survive the round trip") {
  ShiftConfig cfg;
  cfg.world = "gaussian-mean";
  cfg.mean_shift_mu = {0.5, 0.0};
  cfg.n = 40;
  cfg.seed = 3;
  ShiftedPair pair = make_gaussian_mean_shift(cfg);
  auto path = scratch("real.csv");
  save_dataset(pair.target, path.string(), FileFormat::kCsv);
  Dataset back = load_dataset(path.string(), FileFormat::kCsv, kRealLabels);
  REQUIRE(back.kind == LabelKind::kReal);
  REQUIRE(back.rows() == 40);
  for (std::size_t i = 0; i < back.targets.size(); ++i)
    CHECK(back.targets[i] == pair.target.targets[i]);
  CHECK((back.features.array() == pair.target.features.array()).all());
}

TEST_CASE("row normalization") {
  Dataset ds;
  ds.class_count = 2;
  ds.features.resize(3, 2);
  ds.features << 3.0, 4.0, 0.0, 0.0, 5.0, 0.0;
  ds.labels = {0, 1, 0};
  Dataset out = normalize_rows(ds);
  CHECK(out.normalized);
  CHECK(out.features(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(out.features(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(out.features(1, 0) == 0.0);  // zero rows pass through
  CHECK(out.features(1, 1) == 0.0);
  CHECK(out.features(2, 0) == doctest::Approx(1.0).epsilon(1e-12));
  for (std::int64_t i = 0; i < out.rows(); ++i) {
    double norm = out.features.row(i).norm();
    if (norm > 0) CHECK(norm == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("stratified split hits the apportioned counts") {
  // 100 rows, two balanced classes, fraction 0.15. The apportionment oracle:
  // per-class exact share is 7.5, floors give 7+7, round(0.15*100)=15 leaves
  // one extra seat, and the remainder tie goes to the lower class id: 8/7.
  Dataset ds = random_dataset(100, 2, 2, 7);
  for (std::int64_t i = 0; i < 100; ++i) ds.features(i, 0) = double(i);
  SplitSpec spec;
  spec.validation_fraction = 0.15;
  spec.stratified = true;
  spec.seed = 0;
  SplitResult res = split(ds, spec);
  REQUIRE(res.validation.rows() == 15);
  REQUIRE(res.train.rows() == 85);
  int class0 = 0;
  for (auto lab : res.validation.labels) class0 += lab == 0 ? 1 : 0;
  CHECK(class0 == 8);
  CHECK(static_cast<int>(res.validation.labels.size()) - class0 == 7);

  // Disjoint and covering: the planted feature ids partition {0..99}.
  std::set<int> seen;
  for (std::int64_t i = 0; i < res.train.rows(); ++i)
    seen.insert(static_cast<int>(res.train.features(i, 0)));
  for (std::int64_t i = 0; i < res.validation.rows(); ++i)
    seen.insert(static_cast<int>(res.validation.features(i, 0)));
  CHECK(seen.size() == 100);
}

TEST_CASE("splits are deterministic per seed") {
  Dataset ds = random_dataset(60, 3, 2, 11);
  SplitSpec spec;
  spec.seed = 42;
  SplitResult a = split(ds, spec);
  SplitResult b = split(ds, spec);
  CHECK((a.train.features.array() == b.train.features.array()).all());
  CHECK((a.validation.features.array() == b.validation.features.array()).all());
  CHECK(a.validation.labels == b.validation.labels);
  spec.seed = 43;
  SplitResult c = split(ds, spec);
  CHECK_FALSE((a.validation.features.array() == c.validation.features.array()).all());
}

TEST_CASE("stratification rejects infeasible strata") {
  Dataset ds = random_dataset(3, 2, 3, 5);  // one sample per class
  SplitSpec spec;
  CHECK_THROWS_AS(split(ds, spec), Error);
}

TEST_CASE("plain split covers regression data") {
  ShiftConfig cfg;
  cfg.world = "gaussian-mean";
  cfg.mean_shift_mu = {0.0};
  cfg.n = 50;
  ShiftedPair pair = make_gaussian_mean_shift(cfg);
  SplitSpec spec;
  spec.validation_fraction = 0.2;
  spec.stratified = true;  // falls back: no classes to stratify
  SplitResult res = split(pair.source, spec);
  CHECK(res.validation.rows() == 10);
  CHECK(res.train.rows() == 40);
  CHECK(res.validation.kind == LabelKind::kReal);
}

TEST_CASE("blobs translation moves the class means") {
  ShiftConfig cfg;
  cfg.world = "blobs";
  cfg.translation = {0.25, 0.0};
  cfg.n = 20000;
  cfg.seed = 1;
  ShiftedPair pair = make_blobs_shift(cfg);
  REQUIRE(pair.source.rows() == cfg.n);
  REQUIRE(pair.target.rows() == cfg.n);

  auto class_mean = [](const Dataset& ds, std::int32_t label) {
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    int count = 0;
    for (std::int64_t i = 0; i < ds.rows(); ++i) {
      if (ds.labels[static_cast<std::size_t>(i)] == label) {
        sum += ds.features.row(i).transpose();
        ++count;
      }
    }
    return Eigen::Vector2d(sum / count);
  };
  for (std::int32_t label : {0, 1}) {
    Eigen::Vector2d expect = Eigen::Vector2d(label == 0 ? -1.0 : 1.0, 0.0) +
                             Eigen::Vector2d(0.25, 0.0);
    Eigen::Vector2d got = class_mean(pair.target, label);
    CHECK((got - expect).norm() < 0.05);
  }
}

TEST_CASE("blobs transform matches the rotation matrix") {
  Eigen::Vector2d x(0.3, -1.7);
  Eigen::Vector2d rotated = blobs_transform(x, 90.0, Eigen::Vector2d::Zero());
  CHECK(rotated(0) == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(rotated(1) == doctest::Approx(0.3).epsilon(1e-12));
  Eigen::Vector2d shifted = blobs_transform(x, 0.0, Eigen::Vector2d(1.0, 2.0));
  CHECK(shifted(0) == doctest::Approx(1.3).epsilon(1e-12));
  CHECK(shifted(1) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("generators are bit deterministic") {
  ShiftConfig cfg;
  cfg.world = "blobs";
  cfg.n = 100;
  cfg.seed = 12;
  ShiftedPair a = make_world(cfg);
  ShiftedPair b = make_world(cfg);
  CHECK((a.source.features.array() == b.source.features.array()).all());
  CHECK((a.target.features.array() == b.target.features.array()).all());
  CHECK(a.source.labels == b.source.labels);
}

TEST_CASE("moons warp is the identity at alpha zero") {
  Dataset base = sample_moons(200, 0.1, 77);
  for (std::int64_t i = 0; i < base.rows(); ++i) {
    Eigen::Vector2d x = base.features.row(i).transpose();
    Eigen::Vector2d w = warp_point(x, 0.0);
    CHECK(w(0) == x(0));
    CHECK(w(1) == x(1));
  }
  // Same base seed on both sides means the alpha=0 target IS the source.
  Dataset same_seed = sample_moons(200, 0.1, 77);
  CHECK((same_seed.features.array() == base.features.array()).all());
}

TEST_CASE("moons warp closed form and inverse") {
  Eigen::Vector2d unit(1.0, 0.0);
  Eigen::Vector2d w = warp_point(unit, 1.0);
  CHECK(w(0) == doctest::Approx(std::cos(1.0)).epsilon(1e-12));
  CHECK(w(1) == doctest::Approx(std::sin(1.0)).epsilon(1e-12));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double alpha : {0.25, 1.0, 2.0}) {
    for (int i = 0; i < 10000; ++i) {
      Eigen::Vector2d x(gauss(rng), gauss(rng));
      Eigen::Vector2d back = unwarp_point(warp_point(x, alpha), alpha);
      CHECK((back - x).norm() < 1e-9);
    }
  }
}

TEST_CASE("moons labels are preserved under the warp") {
  ShiftConfig cfg;
  cfg.world = "moons";
  cfg.warp_alpha = 1.5;
  cfg.n = 500;
  cfg.seed = 9;
  ShiftedPair pair = make_moons_warp(cfg);
  // Labels follow the generator's alternating pattern on both sides, so the
  // transform never touches them.
  for (std::int64_t i = 0; i < pair.target.rows(); ++i) {
    CHECK(pair.target.labels[static_cast<std::size_t>(i)] ==
          static_cast<std::int32_t>(i % 2));
    CHECK(pair.source.labels[static_cast<std::size_t>(i)] ==
          pair.target.labels[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("gaussian mean shift matches its labeling rule") {
  ShiftConfig cfg;
  cfg.world = "gaussian-mean";
  cfg.mean_shift_mu = {1.0, 0.0};
  cfg.w_star = {1.0, 0.0};
  cfg.noise_sigma = 0.0;
  cfg.n = 100000;
  cfg.seed = 4;
  ShiftedPair pair = make_gaussian_mean_shift(cfg);
  REQUIRE(pair.target.kind == LabelKind::kReal);

  // Noiseless labels equal w_star . x exactly.
  for (std::int64_t i = 0; i < 200; ++i)
    CHECK(pair.source.targets[static_cast<std::size_t>(i)] ==
          doctest::Approx(pair.source.features(i, 0)).epsilon(1e-12));

  Eigen::VectorXd mean = pair.target.features.colwise().mean();
  CHECK(std::abs(mean(0) - 1.0) < 0.02);
  CHECK(std::abs(mean(1)) < 0.02);

  Eigen::VectorXd src_mean = pair.source.features.colwise().mean();
  CHECK(src_mean.norm() < 0.02);
}

TEST_CASE("one dimensional noiseless gaussian world") {
  ShiftConfig cfg;
  cfg.world = "gaussian-mean";
  cfg.mean_shift_mu = {0.0};
  cfg.w_star = {1.0};
  cfg.noise_sigma = 0.0;
  cfg.n = 10;
  ShiftedPair pair = make_gaussian_mean_shift(cfg);
  for (std::int64_t i = 0; i < pair.source.rows(); ++i)
    CHECK(pair.source.targets[static_cast<std::size_t>(i)] ==
          pair.source.features(i, 0));
}

TEST_CASE("unknown world name is a usage error") {
  ShiftConfig cfg;
  cfg.world = "meteors";
  try {
    make_world(cfg);
    FAIL("expected usage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUsage);
  }
}

TEST_CASE("dataset validation catches label range violations") {
  Dataset ds = random_dataset(4, 2, 2, 1);
  ds.labels[2] = 7;
  CHECK_THROWS_AS(validate_dataset(ds), Error);
}
