#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace tracekit {

enum class LabelKind { kClass, kReal };

// Feature matrix plus labels. Classification keeps class ids in `labels`;
// regression-style data keeps real values in `targets` instead of
// overloading the class-id vector.
struct Dataset {
  Eigen::MatrixXd features;  // n x d, one row per sample
  std::vector<std::int32_t> labels;
  std::vector<double> targets;
  std::int32_t class_count = 0;  // C >= 2 when kind == kClass, else 0
  LabelKind kind = LabelKind::kClass;
  bool normalized = false;

  std::int64_t rows() const { return features.rows(); }
  std::int64_t cols() const { return features.cols(); }
};

// Shape, label-range, and finiteness checks; throws on violation.
void validate_dataset(const Dataset& ds);

enum class FileFormat { kCsv, kJson };
FileFormat parse_format(const std::string& name);

// class_count > 0 validates labels against the declared C, 0 infers C from
// the data, kRealLabels reads the label column as real-valued targets.
inline constexpr std::int32_t kRealLabels = -1;

Dataset load_dataset(const std::string& path, FileFormat format,
                     std::int32_t class_count = 0);
void save_dataset(const Dataset& ds, const std::string& path, FileFormat format);

// Unit l2 norm per row; zero rows pass through unchanged.
Dataset normalize_rows(const Dataset& ds);

struct SplitSpec {
  double validation_fraction = 0.15;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct SplitResult {
  Dataset train;
  Dataset validation;
};

SplitResult split(const Dataset& ds, const SplitSpec& spec);

// One synthetic world: a source sample and a covariate-shifted target
// sample whose labeling rule is unchanged.
struct ShiftConfig {
  std::string world;                  // blobs | moons | gaussian-mean
  std::vector<double> translation;    // blobs target offset, empty = zero
  double rotation_deg = 0.0;          // blobs target rotation about origin
  double warp_alpha = 0.0;            // moons radial twist strength
  std::vector<double> mean_shift_mu;  // gaussian world target mean, fixes d
  double noise_sigma = 0.1;           // moons jitter / gaussian label noise
  std::vector<double> w_star;         // gaussian labeling rule, empty = ones/sqrt(d)
  std::int64_t n = 1000;
  std::uint64_t seed = 0;
};

struct ShiftedPair {
  Dataset source;
  Dataset target;
};

ShiftedPair make_blobs_shift(const ShiftConfig& cfg);
ShiftedPair make_moons_warp(const ShiftConfig& cfg);
ShiftedPair make_gaussian_mean_shift(const ShiftConfig& cfg);
ShiftedPair make_world(const ShiftConfig& cfg);  // dispatch on cfg.world

// Building blocks exposed for direct testing.
Dataset sample_blobs(std::int64_t n, std::uint64_t seed);
Dataset sample_moons(std::int64_t n, double noise_sigma, std::uint64_t seed);
Eigen::Vector2d blobs_transform(const Eigen::Vector2d& x, double rotation_deg,
                                const Eigen::Vector2d& translation);
Eigen::Vector2d warp_point(const Eigen::Vector2d& x, double alpha);
Eigen::Vector2d unwarp_point(const Eigen::Vector2d& x, double alpha);

}  // namespace tracekit
