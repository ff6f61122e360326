#include "core/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

namespace tracekit {

namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

double parse_double_field(const std::string& field, std::int64_t row,
                          std::int64_t col) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    fail_parse("row " + std::to_string(row) + ": field " + std::to_string(col) +
               " is not a number: '" + field + "'");
  }
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

Dataset finish_dataset(std::vector<double> values, std::vector<double> raw_labels,
                       std::int64_t d, std::int32_t class_count) {
  Dataset ds;
  std::int64_t n = static_cast<std::int64_t>(raw_labels.size());
  ds.features.resize(n, d);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) ds.features(i, j) = values[i * d + j];

  if (class_count == kRealLabels) {
    ds.kind = LabelKind::kReal;
    ds.targets = std::move(raw_labels);
    ds.class_count = 0;
    return ds;
  }

  ds.kind = LabelKind::kClass;
  ds.labels.reserve(raw_labels.size());
  std::int32_t max_label = -1;
  for (std::int64_t i = 0; i < n; ++i) {
    double v = raw_labels[static_cast<std::size_t>(i)];
    if (!(std::floor(v) == v) || v < 0 || v > 1e9) {
      fail_parse("row " + std::to_string(i + 1) +
                 ": class label must be a non-negative integer, got " +
                 format_double(v));
    }
    std::int32_t lab = static_cast<std::int32_t>(v);
    if (class_count > 0 && lab >= class_count) {
      fail_parse("row " + std::to_string(i + 1) + ": label " +
                 std::to_string(lab) + " out of range for class_count " +
                 std::to_string(class_count));
    }
    max_label = std::max(max_label, lab);
    ds.labels.push_back(lab);
  }
  ds.class_count = class_count > 0 ? class_count : max_label + 1;
  return ds;
}

}  // namespace

void validate_dataset(const Dataset& ds) {
  std::int64_t n = ds.rows();
  if (ds.kind == LabelKind::kClass) {
    if (static_cast<std::int64_t>(ds.labels.size()) != n)
      fail_usage("label count does not match feature rows");
    if (ds.class_count < 1) fail_usage("class_count must be positive");
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
      if (ds.labels[i] < 0 || ds.labels[i] >= ds.class_count)
        fail_usage("row " + std::to_string(i + 1) + ": label out of range");
    }
  } else {
    if (static_cast<std::int64_t>(ds.targets.size()) != n)
      fail_usage("target count does not match feature rows");
  }
  if (!ds.features.allFinite()) fail_numeric("dataset contains non-finite features");
}

FileFormat parse_format(const std::string& name) {
  if (name == "csv") return FileFormat::kCsv;
  if (name == "json") return FileFormat::kJson;
  fail_usage("unknown dataset format '" + name + "' (expected csv or json)");
}

Dataset load_dataset(const std::string& path, FileFormat format,
                     std::int32_t class_count) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open dataset file: " + path);

  if (format == FileFormat::kJson) {
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      fail_parse("invalid dataset JSON in " + path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("features") || !doc.contains("labels"))
      fail_parse(path + ": dataset JSON needs 'features' and 'labels'");
    const auto& feats = doc["features"];
    const auto& labs = doc["labels"];
    if (!feats.is_array() || !labs.is_array() || feats.size() != labs.size())
      fail_parse(path + ": features/labels must be arrays of equal length");
    if (feats.empty()) fail_parse(path + ": dataset is empty");
    std::int32_t declared = class_count;
    if (declared == 0 && doc.contains("class_count")) {
      std::int64_t c = doc["class_count"].get<std::int64_t>();
      declared = c == 0 ? kRealLabels : static_cast<std::int32_t>(c);
    }
    std::int64_t d = static_cast<std::int64_t>(feats[0].size());
    if (d == 0) fail_parse(path + ": rows need at least one feature");
    std::vector<double> values;
    values.reserve(feats.size() * static_cast<std::size_t>(d));
    std::vector<double> raw_labels;
    raw_labels.reserve(labs.size());
    for (std::size_t i = 0; i < feats.size(); ++i) {
      const auto& row = feats[i];
      if (!row.is_array() || static_cast<std::int64_t>(row.size()) != d)
        fail_parse("row " + std::to_string(i + 1) + ": expected " +
                   std::to_string(d) + " features");
      for (const auto& v : row) values.push_back(v.get<double>());
      raw_labels.push_back(labs[i].get<double>());
    }
    return finish_dataset(std::move(values), std::move(raw_labels), d, declared);
  }

  std::string line;
  if (!std::getline(in, line)) fail_parse(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::int64_t columns = static_cast<std::int64_t>(split_line(line).size());
  if (columns < 2) fail_parse(path + ": need at least one feature column plus label");
  std::int64_t d = columns - 1;

  std::vector<double> values;
  std::vector<double> raw_labels;
  std::int64_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    auto fields = split_line(line);
    if (static_cast<std::int64_t>(fields.size()) != columns)
      fail_parse("row " + std::to_string(row) + ": expected " +
                 std::to_string(columns) + " fields, got " +
                 std::to_string(fields.size()));
    for (std::int64_t j = 0; j < d; ++j)
      values.push_back(parse_double_field(fields[static_cast<std::size_t>(j)], row, j));
    raw_labels.push_back(
        parse_double_field(fields[static_cast<std::size_t>(d)], row, d));
  }
  if (row == 0) fail_parse(path + ": no data rows");
  return finish_dataset(std::move(values), std::move(raw_labels), d, class_count);
}

void save_dataset(const Dataset& ds, const std::string& path, FileFormat format) {
  validate_dataset(ds);
  std::ofstream out(path);
  if (!out) fail_io("cannot write dataset file: " + path);

  if (format == FileFormat::kJson) {
    json doc;
    doc["class_count"] = ds.kind == LabelKind::kClass ? ds.class_count : 0;
    json feats = json::array();
    json labs = json::array();
    for (std::int64_t i = 0; i < ds.rows(); ++i) {
      json row = json::array();
      for (std::int64_t j = 0; j < ds.cols(); ++j) row.push_back(ds.features(i, j));
      feats.push_back(std::move(row));
      if (ds.kind == LabelKind::kClass)
        labs.push_back(ds.labels[static_cast<std::size_t>(i)]);
      else
        labs.push_back(ds.targets[static_cast<std::size_t>(i)]);
    }
    doc["features"] = std::move(feats);
    doc["labels"] = std::move(labs);
    out << doc.dump() << '\n';
    return;
  }

  for (std::int64_t j = 0; j < ds.cols(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::int64_t i = 0; i < ds.rows(); ++i) {
    for (std::int64_t j = 0; j < ds.cols(); ++j)
      out << format_double(ds.features(i, j)) << ',';
    if (ds.kind == LabelKind::kClass)
      out << ds.labels[static_cast<std::size_t>(i)];
    else
      out << format_double(ds.targets[static_cast<std::size_t>(i)]);
    out << '\n';
  }
  if (!out) fail_io("write failed: " + path);
}

Dataset normalize_rows(const Dataset& ds) {
  Dataset out = ds;
  for (std::int64_t i = 0; i < out.rows(); ++i) {
    double norm = out.features.row(i).norm();
    if (norm > 0.0) out.features.row(i) /= norm;
  }
  out.normalized = true;
  return out;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<std::int64_t>& idx) {
  Dataset out;
  out.class_count = ds.class_count;
  out.kind = ds.kind;
  out.normalized = ds.normalized;
  out.features.resize(static_cast<std::int64_t>(idx.size()), ds.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.features.row(static_cast<std::int64_t>(i)) = ds.features.row(idx[i]);
    if (ds.kind == LabelKind::kClass)
      out.labels.push_back(ds.labels[static_cast<std::size_t>(idx[i])]);
    else
      out.targets.push_back(ds.targets[static_cast<std::size_t>(idx[i])]);
  }
  return out;
}

}  // namespace

SplitResult split(const Dataset& ds, const SplitSpec& spec) {
  validate_dataset(ds);
  if (!(spec.validation_fraction > 0.0 && spec.validation_fraction < 1.0))
    fail_usage("validation_fraction must lie in (0,1)");
  std::int64_t n = ds.rows();
  if (n < 2) fail_usage("split needs at least 2 rows");
  std::mt19937_64 rng(spec.seed);
  std::int64_t total = std::llround(spec.validation_fraction * static_cast<double>(n));

  // Stratification needs class labels; real-labeled data falls back to a
  // plain shuffled split.
  bool stratified = spec.stratified && ds.kind == LabelKind::kClass;

  std::vector<std::int64_t> val_idx;
  std::vector<std::int64_t> train_idx;
  if (!stratified) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::shuffle(order.begin(), order.end(), rng);
    total = std::clamp<std::int64_t>(total, 1, n - 1);
    val_idx.assign(order.begin(), order.begin() + total);
    train_idx.assign(order.begin() + total, order.end());
  } else {
    if (n < 2 * ds.class_count)
      fail_usage("stratified split needs at least 2 samples per class");
    std::vector<std::vector<std::int64_t>> per_class(
        static_cast<std::size_t>(ds.class_count));
    for (std::int64_t i = 0; i < n; ++i)
      per_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])]
          .push_back(i);
    for (const auto& members : per_class) {
      if (members.size() < 2)
        fail_usage("stratified split: a class has fewer than 2 samples");
    }
    for (auto& members : per_class) std::shuffle(members.begin(), members.end(), rng);

    // Largest-remainder apportionment: per-class counts stay within 1 of the
    // exact per-class fraction while summing to round(fraction * n).
    std::vector<std::int64_t> want(per_class.size());
    std::vector<double> remainder(per_class.size());
    std::int64_t base = 0;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      double exact = spec.validation_fraction *
                     static_cast<double>(per_class[c].size());
      want[c] = static_cast<std::int64_t>(std::floor(exact));
      remainder[c] = exact - static_cast<double>(want[c]);
      base += want[c];
    }
    std::vector<std::size_t> order(per_class.size());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return remainder[a] > remainder[b];
    });
    for (std::int64_t extra = total - base; extra > 0; --extra)
      ++want[order[static_cast<std::size_t>(total - base - extra)]];
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      std::int64_t cap = static_cast<std::int64_t>(per_class[c].size()) - 1;
      std::int64_t take = std::clamp<std::int64_t>(want[c], 0, cap);
      val_idx.insert(val_idx.end(), per_class[c].begin(), per_class[c].begin() + take);
      train_idx.insert(train_idx.end(), per_class[c].begin() + take, per_class[c].end());
    }
  }

  SplitResult res;
  res.train = take_rows(ds, train_idx);
  res.validation = take_rows(ds, val_idx);
  return res;
}

namespace {

Eigen::Matrix2d rotation_matrix(double degrees) {
  double rad = degrees * std::numbers::pi / 180.0;
  Eigen::Matrix2d r;
  r << std::cos(rad), -std::sin(rad), std::sin(rad), std::cos(rad);
  return r;
}

Eigen::Vector2d translation_vector(const std::vector<double>& t) {
  if (t.empty()) return Eigen::Vector2d::Zero();
  if (t.size() == 1) return Eigen::Vector2d(t[0], 0.0);
  if (t.size() == 2) return Eigen::Vector2d(t[0], t[1]);
  fail_usage("blobs translation takes at most 2 components");
}

}  // namespace

Dataset sample_blobs(std::int64_t n, std::uint64_t seed) {
  if (n < 2) fail_usage("blobs needs n >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.class_count = 2;
  ds.features.resize(n, 2);
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int32_t label = static_cast<std::int32_t>(i % 2);
    double cx = label == 0 ? -1.0 : 1.0;
    ds.features(i, 0) = cx + gauss(rng);
    ds.features(i, 1) = gauss(rng);
    ds.labels.push_back(label);
  }
  return ds;
}

Eigen::Vector2d blobs_transform(const Eigen::Vector2d& x, double rotation_deg,
                                const Eigen::Vector2d& translation) {
  return rotation_matrix(rotation_deg) * x + translation;
}

ShiftedPair make_blobs_shift(const ShiftConfig& cfg) {
  Eigen::Vector2d t = translation_vector(cfg.translation);
  ShiftedPair pair;
  pair.source = sample_blobs(cfg.n, mix_seed(cfg.seed, 0));
  pair.target = sample_blobs(cfg.n, mix_seed(cfg.seed, 1));
  Eigen::Matrix2d r = rotation_matrix(cfg.rotation_deg);
  for (std::int64_t i = 0; i < pair.target.rows(); ++i) {
    Eigen::Vector2d x = pair.target.features.row(i).transpose();
    pair.target.features.row(i) = (r * x + t).transpose();
  }
  return pair;
}

Dataset sample_moons(std::int64_t n, double noise_sigma, std::uint64_t seed) {
  if (n < 2) fail_usage("moons needs n >= 2");
  if (noise_sigma < 0) fail_usage("noise_sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset ds;
  ds.class_count = 2;
  ds.features.resize(n, 2);
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::int32_t label = static_cast<std::int32_t>(i % 2);
    double t = arc(rng);
    double x, y;
    if (label == 0) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    ds.features(i, 0) = x + noise_sigma * gauss(rng);
    ds.features(i, 1) = y + noise_sigma * gauss(rng);
    ds.labels.push_back(label);
  }
  return ds;
}

Eigen::Vector2d warp_point(const Eigen::Vector2d& x, double alpha) {
  double theta = alpha * x.norm();
  Eigen::Matrix2d r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return r * x;
}

Eigen::Vector2d unwarp_point(const Eigen::Vector2d& x, double alpha) {
  // Rotation preserves the radius, so the twist angle is recoverable.
  double theta = alpha * x.norm();
  Eigen::Matrix2d r;
  r << std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta);
  return r * x;
}

ShiftedPair make_moons_warp(const ShiftConfig& cfg) {
  if (cfg.warp_alpha < 0) fail_usage("warp_alpha must be >= 0");
  ShiftedPair pair;
  pair.source = sample_moons(cfg.n, cfg.noise_sigma, mix_seed(cfg.seed, 0));
  pair.target = sample_moons(cfg.n, cfg.noise_sigma, mix_seed(cfg.seed, 1));
  for (std::int64_t i = 0; i < pair.target.rows(); ++i) {
    Eigen::Vector2d x = pair.target.features.row(i).transpose();
    pair.target.features.row(i) = warp_point(x, cfg.warp_alpha).transpose();
  }
  return pair;
}

ShiftedPair make_gaussian_mean_shift(const ShiftConfig& cfg) {
  std::int64_t d = static_cast<std::int64_t>(cfg.mean_shift_mu.size());
  if (d == 0) fail_usage("gaussian-mean world needs mean_shift_mu to fix the dimension");
  Eigen::VectorXd mu(d);
  for (std::int64_t j = 0; j < d; ++j) mu(j) = cfg.mean_shift_mu[static_cast<std::size_t>(j)];
  Eigen::VectorXd w_star;
  if (cfg.w_star.empty()) {
    w_star = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  } else {
    if (static_cast<std::int64_t>(cfg.w_star.size()) != d)
      fail_usage("w_star dimension must match mean_shift_mu");
    w_star.resize(d);
    for (std::int64_t j = 0; j < d; ++j) w_star(j) = cfg.w_star[static_cast<std::size_t>(j)];
  }

  auto sample = [&](std::uint64_t seed, bool shifted) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Dataset ds;
    ds.kind = LabelKind::kReal;
    ds.class_count = 0;
    ds.features.resize(cfg.n, d);
    ds.targets.reserve(static_cast<std::size_t>(cfg.n));
    for (std::int64_t i = 0; i < cfg.n; ++i) {
      for (std::int64_t j = 0; j < d; ++j) {
        ds.features(i, j) = gauss(rng) + (shifted ? mu(j) : 0.0);
      }
      double y = ds.features.row(i).dot(w_star) + cfg.noise_sigma * gauss(rng);
      ds.targets.push_back(y);
    }
    return ds;
  };

  ShiftedPair pair;
  pair.source = sample(mix_seed(cfg.seed, 0), false);
  pair.target = sample(mix_seed(cfg.seed, 1), true);
  return pair;
}

ShiftedPair make_world(const ShiftConfig& cfg) {
  if (cfg.world == "blobs") return make_blobs_shift(cfg);
  if (cfg.world == "moons" || cfg.world == "moons-warp") return make_moons_warp(cfg);
  if (cfg.world == "gaussian-mean") return make_gaussian_mean_shift(cfg);
  fail_usage("unknown world '" + cfg.world +
             "' (expected blobs, moons, or gaussian-mean)");
}

}  // namespace tracekit
