#include "core/models.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"

namespace tracekit {

namespace {

using nlohmann::json;

Eigen::MatrixXd clip_logits(const Eigen::MatrixXd& raw, double bound) {
  return raw.array().min(bound).max(-bound).matrix();
}

// 1 where the clip acts as identity, 0 where the coordinate is saturated.
Eigen::ArrayXXd clip_mask(const Eigen::MatrixXd& raw, double bound) {
  return (raw.array().abs() < bound).cast<double>();
}

struct Activations {
  Eigen::MatrixXd hidden;   // tanh layer output, MLP only
  Eigen::MatrixXd raw;      // pre-clip logits
  Eigen::MatrixXd clipped;  // post-clip logits
};

Activations run_forward(const Predictor& p, const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != p.input_dim())
    fail_usage("input dimension " + std::to_string(inputs.cols()) +
               " does not match predictor dimension " +
               std::to_string(p.input_dim()));
  Activations act;
  if (p.kind == PredictorKind::kMlp) {
    act.hidden =
        ((inputs * p.w1.transpose()).rowwise() + p.b1.transpose()).array().tanh();
    act.raw = (act.hidden * p.w2.transpose()).rowwise() + p.b2.transpose();
  } else {
    act.raw = (inputs * p.w1.transpose()).rowwise() + p.b1.transpose();
  }
  act.clipped = clip_logits(act.raw, p.logit_clip);
  return act;
}

Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& z) {
  Eigen::VectorXd row_max = z.rowwise().maxCoeff();
  Eigen::MatrixXd e = (z.colwise() - row_max).array().exp();
  Eigen::VectorXd sums = e.rowwise().sum();
  return e.array().colwise() / sums.array();
}

double log_sum_exp(const Eigen::VectorXd& z) {
  double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

PredictorKind predictor_kind_from_string(const std::string& name) {
  if (name == "logistic-linear") return PredictorKind::kLogisticLinear;
  if (name == "mlp") return PredictorKind::kMlp;
  if (name == "ridge-linear") return PredictorKind::kRidgeLinear;
  fail_usage("unknown predictor kind '" + name +
             "' (expected logistic-linear, mlp, or ridge-linear)");
}

std::string predictor_kind_to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::kLogisticLinear: return "logistic-linear";
    case PredictorKind::kMlp: return "mlp";
    case PredictorKind::kRidgeLinear: return "ridge-linear";
  }
  fail_usage("bad predictor kind");
}

LossSpec make_cross_entropy(std::int32_t class_count, double logit_clip) {
  if (class_count < 2) fail_usage("cross-entropy needs class_count >= 2");
  LossSpec spec;
  spec.kind = LossSpec::Kind::kCrossEntropy;
  spec.bound_m = logit_clip + std::log(static_cast<double>(class_count));
  spec.lipschitz = std::numbers::sqrt2;
  return spec;
}

LossSpec make_squared_error(double logit_clip) {
  LossSpec spec;
  spec.kind = LossSpec::Kind::kSquaredError;
  spec.bound_m = 4.0 * logit_clip * logit_clip;
  spec.lipschitz = 2.0 * logit_clip;
  return spec;
}

LossSpec loss_for(const Predictor& p, std::int32_t class_count) {
  if (p.kind == PredictorKind::kRidgeLinear) return make_squared_error(p.logit_clip);
  return make_cross_entropy(class_count, p.logit_clip);
}

Eigen::VectorXd forward(const Predictor& p, const Eigen::VectorXd& x) {
  return run_forward(p, x.transpose()).clipped.row(0).transpose();
}

Eigen::MatrixXd forward_matrix(const Predictor& p, const Eigen::MatrixXd& inputs) {
  return run_forward(p, inputs).clipped;
}

double loss_value(const LossSpec& spec, const Eigen::VectorXd& logits,
                  std::int32_t label) {
  if (spec.kind != LossSpec::Kind::kCrossEntropy)
    fail_usage("class label passed to a non-classification loss");
  if (label < 0 || label >= logits.size()) fail_usage("label out of range");
  return log_sum_exp(logits) - logits(label);
}

double loss_value(const LossSpec& spec, const Eigen::VectorXd& logits,
                  double target) {
  if (spec.kind != LossSpec::Kind::kSquaredError)
    fail_usage("real target passed to a non-regression loss");
  if (logits.size() != 1) fail_usage("squared error expects a single output");
  double diff = logits(0) - target;
  return diff * diff;
}

namespace {

// Pulls d loss / d input back through the (optionally hidden) linear stack,
// given d loss / d clipped-logit for a single sample.
Eigen::VectorXd backprop_input(const Predictor& p, const Activations& act,
                               const Eigen::VectorXd& grad_logits) {
  Eigen::VectorXd masked =
      (grad_logits.array() * clip_mask(act.raw, p.logit_clip).row(0).transpose())
          .matrix();
  if (p.kind == PredictorKind::kMlp) {
    Eigen::VectorXd dh = p.w2.transpose() * masked;
    Eigen::VectorXd h = act.hidden.row(0).transpose();
    Eigen::VectorXd da = (dh.array() * (1.0 - h.array().square())).matrix();
    return p.w1.transpose() * da;
  }
  return p.w1.transpose() * masked;
}

}  // namespace

Eigen::VectorXd input_gradient(const Predictor& p, const LossSpec& spec,
                               const Eigen::VectorXd& x, std::int32_t label) {
  if (spec.kind != LossSpec::Kind::kCrossEntropy)
    fail_usage("class label passed to a non-classification loss");
  Activations act = run_forward(p, x.transpose());
  if (label < 0 || label >= act.clipped.cols()) fail_usage("label out of range");
  Eigen::VectorXd g = row_softmax(act.clipped).row(0).transpose();
  g(label) -= 1.0;
  return backprop_input(p, act, g);
}

Eigen::VectorXd input_gradient(const Predictor& p, const LossSpec& spec,
                               const Eigen::VectorXd& x, double target) {
  if (spec.kind != LossSpec::Kind::kSquaredError)
    fail_usage("real target passed to a non-regression loss");
  Activations act = run_forward(p, x.transpose());
  Eigen::VectorXd g(1);
  g(0) = 2.0 * (act.clipped(0, 0) - target);
  return backprop_input(p, act, g);
}

double mean_loss(const Predictor& p, const LossSpec& spec, const Dataset& ds) {
  if (ds.rows() == 0) fail_usage("mean loss over an empty dataset");
  Activations act = run_forward(p, ds.features);
  double total = 0.0;
  if (spec.kind == LossSpec::Kind::kCrossEntropy) {
    if (ds.kind != LabelKind::kClass)
      fail_usage("cross-entropy needs class labels");
    for (std::int64_t i = 0; i < ds.rows(); ++i)
      total += loss_value(spec, act.clipped.row(i).transpose(),
                          ds.labels[static_cast<std::size_t>(i)]);
  } else {
    if (ds.kind != LabelKind::kReal) fail_usage("squared error needs real targets");
    for (std::int64_t i = 0; i < ds.rows(); ++i)
      total += loss_value(spec, act.clipped.row(i).transpose(),
                          ds.targets[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(ds.rows());
}

std::vector<std::int32_t> argmax_labels(const Predictor& p,
                                        const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd z = forward_matrix(p, inputs);
  std::vector<std::int32_t> out(static_cast<std::size_t>(z.rows()));
  for (std::int64_t i = 0; i < z.rows(); ++i) {
    Eigen::Index best = 0;
    z.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(best);
  }
  return out;
}

namespace {

struct Gradients {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

// Mean-loss gradients over the whole batch, sharing the masking convention
// with input_gradient.
Gradients parameter_gradients(const Predictor& p, const LossSpec& spec,
                              const Dataset& ds, const Activations& act,
                              double l2_penalty) {
  std::int64_t n = ds.rows();
  Eigen::MatrixXd g;  // n x C, d loss / d raw logit, already averaged
  if (spec.kind == LossSpec::Kind::kCrossEntropy) {
    g = row_softmax(act.clipped);
    for (std::int64_t i = 0; i < n; ++i)
      g(i, ds.labels[static_cast<std::size_t>(i)]) -= 1.0;
  } else {
    g.resize(n, 1);
    for (std::int64_t i = 0; i < n; ++i)
      g(i, 0) = 2.0 * (act.clipped(i, 0) - ds.targets[static_cast<std::size_t>(i)]);
  }
  g = (g.array() * clip_mask(act.raw, p.logit_clip)).matrix() /
      static_cast<double>(n);

  Gradients grads;
  if (p.kind == PredictorKind::kMlp) {
    grads.w2 = g.transpose() * act.hidden + 2.0 * l2_penalty * p.w2;
    grads.b2 = g.colwise().sum().transpose();
    Eigen::MatrixXd dh = g * p.w2;
    Eigen::MatrixXd da = (dh.array() * (1.0 - act.hidden.array().square())).matrix();
    grads.w1 = da.transpose() * ds.features + 2.0 * l2_penalty * p.w1;
    grads.b1 = da.colwise().sum().transpose();
  } else {
    grads.w1 = g.transpose() * ds.features + 2.0 * l2_penalty * p.w1;
    grads.b1 = g.colwise().sum().transpose();
  }
  return grads;
}

}  // namespace

Predictor train(PredictorKind kind, const Dataset& ds, const TrainConfig& cfg) {
  validate_dataset(ds);
  if (cfg.learning_rate < 0) fail_usage("learning_rate must be >= 0");
  if (cfg.epochs < 1) fail_usage("epochs must be >= 1");
  if (cfg.momentum < 0 || cfg.momentum >= 1) fail_usage("momentum must lie in [0,1)");
  if (cfg.l2_penalty < 0) fail_usage("l2_penalty must be >= 0");

  std::int64_t d = ds.cols();
  Predictor p;
  p.kind = kind;
  p.logit_clip = cfg.logit_clip;

  LossSpec spec;
  if (kind == PredictorKind::kRidgeLinear) {
    if (ds.kind != LabelKind::kReal)
      fail_usage("ridge-linear training needs real-valued targets");
    p.w1 = Eigen::MatrixXd::Zero(1, d);
    p.b1 = Eigen::VectorXd::Zero(1);
    spec = make_squared_error(cfg.logit_clip);
  } else {
    if (ds.kind != LabelKind::kClass)
      fail_usage("classification training needs class labels");
    if (ds.class_count < 2) fail_usage("training needs at least 2 classes");
    std::int64_t c = ds.class_count;
    if (kind == PredictorKind::kLogisticLinear) {
      p.w1 = Eigen::MatrixXd::Zero(c, d);
      p.b1 = Eigen::VectorXd::Zero(c);
    } else {
      if (cfg.hidden_width < 1) fail_usage("hidden_width must be >= 1");
      std::mt19937_64 rng(cfg.seed);
      std::normal_distribution<double> gauss(0.0, 1.0);
      std::int64_t h = cfg.hidden_width;
      p.w1.resize(h, d);
      double s1 = 1.0 / std::sqrt(static_cast<double>(d));
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < d; ++j) p.w1(i, j) = s1 * gauss(rng);
      p.b1 = Eigen::VectorXd::Zero(h);
      p.w2.resize(c, h);
      double s2 = 1.0 / std::sqrt(static_cast<double>(h));
      for (std::int64_t i = 0; i < c; ++i)
        for (std::int64_t j = 0; j < h; ++j) p.w2(i, j) = s2 * gauss(rng);
      p.b2 = Eigen::VectorXd::Zero(c);
    }
    spec = make_cross_entropy(ds.class_count, cfg.logit_clip);
  }

  Gradients vel;
  vel.w1 = Eigen::MatrixXd::Zero(p.w1.rows(), p.w1.cols());
  vel.b1 = Eigen::VectorXd::Zero(p.b1.size());
  if (p.kind == PredictorKind::kMlp) {
    vel.w2 = Eigen::MatrixXd::Zero(p.w2.rows(), p.w2.cols());
    vel.b2 = Eigen::VectorXd::Zero(p.b2.size());
  }

  for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Activations act = run_forward(p, ds.features);
    double loss = mean_loss(p, spec, ds);
    if (!std::isfinite(loss))
      fail_numeric("training diverged at epoch " + std::to_string(epoch));
    Gradients grads = parameter_gradients(p, spec, ds, act, cfg.l2_penalty);
    vel.w1 = cfg.momentum * vel.w1 - cfg.learning_rate * grads.w1;
    vel.b1 = cfg.momentum * vel.b1 - cfg.learning_rate * grads.b1;
    p.w1 += vel.w1;
    p.b1 += vel.b1;
    if (p.kind == PredictorKind::kMlp) {
      vel.w2 = cfg.momentum * vel.w2 - cfg.learning_rate * grads.w2;
      vel.b2 = cfg.momentum * vel.b2 - cfg.learning_rate * grads.b2;
      p.w2 += vel.w2;
      p.b2 += vel.b2;
    }
  }
  return p;
}

namespace {

json layer_to_json(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  json layer;
  layer["shape"] = {w.rows(), w.cols()};
  json weights = json::array();
  for (std::int64_t i = 0; i < w.rows(); ++i)
    for (std::int64_t j = 0; j < w.cols(); ++j) weights.push_back(w(i, j));
  layer["weights"] = std::move(weights);
  json bias = json::array();
  for (std::int64_t i = 0; i < b.size(); ++i) bias.push_back(b(i));
  layer["bias"] = std::move(bias);
  return layer;
}

void layer_from_json(const json& layer, Eigen::MatrixXd& w, Eigen::VectorXd& b) {
  if (!layer.contains("shape") || !layer.contains("weights") || !layer.contains("bias"))
    fail_parse("predictor layer needs shape, weights, and bias");
  std::int64_t rows = layer["shape"][0].get<std::int64_t>();
  std::int64_t cols = layer["shape"][1].get<std::int64_t>();
  const auto& weights = layer["weights"];
  const auto& bias = layer["bias"];
  if (static_cast<std::int64_t>(weights.size()) != rows * cols ||
      static_cast<std::int64_t>(bias.size()) != rows)
    fail_parse("predictor layer shape does not match its arrays");
  w.resize(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j)
      w(i, j) = weights[static_cast<std::size_t>(i * cols + j)].get<double>();
  b.resize(rows);
  for (std::int64_t i = 0; i < rows; ++i)
    b(i) = bias[static_cast<std::size_t>(i)].get<double>();
}

}  // namespace

std::string predictor_to_json(const Predictor& p) {
  json doc;
  doc["kind"] = predictor_kind_to_string(p.kind);
  doc["logit_clip"] = p.logit_clip;
  json layers = json::array();
  layers.push_back(layer_to_json(p.w1, p.b1));
  if (p.kind == PredictorKind::kMlp) layers.push_back(layer_to_json(p.w2, p.b2));
  doc["layers"] = std::move(layers);
  return doc.dump();
}

Predictor predictor_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    fail_parse(std::string("invalid predictor JSON: ") + e.what());
  }
  if (!doc.contains("kind") || !doc.contains("layers") || !doc.contains("logit_clip"))
    fail_parse("predictor JSON needs kind, logit_clip, and layers");
  Predictor p;
  p.kind = predictor_kind_from_string(doc["kind"].get<std::string>());
  p.logit_clip = doc["logit_clip"].get<double>();
  const auto& layers = doc["layers"];
  std::size_t expected = p.kind == PredictorKind::kMlp ? 2 : 1;
  if (layers.size() != expected)
    fail_parse("predictor JSON has wrong layer count for its kind");
  layer_from_json(layers[0], p.w1, p.b1);
  if (p.kind == PredictorKind::kMlp) {
    layer_from_json(layers[1], p.w2, p.b2);
    if (p.w2.cols() != p.w1.rows())
      fail_parse("predictor layer dimensions do not chain");
  }
  return p;
}

void save_predictor(const Predictor& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail_io("cannot write predictor file: " + path);
  out << predictor_to_json(p) << '\n';
  if (!out) fail_io("write failed: " + path);
}

Predictor load_predictor(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open predictor file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return predictor_from_json(buf.str());
}

RidgePopulation ridge_population_weights(const RidgeWorld& world) {
  if (!(world.lambda > 0)) fail_usage("ridge lambda must be > 0");
  if (world.mu.size() != world.w_star.size())
    fail_usage("mu and w_star must share a dimension");
  std::int64_t d = world.w_star.size();
  RidgePopulation pop;
  pop.w_q = world.w_star / (1.0 + world.lambda);
  Eigen::MatrixXd a = (1.0 + world.lambda) * Eigen::MatrixXd::Identity(d, d) +
                      world.mu * world.mu.transpose();
  Eigen::VectorXd rhs = world.w_star + world.mu * world.mu.dot(world.w_star);
  Eigen::VectorXd w_qt = a.ldlt().solve(rhs);
  double residual = (a * w_qt - rhs).norm();
  if (!(residual <= 1e-8 * std::max(1.0, rhs.norm())))
    fail_numeric("ridge population solve is ill conditioned");
  pop.w_qt = std::move(w_qt);
  return pop;
}

Eigen::VectorXd ridge_delta_w(const RidgeWorld& world) {
  if (!(world.lambda > 0)) fail_usage("ridge lambda must be > 0");
  if (world.mu.size() != world.w_star.size())
    fail_usage("mu and w_star must share a dimension");
  double lam = world.lambda;
  double scale = lam * world.mu.dot(world.w_star) /
                 ((1.0 + lam) * (1.0 + lam + world.mu.squaredNorm()));
  return scale * world.mu;
}

double ridge_source_risk(const RidgeWorld& world, const Eigen::VectorXd& w) {
  if (w.size() != world.w_star.size())
    fail_usage("weight dimension does not match w_star");
  return (w - world.w_star).squaredNorm() + world.sigma2;
}

}  // namespace tracekit
