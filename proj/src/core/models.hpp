#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "core/dataset.hpp"

namespace tracekit {

enum class PredictorKind { kLogisticLinear, kMlp, kRidgeLinear };

PredictorKind predictor_kind_from_string(const std::string& name);
std::string predictor_kind_to_string(PredictorKind kind);

// Small differentiable scorer. Logistic/ridge use (w1, b1) as the single
// linear layer; the MLP adds a tanh hidden layer so w1 is hidden x input and
// (w2, b2) map hidden to output. Logits are clipped to [-logit_clip, logit_clip].
struct Predictor {
  PredictorKind kind = PredictorKind::kLogisticLinear;
  double logit_clip = 10.0;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  std::int64_t input_dim() const { return w1.cols(); }
  std::int64_t output_dim() const {
    return kind == PredictorKind::kMlp ? w2.rows() : w1.rows();
  }
};

struct LossSpec {
  enum class Kind { kCrossEntropy, kSquaredError };
  Kind kind = Kind::kCrossEntropy;
  double bound_m = 0.0;    // M, worst-case per-sample loss
  double lipschitz = 0.0;  // L_ell, Lipschitz constant wrt the logit vector
};

// M = B + ln C; the observed worst case on clipped logits is 2B, which tests
// assert separately (M stays configurable).
LossSpec make_cross_entropy(std::int32_t class_count, double logit_clip);
// L_ell = 2B on clipped outputs; M assumes |target| <= B.
LossSpec make_squared_error(double logit_clip);
LossSpec loss_for(const Predictor& p, std::int32_t class_count);

Eigen::VectorXd forward(const Predictor& p, const Eigen::VectorXd& x);
// One row of clipped logits per input row.
Eigen::MatrixXd forward_matrix(const Predictor& p, const Eigen::MatrixXd& inputs);

double loss_value(const LossSpec& spec, const Eigen::VectorXd& logits,
                  std::int32_t label);
double loss_value(const LossSpec& spec, const Eigen::VectorXd& logits,
                  double target);

// d loss / d input at one labeled point. The clip is treated as identity
// inside (-B, B) and kills the coordinate's contribution when saturated.
Eigen::VectorXd input_gradient(const Predictor& p, const LossSpec& spec,
                               const Eigen::VectorXd& x, std::int32_t label);
Eigen::VectorXd input_gradient(const Predictor& p, const LossSpec& spec,
                               const Eigen::VectorXd& x, double target);

// Mean loss over a dataset with matching label kind.
double mean_loss(const Predictor& p, const LossSpec& spec, const Dataset& ds);

std::vector<std::int32_t> argmax_labels(const Predictor& p,
                                        const Eigen::MatrixXd& inputs);

struct TrainConfig {
  double learning_rate = 3e-4;
  std::int64_t epochs = 200;
  double momentum = 0.9;
  double l2_penalty = 0.0;
  std::uint64_t seed = 0;
  std::int64_t hidden_width = 32;
  double logit_clip = 10.0;
};

// Full-batch gradient descent with momentum; deterministic given seed and
// data order. Throws a numeric error naming the epoch if the loss leaves
// the finite range.
Predictor train(PredictorKind kind, const Dataset& ds, const TrainConfig& cfg);

// JSON round trip, bit exact for all weights.
void save_predictor(const Predictor& p, const std::string& path);
Predictor load_predictor(const std::string& path);
std::string predictor_to_json(const Predictor& p);
Predictor predictor_from_json(const std::string& text);

// Closed-form population ridge under a Gaussian mean shift: source inputs
// N(0, I), target N(mu, I), labels w_star . x + noise.
struct RidgeWorld {
  Eigen::VectorXd w_star;
  Eigen::VectorXd mu;
  double lambda = 1.0;
  double sigma2 = 0.0;
};

struct RidgePopulation {
  Eigen::VectorXd w_q;   // argmin of source ridge risk: w* / (1 + lambda)
  Eigen::VectorXd w_qt;  // argmin under the shifted second moment
};

RidgePopulation ridge_population_weights(const RidgeWorld& world);
// Rank-one update in closed form: lambda (mu . w*) / ((1+lambda)(1+lambda+|mu|^2)) mu.
Eigen::VectorXd ridge_delta_w(const RidgeWorld& world);
// True source risk of any weight vector: |w - w*|^2 + sigma^2.
double ridge_source_risk(const RidgeWorld& world, const Eigen::VectorXd& w);

}  // namespace tracekit
