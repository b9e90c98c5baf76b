#include "drl/robust.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "drl/errors.hpp"

namespace drl {

int Prediction::argmax() const {
  return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double Prediction::confidence() const { return *std::max_element(probs.begin(), probs.end()); }

RobustClassifier::RobustClassifier(Eigen::MatrixXd theta, FeatureMap features, double r,
                                   RatioBounds bounds)
    : theta_(std::move(theta)), features_(std::move(features)), r_(r), bounds_(bounds) {
  if (!(r_ >= 0.0 && r_ <= 1.0)) throw ConfigError("robust classifier: r must lie in [0, 1]");
  if (theta_.rows() < 1) throw ConfigError("robust classifier: need at least one class");
  if (theta_.cols() != features_.out_dim())
    throw ConfigError("robust classifier: theta has " + std::to_string(theta_.cols()) +
                      " columns but the feature map emits " +
                      std::to_string(features_.out_dim()));
  if (!theta_.allFinite()) throw ConfigError("robust classifier: non-finite theta");
  bounds_.validate();
}

RobustClassifier RobustClassifier::zeros(int class_count, FeatureMap features, double r,
                                         RatioBounds bounds) {
  if (class_count < 1) throw ConfigError("robust classifier: need at least one class");
  const int m = features.out_dim();
  return RobustClassifier(Eigen::MatrixXd::Zero(class_count, m), std::move(features), r, bounds);
}

Eigen::VectorXd RobustClassifier::scores(const Eigen::VectorXd& x) const {
  return theta_ * features_.forward(x);
}

Prediction predict_from_scores(const Eigen::VectorXd& scores, double ratio, double r,
                               PredictMode mode) {
  const auto c = scores.size();
  if (!mode.is_test() && (mode.label() < 0 || mode.label() >= c))
    throw ContractViolation("predict: train label outside [0, C)");
  Eigen::VectorXd logits(c);
  for (Eigen::Index y = 0; y < c; ++y) {
    const double ri = r * mode.indicator(static_cast<int>(y));
    logits[y] = (ratio * scores[y] + ri) / (ri + 1.0);
  }
  const double mx = logits.maxCoeff();
  double sum = 0.0;
  Prediction p;
  p.probs.resize(static_cast<std::size_t>(c));
  for (Eigen::Index y = 0; y < c; ++y) {
    p.probs[static_cast<std::size_t>(y)] = std::exp(logits[y] - mx);
    sum += p.probs[static_cast<std::size_t>(y)];
  }
  for (auto& v : p.probs) v /= sum;
  p.log_partition = mx + std::log(sum);
  return p;
}

Prediction predict(const RobustClassifier& clf, const Eigen::VectorXd& x, double ratio,
                   PredictMode mode) {
  if (!clf.bounds().contains(ratio))
    throw ContractViolation("predict: ratio " + std::to_string(ratio) + " outside bounds");
  return predict_from_scores(clf.scores(x), ratio, clf.r(), mode);
}

namespace {

void check_weights(std::span<const double> weights, std::size_t n, const char* op) {
  if (!weights.empty() && weights.size() != n)
    throw ContractViolation(std::string(op) + ": weight count does not match the batch");
}

double weight_at(std::span<const double> weights, std::size_t i, std::size_t n) {
  return weights.empty() ? 1.0 / static_cast<double>(n) : weights[i];
}

}  // namespace

FeatureConstraint compute_constraint(const RobustClassifier& clf, std::span<const Sample> source,
                                     std::span<const double> weights) {
  if (source.empty()) throw ContractViolation("compute_constraint: empty source set");
  check_weights(weights, source.size(), "compute_constraint");
  FeatureConstraint out{Eigen::MatrixXd::Zero(clf.class_count(), clf.features().out_dim())};
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& s = source[i];
    if (!s.label) throw ContractViolation("compute_constraint: unlabeled source sample");
    out.c_tilde.row(*s.label) +=
        weight_at(weights, i, source.size()) * clf.features().forward(s.features).transpose();
  }
  return out;
}

double dual_objective(const RobustClassifier& clf, std::span<const Sample> target,
                      std::span<const double> ratios, const FeatureConstraint& constraint,
                      std::span<const double> weights) {
  if (target.empty()) throw ContractViolation("dual_objective: empty target set");
  if (ratios.size() != target.size())
    throw ContractViolation("dual_objective: one ratio per target input is required");
  check_weights(weights, target.size(), "dual_objective");
  if (constraint.c_tilde.rows() != clf.theta().rows() ||
      constraint.c_tilde.cols() != clf.theta().cols())
    throw ContractViolation("dual_objective: constraint shape does not match theta");
  double expected_log_z = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto p = predict(clf, target[i].features, ratios[i], PredictMode::test());
    expected_log_z += weight_at(weights, i, target.size()) * p.log_partition;
  }
  return expected_log_z - (clf.theta().array() * constraint.c_tilde.array()).sum();
}

SourceGradient grad_source(const RobustClassifier& clf, std::span<const Sample> batch,
                           std::span<const double> ratios, std::span<const double> weights) {
  if (batch.empty()) throw ContractViolation("grad_source: empty batch");
  if (ratios.size() != batch.size())
    throw ContractViolation("grad_source: one ratio per sample is required");
  check_weights(weights, batch.size(), "grad_source");
  const auto& theta = clf.theta();
  SourceGradient out;
  out.theta = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
  out.features = clf.features().zero_gradient();
  out.upstream.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    if (!s.label) throw ContractViolation("grad_source: unlabeled sample in batch");
    const Eigen::VectorXd phi = clf.features().forward(s.features);
    const auto f = predict_from_scores(theta * phi, ratios[i], clf.r(), PredictMode::train(*s.label));
    Eigen::VectorXd residual(theta.rows());
    for (Eigen::Index y = 0; y < residual.size(); ++y)
      residual[y] = f.probs[static_cast<std::size_t>(y)] - (y == *s.label ? 1.0 : 0.0);
    const double w = weight_at(weights, i, batch.size());
    out.theta += w * residual * phi.transpose();
    Eigen::VectorXd u = theta.transpose() * residual;
    out.features.add_scaled(clf.features().backward(s.features, u), w);
    out.upstream.push_back(std::move(u));
  }
  return out;
}

void to_json(nlohmann::json& j, const RobustClassifier& clf) {
  std::vector<double> theta;
  for (Eigen::Index r = 0; r < clf.theta().rows(); ++r)
    for (Eigen::Index c = 0; c < clf.theta().cols(); ++c) theta.push_back(clf.theta()(r, c));
  j = nlohmann::json{{"classes", clf.theta().rows()},
                     {"theta", theta},
                     {"features", clf.features()},
                     {"r", clf.r()},
                     {"ratio_min", clf.bounds().min},
                     {"ratio_max", clf.bounds().max}};
}

void from_json(const nlohmann::json& j, RobustClassifier& clf) {
  try {
    FeatureMap fm = j.at("features").get<FeatureMap>();
    const auto rows = j.at("classes").get<Eigen::Index>();
    const auto values = j.at("theta").get<std::vector<double>>();
    const Eigen::Index cols = fm.out_dim();
    if (rows < 1 || static_cast<Eigen::Index>(values.size()) != rows * cols)
      throw ParseError("robust classifier: theta array does not match classes x out_dim");
    Eigen::MatrixXd theta(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) theta(r, c) = values[static_cast<std::size_t>(r * cols + c)];
    clf = RobustClassifier(std::move(theta), std::move(fm), j.at("r").get<double>(),
                           RatioBounds{j.at("ratio_min").get<double>(), j.at("ratio_max").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("robust classifier: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
}

}  // namespace drl
