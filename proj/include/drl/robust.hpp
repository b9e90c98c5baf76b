#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/features.hpp"

namespace drl {

// Probability vector on the class simplex plus log Z of the producing logits.
struct Prediction {
  std::vector<double> probs;
  double log_partition = 0.0;

  // Lowest index wins ties.
  int argmax() const;
  double confidence() const;
};

// Train mode carries the known label (one-hot I); Test mode uses the all-ones I.
class PredictMode {
 public:
  static PredictMode test() { return PredictMode(std::nullopt); }
  static PredictMode train(int label) { return PredictMode(label); }

  bool is_test() const { return !label_; }
  int label() const { return *label_; }
  // I_y for class y
  double indicator(int y) const { return !label_ || *label_ == y ? 1.0 : 0.0; }

 private:
  explicit PredictMode(std::optional<int> label) : label_(label) {}
  std::optional<int> label_;
};

class RobustClassifier {
 public:
  RobustClassifier() = default;
  RobustClassifier(Eigen::MatrixXd theta, FeatureMap features, double r, RatioBounds bounds);

  // theta = 0
  static RobustClassifier zeros(int class_count, FeatureMap features, double r, RatioBounds bounds);

  const Eigen::MatrixXd& theta() const { return theta_; }
  Eigen::MatrixXd& theta() { return theta_; }
  const FeatureMap& features() const { return features_; }
  FeatureMap& features() { return features_; }
  double r() const { return r_; }
  const RatioBounds& bounds() const { return bounds_; }
  int class_count() const { return static_cast<int>(theta_.rows()); }

  // theta . phi(x)
  Eigen::VectorXd scores(const Eigen::VectorXd& x) const;

 private:
  Eigen::MatrixXd theta_;
  FeatureMap features_;
  double r_ = 0.0;
  RatioBounds bounds_;
};

// softmax over logit_y = (R z_y + r I_y) / (r I_y + 1).
Prediction predict_from_scores(const Eigen::VectorXd& scores, double ratio, double r,
                               PredictMode mode);
Prediction predict(const RobustClassifier& clf, const Eigen::VectorXd& x, double ratio,
                   PredictMode mode);

// Per-class source feature means c~_y = (1/N) sum_i 1[y_i = y] phi(x_i),
// or weighted sums when weights are given.
struct FeatureConstraint {
  Eigen::MatrixXd c_tilde;  // C x m
};

FeatureConstraint compute_constraint(const RobustClassifier& clf, std::span<const Sample> source,
                                     std::span<const double> weights = {});

// mean_x log Z(x) - sum_y theta_y . c~_y over target inputs (Test-mode logits).
// Weights, when given, replace the uniform 1/N average.
double dual_objective(const RobustClassifier& clf, std::span<const Sample> target,
                      std::span<const double> ratios, const FeatureConstraint& constraint,
                      std::span<const double> weights = {});

struct SourceGradient {
  Eigen::MatrixXd theta;                 // C x m
  std::vector<Eigen::VectorXd> upstream; // per-sample d/d(phi)
  FeatureGradient features;
};

// Source-measure gradient of the dual: (f_y - 1[y_i = y]) phi(x_i), with f
// evaluated in Train mode at the sample's own label. Ratios are constants.
SourceGradient grad_source(const RobustClassifier& clf, std::span<const Sample> batch,
                           std::span<const double> ratios, std::span<const double> weights = {});

void to_json(nlohmann::json& j, const RobustClassifier& clf);
void from_json(const nlohmann::json& j, RobustClassifier& clf);

}  // namespace drl
