#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "drl/data.hpp"
#include "drl/features.hpp"

namespace drl {

struct RatioBounds {
  double min = 1e-3;
  double max = 1e3;

  bool contains(double r) const { return r >= min && r <= max; }
  double clamp(double r) const;
  void validate() const;
};

// Domain posterior at one input, and the (clamped) density ratio tau_s/tau_t.
// The source/target prior ratio is taken to be one.
struct RatioEstimate {
  double tau_s = 0.5;
  double tau_t = 0.5;
  double ratio = 1.0;
  bool clamped = false;
};

// Binary source-vs-target classifier on raw inputs. The network emits one
// logit z with tau_s = sigmoid(z).
class DomainClassifier {
 public:
  DomainClassifier() = default;
  DomainClassifier(FeatureMap net, RatioBounds bounds);

  // Logistic regression when hidden is empty. The output layer starts at zero.
  static DomainClassifier make(int in_dim, const std::vector<int>& hidden, Activation act,
                               RatioBounds bounds, std::uint64_t seed);

  const FeatureMap& net() const { return net_; }
  FeatureMap& net() { return net_; }
  const RatioBounds& bounds() const { return bounds_; }

  double logit(const Eigen::VectorXd& x) const;

 private:
  FeatureMap net_;
  RatioBounds bounds_;
};

RatioEstimate estimate_from_logit(double z, const RatioBounds& bounds);
RatioEstimate domain_forward(const DomainClassifier& clf, const Eigen::VectorXd& x);

// Mean binary cross-entropy over the batch with Source as the positive class.
double bce_loss(const DomainClassifier& clf, std::span<const Sample> batch);
FeatureGradient bce_gradient(const DomainClassifier& clf, std::span<const Sample> batch);

struct DensityGradient {
  double d_tau_s = 0.0;
  double d_tau_t = 0.0;
};

// Gradient of the per-point dual term log Z with respect to the two domain
// probabilities, where s(x) = sum_y f_y (theta_y . phi). Zero when the ratio
// is clamped.
DensityGradient drl_density_gradient(const Eigen::MatrixXd& theta, const Eigen::VectorXd& phi_x,
                                     std::span<const double> f_x, const RatioEstimate& est);

// Chains a density gradient into the classifier logit: (d_s - d_t) * sigmoid'(z).
double density_logit_gradient(const DensityGradient& g, const RatioEstimate& est);

void to_json(nlohmann::json& j, const DomainClassifier& clf);
void from_json(const nlohmann::json& j, DomainClassifier& clf);

}  // namespace drl
