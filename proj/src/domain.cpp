#include "drl/domain.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "drl/errors.hpp"

namespace drl {

double RatioBounds::clamp(double r) const { return std::clamp(r, min, max); }

void RatioBounds::validate() const {
  if (!(min > 0.0) || !(max >= min) || !std::isfinite(max))
    throw ConfigError("ratio bounds must satisfy 0 < min <= max < inf");
}

DomainClassifier::DomainClassifier(FeatureMap net, RatioBounds bounds)
    : net_(std::move(net)), bounds_(bounds) {
  if (net_.out_dim() != 1) throw ConfigError("domain classifier: network must emit one logit");
  bounds_.validate();
}

DomainClassifier DomainClassifier::make(int in_dim, const std::vector<int>& hidden,
                                        Activation act, RatioBounds bounds, std::uint64_t seed) {
  auto net = FeatureMap::mlp(in_dim, hidden, 1, act, seed);
  // zero output layer: training starts from ratio 1 everywhere
  auto layers = net.layers();
  layers.back().weight.setZero();
  layers.back().bias.setZero();
  return DomainClassifier(FeatureMap::from_layers(std::move(layers), act), bounds);
}

double DomainClassifier::logit(const Eigen::VectorXd& x) const { return net_.forward(x)[0]; }

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

RatioEstimate estimate_from_logit(double z, const RatioBounds& bounds) {
  RatioEstimate est;
  est.tau_s = sigmoid(z);
  est.tau_t = 1.0 - est.tau_s;
  const double raw = est.tau_t > 0.0 ? est.tau_s / est.tau_t
                                     : std::numeric_limits<double>::infinity();
  est.ratio = bounds.clamp(raw);
  est.clamped = raw < bounds.min || raw > bounds.max;
  return est;
}

RatioEstimate domain_forward(const DomainClassifier& clf, const Eigen::VectorXd& x) {
  return estimate_from_logit(clf.logit(x), clf.bounds());
}

double bce_loss(const DomainClassifier& clf, std::span<const Sample> batch) {
  if (batch.empty()) throw ContractViolation("bce_loss: empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    const double z = clf.logit(s.features);
    // -log sigmoid(z) for Source, -log(1 - sigmoid(z)) for Target, via softplus
    const double signed_z = s.domain == Domain::Source ? -z : z;
    total += signed_z > 0 ? signed_z + std::log1p(std::exp(-signed_z))
                          : std::log1p(std::exp(signed_z));
  }
  return total / static_cast<double>(batch.size());
}

FeatureGradient bce_gradient(const DomainClassifier& clf, std::span<const Sample> batch) {
  if (batch.empty()) throw ContractViolation("bce_gradient: empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  FeatureGradient total = clf.net().zero_gradient();
  Eigen::VectorXd upstream(1);
  for (const auto& s : batch) {
    const double z = clf.logit(s.features);
    upstream[0] = (sigmoid(z) - (s.domain == Domain::Source ? 1.0 : 0.0)) * inv_n;
    total += clf.net().backward(s.features, upstream);
  }
  return total;
}

DensityGradient drl_density_gradient(const Eigen::MatrixXd& theta, const Eigen::VectorXd& phi_x,
                                     std::span<const double> f_x, const RatioEstimate& est) {
  if (theta.cols() != phi_x.size() || static_cast<std::size_t>(theta.rows()) != f_x.size())
    throw ConfigError("drl_density_gradient: dimension mismatch");
  if (est.clamped) return {};
  if (est.tau_t < 1e-8) throw NumericError("drl_density_gradient: tau_t below 1e-8");
  const Eigen::VectorXd scores = theta * phi_x;
  double s = 0.0;
  for (Eigen::Index y = 0; y < scores.size(); ++y) s += f_x[static_cast<std::size_t>(y)] * scores[y];
  return {s / est.tau_t, -(est.tau_s / (est.tau_t * est.tau_t)) * s};
}

double density_logit_gradient(const DensityGradient& g, const RatioEstimate& est) {
  return (g.d_tau_s - g.d_tau_t) * est.tau_s * est.tau_t;
}

void to_json(nlohmann::json& j, const DomainClassifier& clf) {
  j = nlohmann::json{{"net", clf.net()},
                     {"ratio_min", clf.bounds().min},
                     {"ratio_max", clf.bounds().max}};
}

void from_json(const nlohmann::json& j, DomainClassifier& clf) {
  try {
    FeatureMap net = j.at("net").get<FeatureMap>();
    RatioBounds b{j.at("ratio_min").get<double>(), j.at("ratio_max").get<double>()};
    clf = DomainClassifier(std::move(net), b);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("domain classifier: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
}

}  // namespace drl
