#include "drl/oracle.hpp"

#include <cmath>

#include "drl/errors.hpp"

namespace drl {

std::vector<double> exact_ratios(const DiscreteDomainSpec& spec) {
  std::vector<double> out(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (!(spec.p_target[k] > 0.0))
      throw ConfigError("discrete domain: p_target vanishes at point " + std::to_string(i));
    out[i] = spec.p_source[k] / spec.p_target[k];
  }
  return out;
}

OracleExpectations oracle_expectations(const DiscreteDomainSpec& spec,
                                       const RobustClassifier& model,
                                       std::span<const double> ratios) {
  const int classes = spec.class_count();
  if (classes != model.class_count() || spec.dim() != model.features().in_dim())
    throw ConfigError("oracle_expectations: model does not match the discrete domain");
  if (ratios.size() != spec.size())
    throw ConfigError("oracle_expectations: one ratio per point is required");

  const auto& theta = model.theta();
  const double r = model.r();
  OracleExpectations out;
  out.grad_theta = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
  Eigen::MatrixXd c_tilde = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
  out.grad_ratio.resize(spec.size());

  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd phi = model.features().forward(spec.points[i]);
    const Eigen::VectorXd z = theta * phi;
    const double R = ratios[i];
    const double pt = spec.p_target[k];

    // Test-mode logits (R z + r) / (1 + r); log-sum-exp by hand.
    Eigen::VectorXd a = (R * z.array() + r) / (1.0 + r);
    const double mx = a.maxCoeff();
    const Eigen::VectorXd e = (a.array() - mx).exp();
    const double log_z = mx + std::log(e.sum());
    const Eigen::VectorXd f = e / e.sum();

    out.dual_value += pt * log_z;
    // d log Z / d theta_y = f_y R phi / (1 + r)
    out.grad_theta += pt * (R / (1.0 + r)) * f * phi.transpose();
    for (int y = 0; y < classes; ++y)
      c_tilde.row(y) += spec.p_source[k] * spec.cond_label(k, y) * phi.transpose();

    // d log Z / d R = sum_y f_y z_y / (1 + r); R = tau_s / tau_t
    const double dr = pt * f.dot(z) / (1.0 + r);
    const double tau_s = R / (1.0 + R);
    const double tau_t = 1.0 / (1.0 + R);
    out.grad_ratio[i] = {dr / tau_t, -dr * tau_s / (tau_t * tau_t)};
  }
  out.dual_value -= (theta.array() * c_tilde.array()).sum();
  out.grad_theta -= c_tilde;
  return out;
}

OracleExpectations oracle_expectations(const DiscreteDomainSpec& spec,
                                       const RobustClassifier& model,
                                       const DomainClassifier& domain) {
  std::vector<double> ratios;
  ratios.reserve(spec.size());
  for (const auto& x : spec.points) ratios.push_back(domain_forward(domain, x).ratio);
  return oracle_expectations(spec, model, ratios);
}

WeightedBatch source_enumeration(const DiscreteDomainSpec& spec) {
  WeightedBatch out;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    for (int y = 0; y < spec.class_count(); ++y) {
      const double w = spec.p_source[k] * spec.cond_label(k, y);
      if (w <= 0.0) continue;
      out.samples.push_back(Sample{spec.points[i], y, Domain::Source});
      out.weights.push_back(w);
      out.point_index.push_back(i);
    }
  }
  return out;
}

}  // namespace drl
