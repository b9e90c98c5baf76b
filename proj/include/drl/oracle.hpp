#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/robust.hpp"

namespace drl {

// Exact expectations over a DiscreteDomainSpec by full enumeration.
struct OracleExpectations {
  double dual_value = 0.0;          // E_t[log Z(x)] - sum_y theta_y . c~_y
  Eigen::MatrixXd grad_theta;       // E_t[R f_y phi] - c~_y
  std::vector<DensityGradient> grad_ratio;  // per point, p_t-weighted
};

// Ratios per point; tau is recovered as (R/(1+R), 1/(1+R)).
OracleExpectations oracle_expectations(const DiscreteDomainSpec& spec,
                                       const RobustClassifier& model,
                                       std::span<const double> ratios);
OracleExpectations oracle_expectations(const DiscreteDomainSpec& spec,
                                       const RobustClassifier& model,
                                       const DomainClassifier& domain);

// p_s / p_t at every point.
std::vector<double> exact_ratios(const DiscreteDomainSpec& spec);

// The source distribution as a weighted batch: one sample per (point, class)
// with weight p_s(x) P(y|x). Zero-weight pairs are dropped.
struct WeightedBatch {
  std::vector<Sample> samples;
  std::vector<double> weights;
  std::vector<std::size_t> point_index;
};
WeightedBatch source_enumeration(const DiscreteDomainSpec& spec);

}  // namespace drl
