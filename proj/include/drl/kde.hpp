#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "drl/data.hpp"
#include "drl/domain.hpp"

namespace drl {

// Isotropic Gaussian kernel density estimate.
class KdeModel {
 public:
  KdeModel(std::vector<Eigen::VectorXd> points, double bandwidth);

  const std::vector<Eigen::VectorXd>& points() const { return points_; }
  double bandwidth() const { return bandwidth_; }
  int dim() const { return dim_; }
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Eigen::VectorXd> points_;
  double bandwidth_;
  int dim_ = 0;
};

KdeModel fit_kde(const Dataset& data, double bandwidth);

// log (1/n) sum_i N(x; x_i, h^2 I). Kernel terms are summed in sorted order,
// so the value does not depend on the order of the training points.
double kde_log_density(const KdeModel& model, const Eigen::VectorXd& x);

// clamp(p_s(x) / p_t(x)) from two density estimates.
double plugin_ratio(const KdeModel& source, const KdeModel& target, const Eigen::VectorXd& x,
                    const RatioBounds& bounds = {});

struct PluginRow {
  double bandwidth = 0.0;
  double ll_source = 0.0;       // held-out mean log-likelihood
  double ll_target = 0.0;
  double target_logloss = 0.0;  // downstream robust classifier, true target labels
};

struct PluginSimulationOptions {
  double train_fraction = 0.8;
  int iterations = 300;  // full-batch momentum steps of the downstream model
  double lr = 0.5;
  double momentum = 0.9;
  double r = 0.0;
  RatioBounds bounds{};
};

struct PluginSimulationResult {
  std::vector<PluginRow> rows;
  double erm_target_logloss = 0.0;  // same downstream model with every ratio 1
};

// Seeded 80/20 split of both domains, one KDE pair per bandwidth, plug-in
// ratios fed to a BiasAugmented (frozen-feature) robust classifier.
PluginSimulationResult run_plugin_simulation(const GaussianShiftSpec& spec,
                                             std::span<const double> bandwidths,
                                             const PluginSimulationOptions& options = {});

// Header h,ll_source,ll_target,target_logloss.
void write_plugin_csv(std::ostream& out, std::span<const PluginRow> rows);

}  // namespace drl
