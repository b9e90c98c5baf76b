#include "drl/kde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>

#include "drl/errors.hpp"
#include "drl/trainer.hpp"

namespace drl {

KdeModel::KdeModel(std::vector<Eigen::VectorXd> points, double bandwidth)
    : points_(std::move(points)), bandwidth_(bandwidth) {
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_))
    throw ConfigError("kde: bandwidth must be a finite value > 0");
  if (!points_.empty()) dim_ = static_cast<int>(points_.front().size());
  for (const auto& p : points_) {
    if (p.size() != dim_) throw ContractViolation("kde: training points differ in dimension");
    if (!p.allFinite()) throw ContractViolation("kde: non-finite training point");
  }
}

KdeModel fit_kde(const Dataset& data, double bandwidth) {
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(data.size());
  for (const auto& s : data.samples()) pts.push_back(s.features);
  return KdeModel(std::move(pts), bandwidth);
}

double kde_log_density(const KdeModel& model, const Eigen::VectorXd& x) {
  if (model.size() == 0) throw ContractViolation("kde_log_density: empty model");
  if (x.size() != model.dim()) throw ContractViolation("kde_log_density: dimension mismatch");
  const double h2 = model.bandwidth() * model.bandwidth();
  std::vector<double> terms;
  terms.reserve(model.size());
  for (const auto& p : model.points()) terms.push_back(-(x - p).squaredNorm() / (2.0 * h2));
  std::sort(terms.begin(), terms.end());
  const double mx = terms.back();
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - mx);
  const double n = static_cast<double>(model.size());
  return mx + std::log(acc) - std::log(n) -
         0.5 * model.dim() * std::log(2.0 * std::numbers::pi * h2);
}

double plugin_ratio(const KdeModel& source, const KdeModel& target, const Eigen::VectorXd& x,
                    const RatioBounds& bounds) {
  if (source.dim() != target.dim()) throw ContractViolation("plugin_ratio: dimension mismatch");
  const double log_r = kde_log_density(source, x) - kde_log_density(target, x);
  // exp saturates to 0 or inf far from both supports; clamp handles both
  return bounds.clamp(std::exp(std::clamp(log_r, -700.0, 700.0)));
}

namespace {

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
  if (n_train == 0 || n_train == idx.size())
    throw ConfigError("plugin simulation: train_fraction leaves an empty split");
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return {data.subset(train, data.name() + "-train"), data.subset(test, data.name() + "-test")};
}

double mean_log_density(const KdeModel& kde, const Dataset& data) {
  double total = 0.0;
  for (const auto& s : data.samples()) total += kde_log_density(kde, s.features);
  return total / static_cast<double>(data.size());
}

RobustClassifier fit_frozen(const Dataset& source, std::span<const double> ratios,
                            const PluginSimulationOptions& opt) {
  auto model = RobustClassifier::zeros(source.class_count(), FeatureMap::bias_augmented(source.dim()),
                                       opt.r, opt.bounds);
  ModelOptimizer optimizer(model, opt.lr, opt.momentum);
  for (int it = 0; it < opt.iterations; ++it) {
    const auto g = grad_source(model, source.samples(), ratios);
    optimizer.step(model, g.theta, g.features);
    if (!model.theta().allFinite()) throw DivergenceError("plugin simulation: downstream model diverged");
  }
  return model;
}

double target_logloss(const RobustClassifier& model, const Dataset& target,
                      std::span<const double> ratios) {
  double total = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& s = target[i];
    const auto p = predict_from_scores(model.scores(s.features), ratios[i], model.r(),
                                       PredictMode::test());
    total -= std::log(std::max(p.probs[static_cast<std::size_t>(*s.label)], 1e-300));
  }
  return total / static_cast<double>(target.size());
}

}  // namespace

PluginSimulationResult run_plugin_simulation(const GaussianShiftSpec& spec,
                                             std::span<const double> bandwidths,
                                             const PluginSimulationOptions& options) {
  if (bandwidths.empty()) throw ConfigError("plugin simulation: at least one bandwidth is required");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0))
    throw ConfigError("plugin simulation: train_fraction must lie in (0, 1)");
  if (options.iterations < 1) throw ConfigError("plugin simulation: iterations must be >= 1");
  options.bounds.validate();

  const auto data = generate_gaussian_shift(spec);
  std::mt19937_64 rng(spec.seed + 1);
  const auto [src_train, src_test] = split(data.source, options.train_fraction, rng);
  const auto [tgt_train, tgt_test] = split(data.target, options.train_fraction, rng);

  PluginSimulationResult out;
  const std::vector<double> unit_src(src_train.size(), 1.0), unit_tgt(tgt_test.size(), 1.0);
  out.erm_target_logloss = target_logloss(fit_frozen(src_train, unit_src, options), tgt_test, unit_tgt);

  for (double h : bandwidths) {
    const auto kde_s = fit_kde(src_train, h);
    const auto kde_t = fit_kde(tgt_train, h);
    PluginRow row;
    row.bandwidth = h;
    row.ll_source = mean_log_density(kde_s, src_test);
    row.ll_target = mean_log_density(kde_t, tgt_test);

    std::vector<double> src_ratios, tgt_ratios;
    for (const auto& s : src_train.samples())
      src_ratios.push_back(plugin_ratio(kde_s, kde_t, s.features, options.bounds));
    for (const auto& s : tgt_test.samples())
      tgt_ratios.push_back(plugin_ratio(kde_s, kde_t, s.features, options.bounds));
    row.target_logloss = target_logloss(fit_frozen(src_train, src_ratios, options), tgt_test, tgt_ratios);
    out.rows.push_back(row);
  }
  return out;
}

void write_plugin_csv(std::ostream& out, std::span<const PluginRow> rows) {
  out << "h,ll_source,ll_target,target_logloss\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.bandwidth << ',' << r.ll_source << ',' << r.ll_target << ',' << r.target_logloss << '\n';
}

}  // namespace drl
