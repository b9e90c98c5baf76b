#include "drl/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "drl/calibration.hpp"
#include "drl/errors.hpp"

namespace drl {

void SslConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("ssl.threshold must lie in (0, 1)");
  if (unlabeled_batch < 0) throw ConfigError("ssl.unlabeled_batch must be >= 0");
  if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u)) throw ConfigError("ssl.lambda_u must be >= 0");
  augmentation.validate();
  base.validate();
}

double consistency_loss(std::span<const Prediction> pred_weak,
                        std::span<const Prediction> pred_strong, double threshold) {
  if (pred_weak.size() != pred_strong.size())
    throw ContractViolation("consistency_loss: weak and strong lists differ in length");
  if (pred_weak.empty()) throw ContractViolation("consistency_loss: empty batch");
  double total = 0.0;
  for (std::size_t m = 0; m < pred_weak.size(); ++m) {
    if (!(pred_weak[m].confidence() > threshold)) continue;
    const auto c = static_cast<std::size_t>(pred_weak[m].argmax());
    if (c >= pred_strong[m].probs.size())
      throw ContractViolation("consistency_loss: predictions differ in class count");
    total -= std::log(std::max(pred_strong[m].probs[c], 1e-300));
  }
  return total / static_cast<double>(pred_weak.size());
}

ConsistencyStep consistency_gradient(const RobustClassifier& model, const DomainClassifier* domain,
                                     std::span<const Sample> weak, std::span<const Sample> strong,
                                     double threshold, double scale, SourceGradient& grad) {
  if (weak.size() != strong.size() || weak.empty())
    throw ContractViolation("consistency_gradient: weak and strong batches must match and be non-empty");
  const double r = model.r();
  const double inv_m = 1.0 / static_cast<double>(weak.size());
  const auto& theta = model.theta();
  ConsistencyStep out;
  std::size_t kept = 0;
  for (std::size_t m = 0; m < weak.size(); ++m) {
    const double r_weak = domain ? domain_forward(*domain, weak[m].features).ratio : 1.0;
    const auto pw = predict_from_scores(model.scores(weak[m].features), r_weak, r, PredictMode::test());
    if (!(pw.confidence() > threshold)) continue;
    ++kept;
    const int c = pw.argmax();
    const double r_strong = domain ? domain_forward(*domain, strong[m].features).ratio : 1.0;
    const Eigen::VectorXd phi = model.features().forward(strong[m].features);
    const auto ps = predict_from_scores(theta * phi, r_strong, r, PredictMode::train(c));
    out.loss -= std::log(std::max(ps.probs[static_cast<std::size_t>(c)], 1e-300));

    // d(-log f_c)/dz_y = (f_y - 1[y = c]) R / (1 + r 1[y = c])
    Eigen::VectorXd gz(theta.rows());
    for (Eigen::Index y = 0; y < theta.rows(); ++y) {
      const double hit = y == c ? 1.0 : 0.0;
      gz[y] = (ps.probs[static_cast<std::size_t>(y)] - hit) * r_strong / (1.0 + r * hit);
    }
    gz *= scale * inv_m;
    grad.theta += gz * phi.transpose();
    grad.features += model.features().backward(strong[m].features, theta.transpose() * gz);
  }
  out.loss *= inv_m;
  out.mask_rate = static_cast<double>(kept) * inv_m;
  return out;
}

DrsslResult run_drssl(const Dataset& labeled, const Dataset& unlabeled, const SslConfig& cfg,
                      RobustClassifier model, DomainClassifier domain, RatioMode mode) {
  cfg.validate();
  if (labeled.empty()) throw ContractViolation("run_drssl: empty labeled set");
  std::vector<std::size_t> per_class(static_cast<std::size_t>(std::max(labeled.class_count(), 0)), 0);
  for (int y : labeled.labels()) ++per_class[static_cast<std::size_t>(y)];
  for (std::size_t c = 0; c < per_class.size(); ++c)
    if (per_class[c] == 0)
      throw ConfigError("run_drssl: class " + std::to_string(c) + " has no labeled sample");

  const Dataset pool = unlabeled.without_labels();
  const bool evaluate = unlabeled.labeled();
  const auto eval_labels = evaluate ? unlabeled.labels() : std::vector<int>{};
  std::mt19937_64 aug_rng(cfg.augmentation.seed);

  DrsslResult out{std::move(model), std::move(domain), {}};
  SslEpochRecord acc;
  std::size_t batches = 0;

  TrainLoopHooks hooks;
  hooks.extra_gradient = [&](const RobustClassifier& m, const DomainClassifier& d,
                             std::span<const Sample> src, std::span<const double> ratios,
                             std::span<const Sample> tgt, SourceGradient& g) {
    double sup = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const int y = *src[i].label;
      const auto p = predict_from_scores(m.scores(src[i].features), ratios[i], m.r(), PredictMode::train(y));
      sup -= std::log(std::max(p.probs[static_cast<std::size_t>(y)], 1e-300));
    }
    acc.sup_loss += sup / static_cast<double>(src.size());
    ++batches;
    if (cfg.lambda_u == 0.0) return;

    std::vector<Sample> weak, strong;
    weak.reserve(tgt.size());
    strong.reserve(tgt.size());
    for (const auto& s : tgt) {
      weak.push_back(augment(s, cfg.augmentation, Strength::Weak, aug_rng));
      strong.push_back(augment(s, cfg.augmentation, Strength::Strong, aug_rng));
    }
    const auto step = consistency_gradient(m, mode == RatioMode::Learned ? &d : nullptr, weak, strong,
                                           cfg.threshold, cfg.lambda_u, g);
    acc.unsup_loss += step.loss;
    acc.mask_rate += step.mask_rate;
  };
  hooks.end_epoch = [&](int epoch, const RobustClassifier& m, const DomainClassifier& d) {
    SslEpochRecord rec = acc;
    rec.epoch = epoch;
    const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
    rec.sup_loss /= n;
    rec.unsup_loss /= n;
    rec.mask_rate /= n;
    if (evaluate) {
      const auto probs =
          to_prob_matrix(predict_dataset(m, mode == RatioMode::Learned ? &d : nullptr, pool));
      rec.evaluated = true;
      rec.target_acc = accuracy(probs, eval_labels);
    }
    out.history.push_back(rec);
    acc = SslEpochRecord{};
    batches = 0;
  };

  train_loop(labeled, pool, out.model, out.domain, cfg.base, mode, hooks, cfg.target_batch());
  return out;
}

}  // namespace drl
