#include "drl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "drl/errors.hpp"

namespace drl {

void TrainConfig::validate() const {
  if (!(lr_domain > 0.0)) throw ConfigError("train.lr_domain must be > 0");
  if (!(lr_model > 0.0)) throw ConfigError("train.lr_model must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (domain_update_period < 1) throw ConfigError("train.domain_update_period must be >= 1");
}

ModelOptimizer::ModelOptimizer(const RobustClassifier& model, double lr, double momentum)
    : lr_(lr),
      momentum_(momentum),
      v_theta_(Eigen::MatrixXd::Zero(model.theta().rows(), model.theta().cols())),
      v_features_(model.features().zero_gradient()) {}

void ModelOptimizer::step(RobustClassifier& model, const Eigen::MatrixXd& grad_theta,
                          const FeatureGradient& grad_features) {
  v_theta_ = momentum_ * v_theta_ + grad_theta;
  model.theta() -= lr_ * v_theta_;
  if (!grad_features.empty()) {
    v_features_ *= momentum_;
    v_features_ += grad_features;
    model.features().apply(v_features_, -lr_);
  }
}

std::vector<double> batch_ratios(const DomainClassifier& dom, std::span<const Sample> batch,
                                 RatioMode mode) {
  std::vector<double> out(batch.size(), 1.0);
  if (mode == RatioMode::Unit) return out;
  for (std::size_t i = 0; i < batch.size(); ++i) out[i] = domain_forward(dom, batch[i].features).ratio;
  return out;
}

FeatureGradient domain_gradient(const DomainClassifier& dom, const RobustClassifier& model,
                                std::span<const Sample> source_batch,
                                std::span<const Sample> target_batch) {
  std::vector<Sample> joint(source_batch.begin(), source_batch.end());
  joint.insert(joint.end(), target_batch.begin(), target_batch.end());
  FeatureGradient grad = bce_gradient(dom, joint);

  if (target_batch.empty()) return grad;
  const double inv_n = 1.0 / static_cast<double>(target_batch.size());
  Eigen::VectorXd upstream(1);
  for (const auto& s : target_batch) {
    const auto est = domain_forward(dom, s.features);
    if (est.clamped) continue;
    const Eigen::VectorXd phi = model.features().forward(s.features);
    const auto f = predict_from_scores(model.theta() * phi, est.ratio, model.r(), PredictMode::test());
    const auto g = drl_density_gradient(model.theta(), phi, f.probs, est);
    upstream[0] = density_logit_gradient(g, est) * inv_n;
    grad += dom.net().backward(s.features, upstream);
  }
  return grad;
}

BatchCursor::BatchCursor(std::size_t n, std::mt19937_64& rng) : order_(n), rng_(&rng) {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  reshuffle();
}

void BatchCursor::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), *rng_);
  pos_ = 0;
}

std::vector<Sample> BatchCursor::next(std::span<const Sample> data, std::size_t count) {
  std::vector<Sample> out;
  if (order_.empty()) return out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(data[order_[pos_++]]);
  }
  return out;
}

std::vector<Prediction> predict_dataset(const RobustClassifier& model, const DomainClassifier* domain,
                                        const Dataset& data, std::vector<double>* ratios) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  if (ratios) ratios->clear();
  for (const auto& s : data.samples()) {
    const double R = domain ? domain_forward(*domain, s.features).ratio : 1.0;
    out.push_back(predict(model, s.features, R, PredictMode::test()));
    if (ratios) ratios->push_back(R);
  }
  return out;
}

Eigen::MatrixXd to_prob_matrix(std::span<const Prediction> preds) {
  if (preds.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(preds.size()),
                      static_cast<Eigen::Index>(preds.front().probs.size()));
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < preds[i].probs.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = preds[i].probs[j];
  return out;
}

namespace {

[[noreturn]] void diverged(const char* what, int epoch, long batch, double value) {
  std::ostringstream msg;
  msg << "training diverged: " << what << " = " << value << " at epoch " << epoch << ", batch "
      << batch;
  throw DivergenceError(msg.str());
}

void check_model(const RobustClassifier& model, int epoch, long batch) {
  if (!model.theta().allFinite()) diverged("theta", epoch, batch, model.theta().sum());
  for (double p : model.features().parameters())
    if (!std::isfinite(p)) diverged("feature parameter", epoch, batch, p);
}

EpochRecord evaluate_epoch(const Dataset& source, const Dataset& target,
                           const RobustClassifier& model, const DomainClassifier& domain,
                           RatioMode mode, int epoch) {
  EpochRecord rec;
  rec.epoch = epoch;
  const auto target_ratios = batch_ratios(domain, target.samples(), mode);
  const auto constraint = compute_constraint(model, source.samples());
  rec.dual = dual_objective(model, target.samples(), target_ratios, constraint);
  std::vector<Sample> joint(source.samples().begin(), source.samples().end());
  joint.insert(joint.end(), target.samples().begin(), target.samples().end());
  rec.bce = bce_loss(domain, joint);
  std::size_t hits = 0;
  for (const auto& s : source.samples())
    if (predict_from_scores(model.scores(s.features), 1.0, model.r(), PredictMode::test()).argmax() ==
        *s.label)
      ++hits;
  rec.source_accuracy = static_cast<double>(hits) / static_cast<double>(source.size());
  rec.mean_target_ratio =
      std::accumulate(target_ratios.begin(), target_ratios.end(), 0.0) / target_ratios.size();
  if (!std::isfinite(rec.dual)) diverged("dual objective", epoch, -1, rec.dual);
  if (!std::isfinite(rec.bce)) diverged("bce loss", epoch, -1, rec.bce);
  return rec;
}

}  // namespace

void train_loop(const Dataset& source, const Dataset& target, RobustClassifier& model,
                DomainClassifier& domain, const TrainConfig& cfg, RatioMode mode,
                const TrainLoopHooks& hooks, int target_batch) {
  cfg.validate();
  if (source.empty() || target.empty())
    throw ContractViolation("training: source and target must be non-empty");
  if (!source.labeled()) throw ContractViolation("training: source must be labeled");
  if (source.dim() != target.dim() || source.dim() != model.features().in_dim() ||
      source.dim() != domain.net().in_dim())
    throw ConfigError("training: input dimensions disagree");
  if (source.class_count() > model.class_count())
    throw ConfigError("training: source has more classes than the model");
  if (cfg.epochs == 0) return;

  std::mt19937_64 rng(cfg.seed);
  BatchCursor src_cursor(source.size(), rng);
  BatchCursor tgt_cursor(target.size(), rng);
  ModelOptimizer opt(model, cfg.lr_model, cfg.momentum);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto tbatch = target_batch > 0 ? static_cast<std::size_t>(target_batch) : batch;
  const std::size_t per_epoch = std::max((source.size() + batch - 1) / batch,
                                         (target.size() + tbatch - 1) / tbatch);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const auto src = src_cursor.next(source.samples(), batch);
      const auto tgt = tgt_cursor.next(target.samples(), tbatch);

      if (mode == RatioMode::Learned && step % cfg.domain_update_period == 0) {
        const auto g = domain_gradient(domain, model, src, tgt);
        if (!g.all_finite()) diverged("domain gradient", epoch, step, 0.0);
        domain.net().apply(g, -cfg.lr_domain);
      }

      const auto ratios = batch_ratios(domain, src, mode);
      auto g = grad_source(model, src, ratios);
      if (hooks.extra_gradient) hooks.extra_gradient(model, domain, src, ratios, tgt, g);
      opt.step(model, g.theta, g.features);
      check_model(model, epoch, step);
    }
    if (hooks.end_epoch) hooks.end_epoch(epoch, model, domain);
  }
}

TrainResult train_end_to_end(const Dataset& source, const Dataset& target, RobustClassifier model,
                             DomainClassifier domain, const TrainConfig& cfg, RatioMode mode) {
  TrainResult result{std::move(model), std::move(domain), {}};
  TrainLoopHooks hooks;
  hooks.end_epoch = [&](int epoch, const RobustClassifier& m, const DomainClassifier& d) {
    result.history.push_back(evaluate_epoch(source, target, m, d, mode, epoch));
  };
  train_loop(source, target, result.model, result.domain, cfg, mode, hooks);
  return result;
}

ErmResult train_erm(const Dataset& source, RobustClassifier init, const TrainConfig& cfg) {
  cfg.validate();
  if (source.empty()) throw ContractViolation("train_erm: empty source");
  if (!source.labeled()) throw ContractViolation("train_erm: source must be labeled");
  if (source.dim() != init.features().in_dim())
    throw ConfigError("train_erm: input dimension disagrees with the feature map");

  ErmResult result{RobustClassifier(init.theta(), init.features(), 0.0, init.bounds()), {}};
  if (cfg.epochs == 0) return result;

  std::mt19937_64 rng(cfg.seed);
  BatchCursor cursor(source.size(), rng);
  ModelOptimizer opt(result.model, cfg.lr_model, cfg.momentum);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t per_epoch = (source.size() + batch - 1) / batch;
  const std::vector<double> unit(batch, 1.0);
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      const auto src = cursor.next(source.samples(), batch);
      const auto g = grad_source(result.model, src, unit);
      opt.step(result.model, g.theta, g.features);
      check_model(result.model, epoch, step);
    }
    ErmRecord rec;
    rec.epoch = epoch;
    std::size_t hits = 0;
    for (const auto& s : source.samples()) {
      const auto p = predict(result.model, s.features, 1.0, PredictMode::test());
      rec.loss -= std::log(std::max(p.probs[static_cast<std::size_t>(*s.label)], 1e-300));
      if (p.argmax() == *s.label) ++hits;
    }
    rec.loss /= static_cast<double>(source.size());
    rec.accuracy = static_cast<double>(hits) / static_cast<double>(source.size());
    if (!std::isfinite(rec.loss)) diverged("cross-entropy", epoch, -1, rec.loss);
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace drl
