#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/robust.hpp"

namespace drl {

struct TrainConfig {
  double lr_domain = 0.001;    // plain SGD on w_d
  double lr_model = 0.05;     // momentum SGD on theta and w_r
  double momentum = 0.9;
  int batch_size = 32;        // per domain
  int epochs = 30;
  int domain_update_period = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

// Unit pins every ratio to 1 and leaves the domain classifier untouched.
enum class RatioMode { Learned, Unit };

struct EpochRecord {
  int epoch = 0;
  double dual = 0.0;
  double bce = 0.0;
  double source_accuracy = 0.0;
  double mean_target_ratio = 1.0;
};

struct TrainResult {
  RobustClassifier model;
  DomainClassifier domain;
  std::vector<EpochRecord> history;
};

// Momentum SGD over theta and the feature parameters.
class ModelOptimizer {
 public:
  ModelOptimizer(const RobustClassifier& model, double lr, double momentum);
  void step(RobustClassifier& model, const Eigen::MatrixXd& grad_theta,
            const FeatureGradient& grad_features);

 private:
  double lr_;
  double momentum_;
  Eigen::MatrixXd v_theta_;
  FeatureGradient v_features_;
};

// Ratios of a batch under the current domain classifier (or all ones).
std::vector<double> batch_ratios(const DomainClassifier& dom, std::span<const Sample> batch,
                                 RatioMode mode);

// Sum of the BCE gradient over source+target and the chained density gradient
// of the dual over the target samples, both batch means.
FeatureGradient domain_gradient(const DomainClassifier& dom, const RobustClassifier& model,
                                std::span<const Sample> source_batch,
                                std::span<const Sample> target_batch);

// Cyclic minibatch indexer over a shuffled permutation.
class BatchCursor {
 public:
  BatchCursor(std::size_t n, std::mt19937_64& rng);
  std::vector<Sample> next(std::span<const Sample> data, std::size_t count);
  void reshuffle();

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64* rng_;
};

// Extension points of the batch loop. extra_gradient may add to the model
// gradient of a batch before the optimizer step; end_epoch runs after each
// epoch with the current parameters.
struct TrainLoopHooks {
  std::function<void(const RobustClassifier&, const DomainClassifier&,
                     std::span<const Sample> source_batch, std::span<const double> source_ratios,
                     std::span<const Sample> target_batch, SourceGradient& grad)>
      extra_gradient;
  std::function<void(int epoch, const RobustClassifier&, const DomainClassifier&)> end_epoch;
};

// Per batch: every k-th step one SGD step on the domain classifier, then one
// momentum step on theta and w_r from grad_source. Source and target batches
// have batch_size and target_batch (default batch_size) samples.
void train_loop(const Dataset& source, const Dataset& target, RobustClassifier& model,
                DomainClassifier& domain, const TrainConfig& cfg, RatioMode mode,
                const TrainLoopHooks& hooks, int target_batch = 0);

TrainResult train_end_to_end(const Dataset& source, const Dataset& target, RobustClassifier model,
                             DomainClassifier domain, const TrainConfig& cfg,
                             RatioMode mode = RatioMode::Learned);

struct ErmRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct ErmResult {
  RobustClassifier model;  // r = 0, used with R = 1
  std::vector<ErmRecord> history;
};

ErmResult train_erm(const Dataset& source, RobustClassifier init, const TrainConfig& cfg);

// Test-mode predictions with ratios from the domain classifier (or 1).
std::vector<Prediction> predict_dataset(const RobustClassifier& model, const DomainClassifier* domain,
                                        const Dataset& data, std::vector<double>* ratios = nullptr);

Eigen::MatrixXd to_prob_matrix(std::span<const Prediction> preds);

}  // namespace drl
