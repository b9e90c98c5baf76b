#pragma once

#include <span>
#include <vector>

#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/robust.hpp"
#include "drl/trainer.hpp"

namespace drl {

struct SslConfig {
  double threshold = 0.95;
  int unlabeled_batch = 0;  // 0 uses base.batch_size
  double lambda_u = 1.0;
  AugmentationSpec augmentation{};
  TrainConfig base{};

  void validate() const;
  int target_batch() const { return unlabeled_batch > 0 ? unlabeled_batch : base.batch_size; }
};

// (1/M) sum_m 1[max weak_m > tau] * -log strong_m[argmax weak_m]
double consistency_loss(std::span<const Prediction> pred_weak,
                        std::span<const Prediction> pred_strong, double threshold);

struct SslEpochRecord {
  int epoch = 0;
  double sup_loss = 0.0;
  double unsup_loss = 0.0;
  double mask_rate = 0.0;
  bool evaluated = false;  // target labels present
  double target_acc = 0.0;
};

struct DrsslResult {
  RobustClassifier model;
  DomainClassifier domain;
  std::vector<SslEpochRecord> history;
};

// Unsupervised term of one batch: pseudo-labels from Test-mode predictions on
// weak augmentations (no gradient), loss and gradient of -log f_c from
// Train-mode predictions on strong augmentations, added to grad scaled by
// lambda_u. Returns {loss, mask rate}.
struct ConsistencyStep {
  double loss = 0.0;
  double mask_rate = 0.0;
};
ConsistencyStep consistency_gradient(const RobustClassifier& model, const DomainClassifier* domain,
                                     std::span<const Sample> weak, std::span<const Sample> strong,
                                     double threshold, double scale, SourceGradient& grad);

// Training loop of train_end_to_end on the labeled set plus the consistency
// term on augmented target batches. Unit mode with r = 0 is the plain-softmax
// baseline. Target labels, if present, are used for the history only.
DrsslResult run_drssl(const Dataset& labeled, const Dataset& unlabeled, const SslConfig& cfg,
                      RobustClassifier model, DomainClassifier domain,
                      RatioMode mode = RatioMode::Learned);

}  // namespace drl
