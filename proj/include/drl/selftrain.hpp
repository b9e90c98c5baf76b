#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "drl/calibration.hpp"
#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/robust.hpp"
#include "drl/trainer.hpp"

namespace drl {

struct SelfTrainSchedule {
  double p0 = 0.065;
  double dp = 0.0085;
  double pmax = 0.165;
  int rounds = 5;

  void validate() const;
  // min(p0 + t dp, pmax)
  double portion(int round) const;
};

struct PseudoLabel {
  std::size_t target_index = 0;
  int label = 0;
  double confidence = 0.0;
};

// Class-balanced selection: for every class c the ceil(portion * N_c) most
// confident targets predicted as c, N_c the number of targets predicted as c.
// Ties go to the lower index. Output is ordered by target index.
std::vector<PseudoLabel> select_pseudo(std::span<const Prediction> preds, double portion);

struct RoundRecord {
  int round = 0;
  double portion = 0.0;
  std::size_t n_pseudo = 0;
  // Target metrics; only filled when the target set carries labels.
  bool evaluated = false;
  double accuracy = 0.0;
  double brier = 0.0;
  double ece = 0.0;
};

struct DrstResult {
  TrainResult final;
  std::vector<RoundRecord> rounds;
  std::vector<PseudoLabel> selection;  // pseudo-labels used by the last round
};

// One end-to-end DRL pass on the source, then per round: Test-mode
// predictions on every target, select_pseudo, retrain (warm start) on the
// source plus the fresh pseudo-labeled targets. Target labels, if present, are
// used for the history only. epochs_per_round <= 0 reuses cfg.epochs.
DrstResult run_drst(const Dataset& source, const Dataset& target,
                    const SelfTrainSchedule& schedule, const TrainConfig& cfg,
                    RobustClassifier model, DomainClassifier domain,
                    RatioMode mode = RatioMode::Learned, int epochs_per_round = 0);

}  // namespace drl
