#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace drl {

// Probabilities are n x C matrices, one row per sample.

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct EceResult {
  double value = 0.0;
  std::vector<ReliabilityBin> bins;
};

struct MisclassificationEntropy {
  double value = 0.0;
  bool all_correct = false;
};

struct CalibrationReport {
  double accuracy = 0.0;
  double brier = 0.0;
  double ece = 0.0;
  double miscls_entropy = 0.0;
  bool all_correct = false;
  std::size_t count = 0;
  int class_count = 0;
  std::vector<ReliabilityBin> bins;
};

double accuracy(const Eigen::MatrixXd& probs, std::span<const int> labels);

// (1/n) sum_i sum_j (p_ij - y_ij)^2
double brier(const Eigen::MatrixXd& probs, std::span<const int> labels);

// Equal-width confidence bins; an interior edge belongs to the upper bin and
// the last bin is closed on the right.
EceResult ece(const Eigen::MatrixXd& probs, std::span<const int> labels, int n_bins = 5);

// Mean Shannon entropy (nats) over misclassified samples.
MisclassificationEntropy miscls_entropy(const Eigen::MatrixXd& probs, std::span<const int> labels);

CalibrationReport calibration_report(const Eigen::MatrixXd& probs, std::span<const int> labels,
                                     int n_bins = 5);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits, double temperature = 1.0);
double mean_nll(const Eigen::MatrixXd& logits, std::span<const int> labels, double temperature);

// Golden-section search for T on log T in [log 0.05, log 20].
double fit_temperature(const Eigen::MatrixXd& logits, std::span<const int> labels);

void to_json(nlohmann::json& j, const ReliabilityBin& b);
void to_json(nlohmann::json& j, const CalibrationReport& r);
void from_json(const nlohmann::json& j, CalibrationReport& r);

}  // namespace drl
