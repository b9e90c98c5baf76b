#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace drl {

enum class Domain { Source, Target };

struct Sample {
  Eigen::VectorXd features;
  std::optional<int> label;
  Domain domain = Domain::Source;
};

// Immutable collection of samples sharing one dimension. class_count may be 0
// for an unlabeled set whose label space is unknown.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::string name, int class_count, std::vector<Sample> samples);

  const std::string& name() const { return name_; }
  int class_count() const { return class_count_; }
  int dim() const { return dim_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  bool labeled() const;

  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::span<const Sample> samples() const { return samples_; }

  // Copy with every label dropped; trainers receive target data this way.
  Dataset without_labels() const;
  Dataset subset(std::span<const std::size_t> indices, std::string name) const;
  std::vector<int> labels() const;

 private:
  std::string name_;
  int class_count_ = 0;
  int dim_ = 0;
  std::vector<Sample> samples_;
};

// Two Gaussian input distributions sharing the logistic labeling rule
// P(y=1|x) = sigmoid(w.x + b).
struct GaussianShiftSpec {
  Eigen::VectorXd source_mean;
  Eigen::VectorXd target_mean;
  Eigen::MatrixXd source_cov;
  Eigen::MatrixXd target_cov;
  Eigen::VectorXd boundary_weights;
  double boundary_bias = 0.0;
  int n_source = 500;
  int n_target = 500;
  std::uint64_t seed = 0;

  // d=2, means (-1,-1) and (1.5,1.5), unit covariances, w=(1,-1), b=0.
  static GaussianShiftSpec default_2d();
  GaussianShiftSpec swapped() const;
};

// Closed-form density ratio N(x; source) / N(x; target) of a Gaussian shift.
class GaussianRatio {
 public:
  GaussianRatio(const GaussianShiftSpec& spec);

  double log_ratio(const Eigen::VectorXd& x) const;
  double operator()(const Eigen::VectorXd& x) const;
  double log_source_density(const Eigen::VectorXd& x) const;
  double log_target_density(const Eigen::VectorXd& x) const;

 private:
  struct Gaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd chol;  // lower factor
    double log_norm = 0.0;
    double log_density(const Eigen::VectorXd& x) const;
  };
  Gaussian source_;
  Gaussian target_;
};

struct GaussianShiftData {
  Dataset source;
  Dataset target;  // labels kept for evaluation only
  GaussianRatio true_ratio;
};

GaussianShiftData generate_gaussian_shift(const GaussianShiftSpec& spec);

// True P(y=1|x) under the spec's boundary.
double gaussian_shift_positive_probability(const GaussianShiftSpec& spec,
                                           const Eigen::VectorXd& x);

struct CsvSchema {
  bool has_label = true;
  Domain domain = Domain::Source;
  std::optional<int> class_count;  // inferred as max label + 1 when absent
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_csv(const std::string& text, const CsvSchema& schema,
                  const std::string& name = "csv");
void write_csv(const std::filesystem::path& path, const Dataset& data);

// Finite input space with known source/target marginals and conditional
// label distribution; the change-of-measure identities can be enumerated
// exactly on it.
struct DiscreteDomainSpec {
  std::vector<Eigen::VectorXd> points;
  Eigen::VectorXd p_source;
  Eigen::VectorXd p_target;
  Eigen::MatrixXd cond_label;  // |X| x C, row-stochastic

  static constexpr std::size_t kMaxPoints = 64;

  // Throws ConfigError when a distribution leaves the simplex by > 1e-9.
  static DiscreteDomainSpec make(std::vector<Eigen::VectorXd> points,
                                 Eigen::VectorXd p_source,
                                 Eigen::VectorXd p_target,
                                 Eigen::MatrixXd cond_label);

  int class_count() const { return static_cast<int>(cond_label.cols()); }
  int dim() const;
  std::size_t size() const { return points.size(); }
};

struct AugmentationSpec {
  double weak_noise_std = 0.1;
  double strong_noise_std = 0.5;
  double strong_mask_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Strength { Weak, Strong };

// Weak: additive Gaussian noise. Strong: larger noise, then a random subset of
// round(fraction * d) coordinates is zeroed.
Sample augment(const Sample& sample, const AugmentationSpec& spec,
               Strength strength, std::mt19937_64& rng);

}  // namespace drl
