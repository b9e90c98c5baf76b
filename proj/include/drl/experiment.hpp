#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "drl/data.hpp"
#include "drl/domain.hpp"
#include "drl/features.hpp"
#include "drl/kde.hpp"
#include "drl/selftrain.hpp"
#include "drl/ssl.hpp"
#include "drl/trainer.hpp"

namespace drl {

inline constexpr const char* kToolVersion = "drl 0.1.0";

enum class DataKind { Gaussian, Csv };

struct DataConfig {
  DataKind kind = DataKind::Gaussian;
  GaussianShiftSpec gaussian = GaussianShiftSpec::default_2d();
  std::string source_path;
  std::string target_path;
  bool target_labeled = false;
  std::optional<int> class_count;
  int labeled_per_class = 20;  // drssl: labeled subset drawn from the source
};

struct FeatureConfig {
  FeatureKind kind = FeatureKind::Mlp;
  std::vector<int> hidden{16};
  int out_dim = 16;
  Activation activation = Activation::Tanh;
};

struct ModelConfig {
  FeatureConfig features;
  double r = 1.0;
  RatioBounds bounds{};
  std::vector<int> domain_hidden{};
  Activation domain_activation = Activation::Tanh;
};

struct CalibrateConfig {
  double ts_fraction = 0.5;  // share of labeled target used to fit the temperature
  int bins = 5;
};

struct PluginConfig {
  std::vector<double> bandwidths{0.05, 0.2, 0.5, 1.0};
  PluginSimulationOptions options{};
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  SelfTrainSchedule schedule;
  int epochs_per_round = 0;
  SslConfig ssl;
  PluginConfig plugin;
  CalibrateConfig calibrate;
};

// Seeds derived from the top-level seed by fixed offsets.
struct SeedPlan {
  std::uint64_t data, features, domain, shuffle, augmentation, split;
  static SeedPlan from(std::uint64_t seed);
};

inline const std::vector<std::string> kCommands = {"simulate", "train-drl", "train-erm", "drst",
                                                   "drssl",    "plugin-sim", "calibrate"};

// Parses and validates a config document; errors name the offending field
// path. Unknown fields are rejected.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig parse_config_text(const std::string& text);
nlohmann::json to_json(const ExperimentConfig& cfg);

// per_class samples of every class, drawn with a seeded shuffle; the subset
// keeps source order.
Dataset labeled_subset(const Dataset& source, int per_class, std::uint64_t seed);

struct RunOverrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
};

void apply_overrides(ExperimentConfig& cfg, const RunOverrides& overrides);

// Runs one command and writes metrics.jsonl, report.json, reliability.csv,
// predictions.csv (plus command-specific files) into out_dir. Files appear
// only when the whole run succeeds.
void run_experiment(const std::string& command, const ExperimentConfig& cfg);

// CSV table over report.json files: name,accuracy,brier,ece,miscls_entropy,warning.
std::string compare_reports(std::span<const std::filesystem::path> paths);

}  // namespace drl
