#include "drl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "drl/errors.hpp"

namespace drl {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<double> parse_double(const std::string& cell) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || first == last) return std::nullopt;
  return value;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

Dataset::Dataset(std::string name, int class_count, std::vector<Sample> samples)
    : name_(std::move(name)), class_count_(class_count), samples_(std::move(samples)) {
  if (class_count_ < 0) throw ConfigError("dataset '" + name_ + "': negative class count");
  if (!samples_.empty()) dim_ = static_cast<int>(samples_.front().features.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (s.features.size() != dim_)
      throw ConfigError("dataset '" + name_ + "': sample " + std::to_string(i) +
                        " has dimension " + std::to_string(s.features.size()) +
                        ", expected " + std::to_string(dim_));
    if (!s.features.allFinite())
      throw ConfigError("dataset '" + name_ + "': sample " + std::to_string(i) +
                        " has a non-finite feature");
    if (s.label && (*s.label < 0 || *s.label >= class_count_))
      throw ConfigError("dataset '" + name_ + "': sample " + std::to_string(i) +
                        " label " + std::to_string(*s.label) + " outside [0, " +
                        std::to_string(class_count_) + ")");
  }
}

bool Dataset::labeled() const {
  return std::all_of(samples_.begin(), samples_.end(),
                     [](const Sample& s) { return s.label.has_value(); });
}

Dataset Dataset::without_labels() const {
  auto copy = samples_;
  for (auto& s : copy) s.label.reset();
  return Dataset(name_, class_count_, std::move(copy));
}

Dataset Dataset::subset(std::span<const std::size_t> indices, std::string name) const {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(samples_.at(i));
  return Dataset(std::move(name), class_count_, std::move(picked));
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) {
    if (!s.label) throw ContractViolation("dataset '" + name_ + "' is not labeled");
    out.push_back(*s.label);
  }
  return out;
}

GaussianShiftSpec GaussianShiftSpec::default_2d() {
  GaussianShiftSpec spec;
  spec.source_mean = Eigen::Vector2d(-1.0, -1.0);
  spec.target_mean = Eigen::Vector2d(1.5, 1.5);
  spec.source_cov = Eigen::Matrix2d::Identity();
  spec.target_cov = Eigen::Matrix2d::Identity();
  spec.boundary_weights = Eigen::Vector2d(1.0, -1.0);
  spec.boundary_bias = 0.0;
  return spec;
}

GaussianShiftSpec GaussianShiftSpec::swapped() const {
  auto out = *this;
  std::swap(out.source_mean, out.target_mean);
  std::swap(out.source_cov, out.target_cov);
  std::swap(out.n_source, out.n_target);
  return out;
}

double GaussianRatio::Gaussian::log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(x - mean);
  return log_norm - 0.5 * z.squaredNorm();
}

namespace {

void check_spec(const GaussianShiftSpec& spec) {
  const auto d = spec.source_mean.size();
  if (d == 0) throw ConfigError("gaussian spec: empty source_mean");
  if (spec.target_mean.size() != d || spec.boundary_weights.size() != d ||
      spec.source_cov.rows() != d || spec.source_cov.cols() != d ||
      spec.target_cov.rows() != d || spec.target_cov.cols() != d)
    throw ConfigError("gaussian spec: inconsistent dimensions");
  if (spec.n_source < 0 || spec.n_target < 0)
    throw ConfigError("gaussian spec: negative sample count");
}

Eigen::MatrixXd cholesky_or_throw(const Eigen::MatrixXd& cov, const char* which) {
  if (!cov.allFinite() || (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError(std::string("gaussian spec: ") + which + " covariance is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw ConfigError(std::string("gaussian spec: ") + which +
                      " covariance is not positive definite");
  return llt.matrixL();
}

}  // namespace

GaussianRatio::GaussianRatio(const GaussianShiftSpec& spec) {
  check_spec(spec);
  const double d = static_cast<double>(spec.source_mean.size());
  auto make = [d](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const char* which) {
    Gaussian g;
    g.mean = mean;
    g.chol = cholesky_or_throw(cov, which);
    g.log_norm = -0.5 * d * std::log(2.0 * std::numbers::pi) -
                 g.chol.diagonal().array().log().sum();
    return g;
  };
  source_ = make(spec.source_mean, spec.source_cov, "source");
  target_ = make(spec.target_mean, spec.target_cov, "target");
}

double GaussianRatio::log_source_density(const Eigen::VectorXd& x) const {
  return source_.log_density(x);
}
double GaussianRatio::log_target_density(const Eigen::VectorXd& x) const {
  return target_.log_density(x);
}
double GaussianRatio::log_ratio(const Eigen::VectorXd& x) const {
  return source_.log_density(x) - target_.log_density(x);
}
double GaussianRatio::operator()(const Eigen::VectorXd& x) const { return std::exp(log_ratio(x)); }

double gaussian_shift_positive_probability(const GaussianShiftSpec& spec,
                                           const Eigen::VectorXd& x) {
  const double a = spec.boundary_weights.dot(x) + spec.boundary_bias;
  return 1.0 / (1.0 + std::exp(-a));
}

GaussianShiftData generate_gaussian_shift(const GaussianShiftSpec& spec) {
  GaussianRatio ratio(spec);
  const auto d = spec.source_mean.size();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto draw = [&](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, int n, Domain dom,
                  const char* which) {
    const Eigen::MatrixXd chol = cholesky_or_throw(cov, which);
    std::vector<Sample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd z(d);
      for (Eigen::Index k = 0; k < d; ++k) z[k] = normal(rng);
      Sample s;
      s.features = mean + chol * z;
      s.label = unif(rng) < gaussian_shift_positive_probability(spec, s.features) ? 1 : 0;
      s.domain = dom;
      out.push_back(std::move(s));
    }
    return out;
  };

  auto src = draw(spec.source_mean, spec.source_cov, spec.n_source, Domain::Source, "source");
  auto tgt = draw(spec.target_mean, spec.target_cov, spec.n_target, Domain::Target, "target");
  return GaussianShiftData{Dataset("source", 2, std::move(src)),
                           Dataset("target", 2, std::move(tgt)), std::move(ratio)};
}

Dataset parse_csv(const std::string& text, const CsvSchema& schema, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t width = 0;
  bool first_line = true;
  int row_no = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (first_line) {
      first_line = false;
      if (!cells.empty() && !parse_double(cells.front())) continue;  // header
    }
    ++row_no;
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw ParseError(name + ": row " + std::to_string(row_no) + " has " +
                       std::to_string(cells.size()) + " columns, expected " +
                       std::to_string(width));
    std::vector<double> values;
    values.reserve(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v))
        throw ParseError(name + ": row " + std::to_string(row_no) + ", column " +
                         std::to_string(c + 1) + ": non-numeric cell '" + cells[c] + "'");
      values.push_back(*v);
    }
    rows.push_back(std::move(values));
  }
  if (schema.has_label && width < 2 && !rows.empty())
    throw ParseError(name + ": labeled rows need at least one feature and a label");

  std::vector<Sample> samples;
  samples.reserve(rows.size());
  int max_label = -1;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t d = schema.has_label ? row.size() - 1 : row.size();
    Sample s;
    s.domain = schema.domain;
    s.features = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(d));
    if (schema.has_label) {
      const double raw = row.back();
      if (raw < 0 || std::floor(raw) != raw)
        throw ParseError(name + ": row " + std::to_string(r + 1) + ", column " +
                         std::to_string(row.size()) + ": label must be a non-negative integer");
      s.label = static_cast<int>(raw);
      max_label = std::max(max_label, *s.label);
    }
    samples.push_back(std::move(s));
  }
  const int classes = schema.class_count.value_or(max_label + 1);
  return Dataset(name, std::max(classes, 0), std::move(samples));
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema, path.filename().string());
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (int k = 0; k < data.dim(); ++k) out << (k ? "," : "") << "x" << k;
  if (data.labeled()) out << ",label";
  out << "\n";
  for (const auto& s : data.samples()) {
    for (int k = 0; k < data.dim(); ++k) out << (k ? "," : "") << s.features[k];
    if (s.label) out << "," << *s.label;
    out << "\n";
  }
}

int DiscreteDomainSpec::dim() const {
  return points.empty() ? 0 : static_cast<int>(points.front().size());
}

DiscreteDomainSpec DiscreteDomainSpec::make(std::vector<Eigen::VectorXd> points,
                                            Eigen::VectorXd p_source, Eigen::VectorXd p_target,
                                            Eigen::MatrixXd cond_label) {
  constexpr double kSimplexTol = 1e-9;
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n == 0 || points.size() > kMaxPoints)
    throw ConfigError("discrete domain: point count must be in [1, 64]");
  for (const auto& p : points)
    if (p.size() != points.front().size() || !p.allFinite())
      throw ConfigError("discrete domain: points must share one finite dimension");
  if (p_source.size() != n || p_target.size() != n || cond_label.rows() != n ||
      cond_label.cols() < 1)
    throw ConfigError("discrete domain: distribution shapes do not match the point count");
  auto on_simplex = [&](const Eigen::VectorXd& p) {
    return p.allFinite() && p.minCoeff() >= -kSimplexTol && std::abs(p.sum() - 1.0) <= kSimplexTol;
  };
  if (!on_simplex(p_source)) throw ConfigError("discrete domain: p_source is off the simplex");
  if (!on_simplex(p_target)) throw ConfigError("discrete domain: p_target is off the simplex");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!on_simplex(cond_label.row(i).transpose()))
      throw ConfigError("discrete domain: cond_label row " + std::to_string(i) +
                        " is off the simplex");
  DiscreteDomainSpec spec;
  spec.points = std::move(points);
  spec.p_source = std::move(p_source);
  spec.p_target = std::move(p_target);
  spec.cond_label = std::move(cond_label);
  return spec;
}

void AugmentationSpec::validate() const {
  if (!(weak_noise_std >= 0.0)) throw ConfigError("ssl.augmentation.weak_noise_std must be >= 0");
  if (!(strong_noise_std >= weak_noise_std))
    throw ConfigError("ssl.augmentation.strong_noise_std must be >= weak_noise_std");
  if (!(strong_mask_fraction >= 0.0 && strong_mask_fraction <= 1.0))
    throw ConfigError("ssl.augmentation.strong_mask_fraction must lie in [0, 1]");
}

Sample augment(const Sample& sample, const AugmentationSpec& spec, Strength strength,
               std::mt19937_64& rng) {
  Sample out = sample;
  const auto d = out.features.size();
  const double std_dev = strength == Strength::Weak ? spec.weak_noise_std : spec.strong_noise_std;
  if (std_dev > 0.0) {
    std::normal_distribution<double> noise(0.0, std_dev);
    for (Eigen::Index k = 0; k < d; ++k) out.features[k] += noise(rng);
  }
  if (strength == Strength::Strong && d > 0) {
    const auto masked = static_cast<Eigen::Index>(std::lround(spec.strong_mask_fraction * d));
    std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // partial Fisher-Yates
    for (Eigen::Index k = 0; k < masked; ++k) {
      std::uniform_int_distribution<Eigen::Index> pick(k, d - 1);
      std::swap(order[k], order[pick(rng)]);
      out.features[order[k]] = 0.0;
    }
  }
  return out;
}

}  // namespace drl
