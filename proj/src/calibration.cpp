#include "drl/calibration.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "drl/errors.hpp"

namespace drl {

namespace {

void check_inputs(const Eigen::MatrixXd& probs, std::span<const int> labels, const char* op) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw ContractViolation(std::string(op) + ": probability rows and labels differ in length");
  if (labels.empty()) throw ContractViolation(std::string(op) + ": no samples");
  for (int y : labels)
    if (y < 0 || y >= probs.cols())
      throw ContractViolation(std::string(op) + ": label outside [0, C)");
}

int row_argmax(const Eigen::MatrixXd& probs, Eigen::Index i) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < probs.cols(); ++j)
    if (probs(i, j) > probs(i, best)) best = j;
  return static_cast<int>(best);
}

}  // namespace

double accuracy(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  check_inputs(probs, labels, "accuracy");
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    if (row_argmax(probs, i) == labels[static_cast<std::size_t>(i)]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double brier(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  check_inputs(probs, labels, "brier");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double d = probs(i, j) - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
      total += d * d;
    }
  return total / static_cast<double>(labels.size());
}

EceResult ece(const Eigen::MatrixXd& probs, std::span<const int> labels, int n_bins) {
  check_inputs(probs, labels, "ece");
  if (n_bins < 1) throw ContractViolation("ece: n_bins must be >= 1");
  std::vector<double> conf_sum(n_bins, 0.0), hit_sum(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int pred = row_argmax(probs, i);
    const double conf = probs(i, pred);
    int b = static_cast<int>(std::floor(conf * n_bins));
    b = std::clamp(b, 0, n_bins - 1);
    conf_sum[b] += conf;
    hit_sum[b] += pred == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    ++counts[b];
  }
  EceResult out;
  const double n = static_cast<double>(labels.size());
  for (int b = 0; b < n_bins; ++b) {
    ReliabilityBin bin;
    bin.lower = static_cast<double>(b) / n_bins;
    bin.upper = static_cast<double>(b + 1) / n_bins;
    bin.count = counts[b];
    if (counts[b] > 0) {
      bin.mean_confidence = conf_sum[b] / counts[b];
      bin.accuracy = hit_sum[b] / counts[b];
      out.value += (counts[b] / n) * std::abs(bin.accuracy - bin.mean_confidence);
    }
    out.bins.push_back(bin);
  }
  return out;
}

MisclassificationEntropy miscls_entropy(const Eigen::MatrixXd& probs, std::span<const int> labels) {
  check_inputs(probs, labels, "miscls_entropy");
  double total = 0.0;
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (row_argmax(probs, i) == labels[static_cast<std::size_t>(i)]) continue;
    ++wrong;
    for (Eigen::Index j = 0; j < probs.cols(); ++j) {
      const double p = probs(i, j);
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  if (wrong == 0) return {0.0, true};
  return {total / static_cast<double>(wrong), false};
}

CalibrationReport calibration_report(const Eigen::MatrixXd& probs, std::span<const int> labels,
                                     int n_bins) {
  CalibrationReport rep;
  rep.accuracy = accuracy(probs, labels);
  rep.brier = brier(probs, labels);
  auto e = ece(probs, labels, n_bins);
  rep.ece = e.value;
  rep.bins = std::move(e.bins);
  const auto me = miscls_entropy(probs, labels);
  rep.miscls_entropy = me.value;
  rep.all_correct = me.all_correct;
  rep.count = labels.size();
  rep.class_count = static_cast<int>(probs.cols());
  return rep;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits, double temperature) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd a = logits.row(i) / temperature;
    a = (a.array() - a.maxCoeff()).exp();
    out.row(i) = a / a.sum();
  }
  return out;
}

double mean_nll(const Eigen::MatrixXd& logits, std::span<const int> labels, double temperature) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size() || labels.empty())
    throw ContractViolation("mean_nll: logits and labels differ in length or are empty");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd a = logits.row(i) / temperature;
    const double mx = a.maxCoeff();
    const double log_z = mx + std::log((a.array() - mx).exp().sum());
    total += log_z - a[labels[static_cast<std::size_t>(i)]];
  }
  return total / static_cast<double>(labels.size());
}

double fit_temperature(const Eigen::MatrixXd& logits, std::span<const int> labels) {
  if (labels.empty()) throw ContractViolation("fit_temperature: no samples");
  for (int y : labels)
    if (y < 0 || y >= logits.cols()) throw ContractViolation("fit_temperature: label outside [0, C)");
  auto nll = [&](double log_t) { return mean_nll(logits, labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(0.05), hi = std::log(20.0);
  double a = hi - inv_phi * (hi - lo), b = lo + inv_phi * (hi - lo);
  double fa = nll(a), fb = nll(b);
  while (hi - lo > 1e-4) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - inv_phi * (hi - lo);
      fa = nll(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + inv_phi * (hi - lo);
      fb = nll(b);
    }
  }
  const double t = std::exp(0.5 * (lo + hi));
  // never worse than leaving the logits alone
  return mean_nll(logits, labels, t) <= mean_nll(logits, labels, 1.0) ? t : 1.0;
}

void to_json(nlohmann::json& j, const ReliabilityBin& b) {
  j = nlohmann::json{{"lower", b.lower},
                     {"upper", b.upper},
                     {"count", b.count},
                     {"confidence", b.mean_confidence},
                     {"accuracy", b.accuracy}};
}

void to_json(nlohmann::json& j, const CalibrationReport& r) {
  j = nlohmann::json{{"accuracy", r.accuracy},
                     {"brier", r.brier},
                     {"ece", r.ece},
                     {"miscls_entropy", r.miscls_entropy},
                     {"all_correct", r.all_correct},
                     {"count", r.count},
                     {"class_count", r.class_count},
                     {"bins", r.bins}};
}

void from_json(const nlohmann::json& j, CalibrationReport& r) {
  r.accuracy = j.at("accuracy").get<double>();
  r.brier = j.at("brier").get<double>();
  r.ece = j.at("ece").get<double>();
  r.miscls_entropy = j.at("miscls_entropy").get<double>();
  r.all_correct = j.value("all_correct", false);
  r.count = j.value("count", std::size_t{0});
  r.class_count = j.value("class_count", 0);
  r.bins.clear();
  if (j.contains("bins"))
    for (const auto& bj : j.at("bins"))
      r.bins.push_back({bj.at("lower").get<double>(), bj.at("upper").get<double>(),
                        bj.at("count").get<std::size_t>(), bj.at("confidence").get<double>(),
                        bj.at("accuracy").get<double>()});
}

}  // namespace drl
