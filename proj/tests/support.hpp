#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "drl/data.hpp"
#include "drl/features.hpp"

namespace testing {

// Hand-rolled generators for property tests.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  Eigen::VectorXd vector(int n, double scale = 1.0) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * normal();
    return v;
  }

  Eigen::MatrixXd matrix(int r, int c, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = scale * normal();
    return m;
  }

  // Probability vector with every entry > 0.
  std::vector<double> simplex(int n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double s = 0.0;
    for (auto& v : p) s += (v = uniform(0.05, 1.0));
    for (auto& v : p) v /= s;
    return p;
  }

  std::vector<drl::Sample> samples(int n, int dim, int classes, drl::Domain domain) {
    std::vector<drl::Sample> out;
    for (int i = 0; i < n; ++i)
      out.push_back({vector(dim), integer(0, classes - 1), domain});
    return out;
  }

  drl::FeatureMap mlp(int in, int hidden, int out, drl::Activation act = drl::Activation::Tanh) {
    return drl::FeatureMap::mlp(in, {hidden}, out, act, std::uniform_int_distribution<std::uint64_t>()(rng_));
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Reference softmax written independently of the library.
inline std::vector<double> softmax(const std::vector<double>& a) {
  const double mx = *std::max_element(a.begin(), a.end());
  std::vector<double> e(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (e[i] = std::exp(a[i] - mx));
  for (auto& v : e) v /= s;
  return e;
}

inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Central difference of f over each coordinate of x.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double step = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

// Max relative error with an absolute floor for near-zero entries.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

inline std::vector<double> flat(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

inline Eigen::MatrixXd unflat(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
  return m;
}

}  // namespace testing
