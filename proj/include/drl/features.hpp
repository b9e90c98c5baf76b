#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace drl {

enum class FeatureKind { Identity, BiasAugmented, Mlp };
enum class Activation { Tanh, Relu };

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

// Parameter gradient of a FeatureMap; one entry per layer, same shapes.
struct FeatureGradient {
  std::vector<DenseLayer> layers;

  bool empty() const { return layers.empty(); }
  FeatureGradient& operator+=(const FeatureGradient& other);
  FeatureGradient& operator*=(double s);
  // this += s * other
  void add_scaled(const FeatureGradient& other, double s);
  bool all_finite() const;
};

// phi(x; w_r). Mlp applies activation on hidden layers and a linear output.
class FeatureMap {
 public:
  static FeatureMap identity(int dim);
  static FeatureMap bias_augmented(int dim);
  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static FeatureMap mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                        Activation act, std::uint64_t seed);
  static FeatureMap from_layers(std::vector<DenseLayer> layers, Activation act);

  FeatureKind kind() const { return kind_; }
  Activation activation() const { return activation_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  // d(upstream . phi(x)) / d(params); empty for parameter-free kinds.
  FeatureGradient backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const;

  FeatureGradient zero_gradient() const;
  // params += scale * step
  void apply(const FeatureGradient& step, double scale);

  std::size_t parameter_count() const;
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> values);

 private:
  FeatureKind kind_ = FeatureKind::Identity;
  Activation activation_ = Activation::Tanh;
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::vector<DenseLayer> layers_;

  void check_input(const Eigen::VectorXd& x) const;
};

std::vector<double> flatten(const FeatureGradient& g);

void to_json(nlohmann::json& j, const FeatureMap& map);
void from_json(const nlohmann::json& j, FeatureMap& map);

}  // namespace drl
