#include "drl/features.hpp"

#include <cmath>
#include <random>

#include <nlohmann/json.hpp>

#include "drl/errors.hpp"

namespace drl {

FeatureGradient& FeatureGradient::operator+=(const FeatureGradient& other) {
  add_scaled(other, 1.0);
  return *this;
}

FeatureGradient& FeatureGradient::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

void FeatureGradient::add_scaled(const FeatureGradient& other, double s) {
  if (other.layers.empty()) return;
  if (layers.empty()) {
    layers = other.layers;
    *this *= s;
    return;
  }
  if (layers.size() != other.layers.size())
    throw ContractViolation("feature gradient: layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += s * other.layers[i].weight;
    layers[i].bias += s * other.layers[i].bias;
  }
}

bool FeatureGradient::all_finite() const {
  for (const auto& l : layers)
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  return true;
}

FeatureMap FeatureMap::identity(int dim) {
  if (dim < 1) throw ConfigError("feature map: input dimension must be >= 1");
  FeatureMap m;
  m.kind_ = FeatureKind::Identity;
  m.in_dim_ = m.out_dim_ = dim;
  return m;
}

FeatureMap FeatureMap::bias_augmented(int dim) {
  auto m = identity(dim);
  m.kind_ = FeatureKind::BiasAugmented;
  m.out_dim_ = dim + 1;
  return m;
}

FeatureMap FeatureMap::mlp(int in_dim, const std::vector<int>& hidden, int out_dim,
                           Activation act, std::uint64_t seed) {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("feature map: dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  int fan_in = in_dim;
  auto add_layer = [&](int fan_out) {
    if (fan_out < 1) throw ConfigError("feature map: layer widths must be >= 1");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) l.weight(r, c) = u(rng);
    layers.push_back(std::move(l));
    fan_in = fan_out;
  };
  for (int h : hidden) add_layer(h);
  add_layer(out_dim);
  return from_layers(std::move(layers), act);
}

FeatureMap FeatureMap::from_layers(std::vector<DenseLayer> layers, Activation act) {
  if (layers.empty()) throw ConfigError("feature map: an mlp needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.weight.rows() != l.bias.size() || l.weight.rows() < 1 || l.weight.cols() < 1)
      throw ConfigError("feature map: layer " + std::to_string(i) + " has inconsistent shapes");
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows())
      throw ConfigError("feature map: layer " + std::to_string(i) + " does not chain");
    if (!l.weight.allFinite() || !l.bias.allFinite())
      throw ConfigError("feature map: non-finite parameter in layer " + std::to_string(i));
  }
  FeatureMap m;
  m.kind_ = FeatureKind::Mlp;
  m.activation_ = act;
  m.in_dim_ = static_cast<int>(layers.front().weight.cols());
  m.out_dim_ = static_cast<int>(layers.back().weight.rows());
  m.layers_ = std::move(layers);
  return m;
}

void FeatureMap::check_input(const Eigen::VectorXd& x) const {
  if (x.size() != in_dim_)
    throw ConfigError("feature map: input has dimension " + std::to_string(x.size()) +
                      ", expected " + std::to_string(in_dim_));
}

namespace {

double activate(Activation a, double v) { return a == Activation::Tanh ? std::tanh(v) : (v > 0 ? v : 0.0); }

// derivative expressed through the activation output
double activate_grad(Activation a, double out) {
  return a == Activation::Tanh ? 1.0 - out * out : (out > 0 ? 1.0 : 0.0);
}

}  // namespace

Eigen::VectorXd FeatureMap::forward(const Eigen::VectorXd& x) const {
  check_input(x);
  switch (kind_) {
    case FeatureKind::Identity:
      return x;
    case FeatureKind::BiasAugmented: {
      Eigen::VectorXd out(in_dim_ + 1);
      out << x, 1.0;
      return out;
    }
    case FeatureKind::Mlp:
      break;
  }
  Eigen::VectorXd h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::VectorXd a = layers_[i].weight * h + layers_[i].bias;
    if (i + 1 < layers_.size()) a = a.unaryExpr([this](double v) { return activate(activation_, v); });
    h = std::move(a);
  }
  return h;
}

FeatureGradient FeatureMap::backward(const Eigen::VectorXd& x, const Eigen::VectorXd& upstream) const {
  check_input(x);
  if (upstream.size() != out_dim_)
    throw ConfigError("feature map: upstream has length " + std::to_string(upstream.size()) +
                      ", expected " + std::to_string(out_dim_));
  if (kind_ != FeatureKind::Mlp) return {};

  std::vector<Eigen::VectorXd> inputs;  // input of each layer
  inputs.reserve(layers_.size());
  Eigen::VectorXd h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    inputs.push_back(h);
    Eigen::VectorXd a = layers_[i].weight * h + layers_[i].bias;
    if (i + 1 < layers_.size()) a = a.unaryExpr([this](double v) { return activate(activation_, v); });
    h = std::move(a);
  }

  FeatureGradient grad;
  grad.layers.resize(layers_.size());
  Eigen::VectorXd delta = upstream;  // d/d(pre-activation) of the current layer
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grad.layers[i].weight = delta * inputs[i].transpose();
    grad.layers[i].bias = delta;
    if (i == 0) break;
    Eigen::VectorXd back = layers_[i].weight.transpose() * delta;
    const Eigen::VectorXd& out = inputs[i];  // activation output of layer i-1
    for (Eigen::Index k = 0; k < back.size(); ++k) back[k] *= activate_grad(activation_, out[k]);
    delta = std::move(back);
  }
  return grad;
}

FeatureGradient FeatureMap::zero_gradient() const {
  FeatureGradient g;
  for (const auto& l : layers_)
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  return g;
}

void FeatureMap::apply(const FeatureGradient& step, double scale) {
  if (step.empty()) return;
  if (step.layers.size() != layers_.size())
    throw ContractViolation("feature map: gradient does not match the layer structure");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weight += scale * step.layers[i].weight;
    layers_[i].bias += scale * step.layers[i].bias;
  }
}

std::size_t FeatureMap::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::vector<double> flatten(const FeatureGradient& g) {
  std::vector<double> out;
  for (const auto& l : g.layers) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias[r]);
  }
  return out;
}

std::vector<double> FeatureMap::parameters() const {
  FeatureGradient view;
  view.layers = layers_;
  return flatten(view);
}

void FeatureMap::set_parameters(std::span<const double> values) {
  if (values.size() != parameter_count())
    throw ConfigError("feature map: parameter vector has the wrong length");
  std::size_t k = 0;
  for (auto& l : layers_) {
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = values[k++];
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = values[k++];
  }
}

namespace {

const char* kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Identity: return "identity";
    case FeatureKind::BiasAugmented: return "bias_augmented";
    case FeatureKind::Mlp: return "mlp";
  }
  return "identity";
}

}  // namespace

void to_json(nlohmann::json& j, const FeatureMap& map) {
  j = nlohmann::json{{"kind", kind_name(map.kind())}, {"in_dim", map.in_dim()},
                     {"out_dim", map.out_dim()}};
  if (map.kind() != FeatureKind::Mlp) return;
  j["activation"] = map.activation() == Activation::Tanh ? "tanh" : "relu";
  auto layers = nlohmann::json::array();
  for (const auto& l : map.layers()) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", w},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  j["layers"] = std::move(layers);
}

void from_json(const nlohmann::json& j, FeatureMap& map) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const int in_dim = j.at("in_dim").get<int>();
    if (kind == "identity") {
      map = FeatureMap::identity(in_dim);
    } else if (kind == "bias_augmented") {
      map = FeatureMap::bias_augmented(in_dim);
    } else if (kind == "mlp") {
      const auto act_name = j.at("activation").get<std::string>();
      if (act_name != "tanh" && act_name != "relu")
        throw ParseError("feature map: unknown activation '" + act_name + "'");
      std::vector<DenseLayer> layers;
      for (const auto& lj : j.at("layers")) {
        const auto rows = lj.at("rows").get<Eigen::Index>();
        const auto cols = lj.at("cols").get<Eigen::Index>();
        const auto w = lj.at("weight").get<std::vector<double>>();
        const auto b = lj.at("bias").get<std::vector<double>>();
        if (rows < 1 || cols < 1 || static_cast<Eigen::Index>(w.size()) != rows * cols ||
            static_cast<Eigen::Index>(b.size()) != rows)
          throw ParseError("feature map: layer arrays do not match the declared shape");
        DenseLayer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
        for (Eigen::Index r = 0; r < rows; ++r) {
          for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w[r * cols + c];
          l.bias[r] = b[r];
        }
        layers.push_back(std::move(l));
      }
      map = FeatureMap::from_layers(std::move(layers),
                                    act_name == "tanh" ? Activation::Tanh : Activation::Relu);
      if (map.in_dim() != in_dim) throw ParseError("feature map: in_dim disagrees with layers");
    } else {
      throw ParseError("feature map: unknown kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("feature map: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
}

}  // namespace drl
