#include <doctest.h>

#include <nlohmann/json.hpp>

#include "drl/domain.hpp"
#include "drl/errors.hpp"
#include "support.hpp"

using namespace drl;

namespace {

DomainClassifier logistic(const Eigen::VectorXd& w, double b, RatioBounds bounds = {}) {
  return DomainClassifier(FeatureMap::from_layers({{w.transpose(), Eigen::VectorXd::Constant(1, b)}},
                                                  Activation::Tanh),
                          bounds);
}

// log sum_y exp(R z_y) with R = tau_s / tau_t.
double log_z(const Eigen::VectorXd& z, double tau_s, double tau_t) {
  const double R = tau_s / tau_t;
  std::vector<double> a;
  for (Eigen::Index i = 0; i < z.size(); ++i) a.push_back(R * z[i]);
  const double mx = *std::max_element(a.begin(), a.end());
  double s = 0.0;
  for (double v : a) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

TEST_CASE("domain forward examples") {
  const auto zero = logistic(Eigen::Vector2d::Zero(), 0.0);
  const auto e0 = domain_forward(zero, Eigen::Vector2d(3, -1));
  CHECK(e0.tau_s == 0.5);
  CHECK(e0.tau_t == 0.5);
  CHECK(e0.ratio == 1.0);

  const auto e1 = estimate_from_logit(std::log(3.0), {});
  CHECK(e1.tau_s == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(e1.tau_t == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(e1.ratio == doctest::Approx(3.0).epsilon(1e-12));
  CHECK_FALSE(e1.clamped);

  const auto e2 = estimate_from_logit(50.0, {1e-3, 10.0});
  CHECK(e2.ratio == 10.0);
  CHECK(e2.clamped);
  const auto e3 = estimate_from_logit(-800.0, {});
  CHECK(e3.ratio == 1e-3);
  CHECK(e3.clamped);
}

TEST_CASE("posteriors sum to one") {
  testing::Gen gen(2);
  for (int i = 0; i < 200; ++i) {
    const auto e = estimate_from_logit(gen.uniform(-40, 40), {});
    CHECK(e.tau_s + e.tau_t == 1.0);
    CHECK(RatioBounds{}.contains(e.ratio));
  }
}

TEST_CASE("bce per-sample logit gradient") {
  const auto clf = logistic(Eigen::Vector2d::Zero(), 0.0);
  const Eigen::Vector2d x(0.7, -1.1);
  // the bias gradient equals the logit gradient
  const std::vector<Sample> src{{x, std::nullopt, Domain::Source}};
  const std::vector<Sample> tgt{{x, std::nullopt, Domain::Target}};
  CHECK(bce_gradient(clf, src).layers[0].bias[0] == doctest::Approx(-0.5));
  CHECK(bce_gradient(clf, tgt).layers[0].bias[0] == doctest::Approx(0.5));
  CHECK(bce_loss(clf, src) == doctest::Approx(std::log(2.0)));
  CHECK_THROWS_AS(bce_loss(clf, std::vector<Sample>{}), ContractViolation);
}

TEST_CASE("bce gradient matches finite differences") {
  testing::Gen gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = gen.integer(1, 5);
    auto clf = trial % 2 ? DomainClassifier::make(d, {}, Activation::Tanh, {}, trial)
                         : DomainClassifier::make(d, {4}, Activation::Tanh, {}, trial);
    clf.net().set_parameters(testing::flat(gen.vector(static_cast<int>(clf.net().parameter_count()))));
    auto batch = gen.samples(6, d, 1, Domain::Source);
    for (int i = 3; i < 6; ++i) batch[i].domain = Domain::Target;
    DomainClassifier probe = clf;
    const auto numeric = testing::central_difference(
        [&](const std::vector<double>& p) {
          probe.net().set_parameters(p);
          return bce_loss(probe, batch);
        },
        clf.net().parameters());
    CHECK(testing::relative_error(flatten(bce_gradient(clf, batch)), numeric, 1e-4) < 1e-4);
  }
}

TEST_CASE("bce gradient vanishes for a separating classifier") {
  const std::vector<Sample> batch{{Eigen::VectorXd::Constant(1, 1.0), std::nullopt, Domain::Source},
                                  {Eigen::VectorXd::Constant(1, -1.0), std::nullopt, Domain::Target}};
  double previous = std::numeric_limits<double>::infinity();
  for (double scale : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    const auto g = bce_gradient(logistic(Eigen::VectorXd::Constant(1, scale), 0.0), batch);
    const double norm = std::abs(g.layers[0].weight(0, 0)) + std::abs(g.layers[0].bias[0]);
    CHECK(norm < previous);
    previous = norm;
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("density gradient examples") {
  const auto half = estimate_from_logit(0.0, {});
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(2, 2);
  const Eigen::Vector2d phi(0.4, -0.3);
  const std::vector<double> f{0.6, 0.4};
  const auto g0 = drl_density_gradient(theta, phi, f, half);
  CHECK(g0.d_tau_s == 0.0);
  CHECK(g0.d_tau_t == 0.0);

  // s(x) = 0.5 * 1 + 0.5 * 1 = 1
  theta << 1, 0, 0, 1;
  const auto g1 = drl_density_gradient(theta, Eigen::Vector2d(1, 1), std::vector<double>{0.5, 0.5}, half);
  CHECK(g1.d_tau_s == doctest::Approx(2.0));
  CHECK(g1.d_tau_t == doctest::Approx(-2.0));

  RatioEstimate tiny{1.0 - 1e-9, 1e-9, 5.0, false};
  CHECK_THROWS_AS(drl_density_gradient(theta, phi, f, tiny), NumericError);
  CHECK_THROWS_AS(drl_density_gradient(theta, Eigen::Vector3d(1, 1, 1), f, half), ConfigError);
}

TEST_CASE("density gradient matches finite differences of log Z") {
  testing::Gen gen(6);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::MatrixXd theta = gen.matrix(2, 3);
    const Eigen::VectorXd phi = gen.vector(3);
    const Eigen::VectorXd z = theta * phi;
    const auto est = estimate_from_logit(gen.uniform(-3, 3), {});
    const auto f = testing::softmax({est.ratio * z[0], est.ratio * z[1]});
    const auto g = drl_density_gradient(theta, phi, f, est);
    const auto numeric = testing::central_difference(
        [&](const std::vector<double>& t) { return log_z(z, t[0], t[1]); }, {est.tau_s, est.tau_t}, 1e-7);
    CHECK(testing::relative_error({g.d_tau_s, g.d_tau_t}, numeric, 1e-6) < 1e-4);
  }
}

TEST_CASE("density gradient obeys the ratio chain rule") {
  testing::Gen gen(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::MatrixXd theta = gen.matrix(3, 2);
    const Eigen::VectorXd phi = gen.vector(2);
    const auto est = estimate_from_logit(gen.uniform(-4, 4), {});
    const auto f = gen.simplex(3);
    const double s = f[0] * theta.row(0).dot(phi) + f[1] * theta.row(1).dot(phi) +
                     f[2] * theta.row(2).dot(phi);
    // dL/dR = s; dR/dtau_s = 1/tau_t; dR/dtau_t = -tau_s/tau_t^2
    const auto g = drl_density_gradient(theta, phi, f, est);
    CHECK(std::abs(g.d_tau_s - s / est.tau_t) < 1e-10 * std::max(1.0, std::abs(g.d_tau_s)));
    CHECK(std::abs(g.d_tau_t + s * est.tau_s / (est.tau_t * est.tau_t)) <
          1e-10 * std::max(1.0, std::abs(g.d_tau_t)));
    // chained into the logit: dL/dz = s * R
    CHECK(density_logit_gradient(g, est) == doctest::Approx(s * est.ratio).epsilon(1e-10));
  }
}

TEST_CASE("clamped ratios pass no density gradient") {
  const Eigen::MatrixXd theta = Eigen::MatrixXd::Ones(2, 2);
  const auto est = estimate_from_logit(30.0, {});
  REQUIRE(est.clamped);
  const auto g = drl_density_gradient(theta, Eigen::Vector2d(1, 2), std::vector<double>{0.3, 0.7}, est);
  CHECK(g.d_tau_s == 0.0);
  CHECK(g.d_tau_t == 0.0);
}

TEST_CASE("a new domain classifier predicts ratio one") {
  testing::Gen gen(8);
  for (const auto& hidden : {std::vector<int>{}, std::vector<int>{5}}) {
    const auto clf = DomainClassifier::make(3, hidden, Activation::Tanh, {}, 4);
    for (int i = 0; i < 10; ++i) CHECK(domain_forward(clf, gen.vector(3, 3.0)).ratio == 1.0);
  }
}

TEST_CASE("ratio bounds validation and json") {
  CHECK_THROWS_AS((RatioBounds{2.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((RatioBounds{0.0, 1.0}.validate()), ConfigError);
  CHECK(RatioBounds{0.5, 2.0}.clamp(7.0) == 2.0);

  const auto clf = DomainClassifier::make(3, {4}, Activation::Relu, {0.01, 50.0}, 5);
  const nlohmann::json j = clf;
  const auto back = j.get<DomainClassifier>();
  CHECK(back.bounds().min == 0.01);
  CHECK(back.bounds().max == 50.0);
  CHECK(back.net().parameters() == clf.net().parameters());
  const Eigen::Vector3d x(0.1, 0.2, -0.3);
  CHECK(back.logit(x) == clf.logit(x));
}
