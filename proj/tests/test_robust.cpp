#include <doctest.h>

#include <nlohmann/json.hpp>

#include "drl/errors.hpp"
#include "drl/oracle.hpp"
#include "drl/robust.hpp"
#include "support.hpp"

using namespace drl;

namespace {

std::vector<double> probs_of(const Eigen::VectorXd& z, double R, double r, PredictMode mode) {
  return predict_from_scores(z, R, r, mode).probs;
}

double kl_to_uniform(const std::vector<double>& p) {
  double kl = 0.0;
  for (double v : p) kl += v * std::log(v * static_cast<double>(p.size()));
  return kl;
}

// Source batch, ratios, and a target realization weighted 1/(N R_i) at the
// same inputs, so that the target expectation of R f phi equals the source
// mean of f phi.
struct Instance {
  RobustClassifier model;
  std::vector<Sample> batch;
  std::vector<double> ratios;
  std::vector<double> target_weights;
};

Instance random_instance(testing::Gen& gen, bool mlp) {
  const int d = gen.integer(1, 4), C = gen.integer(2, 4), n = gen.integer(2, 7);
  FeatureMap fm = mlp ? gen.mlp(d, 4, 3) : FeatureMap::bias_augmented(d);
  Instance inst{RobustClassifier(gen.matrix(C, fm.out_dim()), fm, 0.0, {}), gen.samples(n, d, C, Domain::Source),
                {}, {}};
  for (int i = 0; i < n; ++i) {
    inst.ratios.push_back(std::exp(gen.uniform(-1.5, 1.5)));
    inst.target_weights.push_back(1.0 / (n * inst.ratios.back()));
  }
  return inst;
}

double instance_dual(const Instance& inst, const RobustClassifier& m) {
  return dual_objective(m, inst.batch, inst.ratios, compute_constraint(m, inst.batch), inst.target_weights);
}

DiscreteDomainSpec small_discrete(testing::Gen& gen, int points, int classes, int dim) {
  std::vector<Eigen::VectorXd> pts;
  for (int i = 0; i < points; ++i) pts.push_back(gen.vector(dim));
  const auto ps = gen.simplex(points), pt = gen.simplex(points);
  Eigen::MatrixXd cond(points, classes);
  for (int i = 0; i < points; ++i) {
    const auto row = gen.simplex(classes);
    for (int c = 0; c < classes; ++c) cond(i, c) = row[static_cast<std::size_t>(c)];
  }
  return DiscreteDomainSpec::make(pts, Eigen::Map<const Eigen::VectorXd>(ps.data(), points),
                                  Eigen::Map<const Eigen::VectorXd>(pt.data(), points), cond);
}

std::vector<Sample> target_points(const DiscreteDomainSpec& spec) {
  std::vector<Sample> out;
  for (const auto& p : spec.points) out.push_back({p, std::nullopt, Domain::Target});
  return out;
}

}  // namespace

TEST_CASE("predict examples") {
  const auto uniform = probs_of(Eigen::Vector2d(0, 0), 1.0, 0.0, PredictMode::test());
  CHECK(uniform[0] == doctest::Approx(0.5));
  CHECK(uniform[1] == doctest::Approx(0.5));

  const auto half = probs_of(Eigen::Vector2d(2, 0), 0.5, 0.0, PredictMode::test());
  CHECK(half[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(half[1] == doctest::Approx(0.2689).epsilon(1e-4));

  // all-ones I: logits (2+1)/2 and (0+1)/2
  const auto reg = probs_of(Eigen::Vector2d(2, 0), 1.0, 1.0, PredictMode::test());
  CHECK(reg[0] == doctest::Approx(0.7311).epsilon(1e-4));
  const auto ts = testing::softmax({1.0, 0.0});
  CHECK(std::abs(reg[0] - ts[0]) < 1e-15);

  // Train mode at the label: logit_0 = (2 + 1)/2, logit_1 = 0
  const auto train = probs_of(Eigen::Vector2d(2, 0), 1.0, 1.0, PredictMode::train(0));
  CHECK(train[0] == doctest::Approx(testing::softmax({1.5, 0.0})[0]).epsilon(1e-12));
}

TEST_CASE("predict contract") {
  const auto m = RobustClassifier::zeros(2, FeatureMap::identity(2), 0.0, {0.1, 10.0});
  CHECK_THROWS_AS(predict(m, Eigen::Vector2d(1, 1), 20.0, PredictMode::test()), ContractViolation);
  CHECK_THROWS_AS(predict(m, Eigen::Vector2d(1, 1), 1.0, PredictMode::train(2)), ContractViolation);
  CHECK_THROWS_AS(RobustClassifier::zeros(2, FeatureMap::identity(2), 1.5, {}), ConfigError);
  CHECK_THROWS_AS(RobustClassifier(Eigen::MatrixXd::Zero(2, 3), FeatureMap::identity(2), 0.0, {}), ConfigError);
}

TEST_CASE("predict properties") {
  testing::Gen gen(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int C = gen.integer(2, 6);
    Eigen::VectorXd z = gen.vector(C, 2.0);
    std::vector<double> zs(z.data(), z.data() + C);

    // reduction to softmax
    const auto p = probs_of(z, 1.0, 0.0, PredictMode::test());
    const auto ref = testing::softmax(zs);
    double sum = 0.0;
    for (int y = 0; y < C; ++y) {
      CHECK(std::abs(p[y] - ref[y]) < 1e-12);
      CHECK(p[y] > 0.0);
      sum += p[y];
    }
    CHECK(std::abs(sum - 1.0) < 1e-10);

    // test-mode regularization is temperature scaling
    const double R = std::exp(gen.uniform(-2, 2)), r = gen.uniform(0, 1);
    std::vector<double> scaled;
    for (double v : zs) scaled.push_back(R * v / (1.0 + r));
    const auto q = probs_of(z, R, r, PredictMode::test());
    const auto qref = testing::softmax(scaled);
    for (int y = 0; y < C; ++y) CHECK(std::abs(q[y] - qref[y]) < 1e-12);

    // argmax invariance and entropy / KL monotonicity in R for r = 0
    const int top = predict_from_scores(z, 1.0, 0.0, PredictMode::test()).argmax();
    double prev_h = std::numeric_limits<double>::infinity(), prev_kl = -1.0;
    for (double Rk : {1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 10.0}) {
      const auto pk = predict_from_scores(z, Rk, 0.0, PredictMode::test());
      CHECK(pk.argmax() == top);
      const double h = testing::entropy(pk.probs), kl = kl_to_uniform(pk.probs);
      CHECK(h < prev_h);
      CHECK(kl > prev_kl);
      prev_h = h;
      prev_kl = kl;
    }
    CHECK(kl_to_uniform(probs_of(z, 1e-6, 0.0, PredictMode::test())) < 1e-9);
  }
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(predict_from_scores(Eigen::Vector3d(1, 3, 3), 1.0, 0.0, PredictMode::test()).argmax() == 1);
}

TEST_CASE("log partition is log-sum-exp") {
  const auto p = predict_from_scores(Eigen::Vector2d(800, 799), 1.0, 0.0, PredictMode::test());
  CHECK(p.log_partition == doctest::Approx(800.0 + std::log1p(std::exp(-1.0))));
  CHECK(std::isfinite(p.probs[1]));
}

TEST_CASE("dual objective examples") {
  const auto zero = RobustClassifier::zeros(3, FeatureMap::identity(2), 0.0, {});
  const std::vector<Sample> target{{Eigen::Vector2d(1, 2), std::nullopt, Domain::Target},
                                   {Eigen::Vector2d(-1, 0), std::nullopt, Domain::Target}};
  const std::vector<Sample> source{{Eigen::Vector2d(1, 1), 0, Domain::Source},
                                   {Eigen::Vector2d(0, 3), 2, Domain::Source}};
  CHECK(dual_objective(zero, target, std::vector<double>{1.0, 2.0}, compute_constraint(zero, source)) ==
        doctest::Approx(std::log(3.0)));

  // single target point, C=2, identity features
  Eigen::MatrixXd theta(2, 2);
  theta << 0.5, -1.0, 2.0, 0.25;
  const RobustClassifier m(theta, FeatureMap::identity(2), 0.0, {});
  const Eigen::Vector2d x(0.4, 1.2);
  const double R = 1.7;
  const double z1 = 0.5 * 0.4 - 1.0 * 1.2, z2 = 2.0 * 0.4 + 0.25 * 1.2;
  const std::vector<Sample> one{{x, std::nullopt, Domain::Target}};
  // c~ from two source points of class 0 and one of class 1
  const std::vector<Sample> src{{Eigen::Vector2d(1, 0), 0, Domain::Source},
                                {Eigen::Vector2d(0, 1), 0, Domain::Source},
                                {Eigen::Vector2d(3, 3), 1, Domain::Source}};
  const double theta_dot_c = (0.5 * 1.0 / 3 - 1.0 * 1.0 / 3) + (2.0 * 1.0 + 0.25 * 1.0);
  const double expected = std::log(std::exp(R * z1) + std::exp(R * z2)) - theta_dot_c;
  CHECK(dual_objective(m, one, std::vector<double>{R}, compute_constraint(m, src)) ==
        doctest::Approx(expected).epsilon(1e-12));

  CHECK_THROWS_AS(dual_objective(m, std::vector<Sample>{}, std::vector<double>{}, compute_constraint(m, src)),
                  ContractViolation);
}

TEST_CASE("grad_source is zero at a perfect fit") {
  // huge margin makes f the one-hot label to machine precision
  Eigen::MatrixXd theta(2, 2);
  theta << 1000, 0, 0, 1000;
  const RobustClassifier m(theta, FeatureMap::identity(2), 0.0, {});
  const std::vector<Sample> batch{{Eigen::Vector2d(1, 0), 0, Domain::Source},
                                  {Eigen::Vector2d(0, 1), 1, Domain::Source}};
  const auto g = grad_source(m, batch, std::vector<double>{1.0, 1.0});
  CHECK(g.theta.cwiseAbs().maxCoeff() == 0.0);
  const std::vector<Sample> unlabeled{{Eigen::Vector2d(1, 0), std::nullopt, Domain::Source}};
  CHECK_THROWS_AS(grad_source(m, unlabeled, std::vector<double>{1.0}), ContractViolation);
}

TEST_CASE("grad_source matches finite differences of the dual") {
  testing::Gen gen(41);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instance(gen, trial % 2 == 1);
    const auto g = grad_source(inst.model, inst.batch, inst.ratios);
    RobustClassifier probe = inst.model;
    const auto num_theta = testing::central_difference(
        [&](const std::vector<double>& t) {
          probe.theta() = testing::unflat(t, inst.model.theta().rows(), inst.model.theta().cols());
          return instance_dual(inst, probe);
        },
        testing::flat(inst.model.theta()));
    CHECK(testing::relative_error(testing::flat(g.theta), num_theta, 1e-4) < 1e-4);

    if (inst.model.features().parameter_count() == 0) continue;
    probe = inst.model;
    const auto num_features = testing::central_difference(
        [&](const std::vector<double>& p) {
          probe.features().set_parameters(p);
          return instance_dual(inst, probe);
        },
        inst.model.features().parameters());
    CHECK(testing::relative_error(flatten(g.features), num_features, 1e-4) < 1e-4);
  }
}

TEST_CASE("oracle: uniform model") {
  testing::Gen gen(51);
  const auto spec = small_discrete(gen, 5, 3, 2);
  const auto m = RobustClassifier::zeros(3, FeatureMap::bias_augmented(2), 0.0, {});
  const auto o = oracle_expectations(spec, m, exact_ratios(spec));
  CHECK(o.dual_value == doctest::Approx(std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("oracle: two-point hand evaluation") {
  const auto spec = DiscreteDomainSpec::make(
      {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -2.0)}, Eigen::Vector2d(0.25, 0.75),
      Eigen::Vector2d(0.6, 0.4), (Eigen::MatrixXd(2, 2) << 0.9, 0.1, 0.3, 0.7).finished());
  Eigen::MatrixXd theta(2, 1);
  theta << 0.8, -0.5;
  const RobustClassifier m(theta, FeatureMap::identity(1), 0.0, {});
  const std::vector<double> R{0.25 / 0.6, 0.75 / 0.4};
  auto lz = [&](double x, double r) { return std::log(std::exp(r * 0.8 * x) + std::exp(r * -0.5 * x)); };
  const double e_log_z = 0.6 * lz(1.0, R[0]) + 0.4 * lz(-2.0, R[1]);
  const double c0 = 0.25 * 0.9 * 1.0 + 0.75 * 0.3 * -2.0;
  const double c1 = 0.25 * 0.1 * 1.0 + 0.75 * 0.7 * -2.0;
  const auto o = oracle_expectations(spec, m, R);
  CHECK(o.dual_value == doctest::Approx(e_log_z - (0.8 * c0 - 0.5 * c1)).epsilon(1e-12));
}

TEST_CASE("oracle: no shift gives the moment-matching gradient") {
  testing::Gen gen(52);
  auto spec = small_discrete(gen, 6, 3, 2);
  spec.p_target = spec.p_source;
  const RobustClassifier m(gen.matrix(3, 3), FeatureMap::bias_augmented(2), 0.0, {});
  const auto o = oracle_expectations(spec, m, std::vector<double>(6, 1.0));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 3);
  for (std::size_t i = 0; i < 6; ++i) {
    const Eigen::Vector3d phi(spec.points[i][0], spec.points[i][1], 1.0);
    const Eigen::VectorXd z = m.theta() * phi;
    const auto f = testing::softmax({z[0], z[1], z[2]});
    for (int y = 0; y < 3; ++y)
      expected.row(y) += spec.p_source[i] * (f[y] - spec.cond_label(i, y)) * phi.transpose();
  }
  CHECK((o.grad_theta - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("change of measure against the enumeration oracle") {
  testing::Gen gen(53);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = gen.integer(2, 4), d = gen.integer(1, 3);
    const auto spec = small_discrete(gen, gen.integer(2, 10), C, d);
    const auto fm = trial % 2 ? gen.mlp(d, 3, 2) : FeatureMap::bias_augmented(d);
    const RobustClassifier m(gen.matrix(C, fm.out_dim()), fm, 0.0, {});
    const auto ratios = exact_ratios(spec);
    const auto o = oracle_expectations(spec, m, ratios);

    const auto src = source_enumeration(spec);
    std::vector<double> src_ratios;
    for (auto i : src.point_index) src_ratios.push_back(ratios[i]);
    const auto g = grad_source(m, src.samples, src_ratios, src.weights);
    CHECK((g.theta - o.grad_theta).cwiseAbs().maxCoeff() < 1e-10);

    const auto pts = target_points(spec);
    const std::vector<double> pt(spec.p_target.data(), spec.p_target.data() + spec.size());
    const double dual =
        dual_objective(m, pts, ratios, compute_constraint(m, src.samples, src.weights), pt);
    CHECK(std::abs(dual - o.dual_value) < 1e-10);
  }
}

TEST_CASE("oracle rejects mismatched models") {
  testing::Gen gen(54);
  const auto spec = small_discrete(gen, 3, 2, 2);
  const auto wrong = RobustClassifier::zeros(2, FeatureMap::identity(3), 0.0, {});
  CHECK_THROWS_AS(oracle_expectations(spec, wrong, exact_ratios(spec)), ConfigError);
}

TEST_CASE("classifier json round trip") {
  testing::Gen gen(55);
  const RobustClassifier m(gen.matrix(3, 4), gen.mlp(2, 5, 4), 0.4, {0.01, 100.0});
  const nlohmann::json j = m;
  const auto back = j.get<RobustClassifier>();
  CHECK(back.theta() == m.theta());
  CHECK(back.r() == 0.4);
  CHECK(back.bounds().max == 100.0);
  const Eigen::Vector2d x(0.3, 0.9);
  CHECK(back.scores(x) == m.scores(x));
  nlohmann::json bad = j;
  bad["theta"].erase(0);
  CHECK_THROWS_AS(bad.get<RobustClassifier>(), ParseError);
}
