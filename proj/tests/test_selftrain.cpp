#include <doctest.h>

#include <set>

#include "drl/errors.hpp"
#include "drl/selftrain.hpp"
#include "support.hpp"

using namespace drl;

namespace {

Prediction pred(std::vector<double> p) { return Prediction{std::move(p), 0.0}; }

std::vector<Prediction> random_preds(testing::Gen& gen, int n, int C) {
  std::vector<Prediction> out;
  for (int i = 0; i < n; ++i) out.push_back(pred(gen.simplex(C)));
  return out;
}

struct Setup {
  GaussianShiftData data;
  RobustClassifier model;
  DomainClassifier domain;
};

Setup make_setup(std::uint64_t seed, int n) {
  auto spec = GaussianShiftSpec::default_2d();
  spec.seed = seed;
  spec.n_source = n;
  spec.n_target = n;
  auto data = generate_gaussian_shift(spec);
  return {std::move(data),
          RobustClassifier::zeros(2, FeatureMap::mlp(2, {8}, 8, Activation::Tanh, seed + 1), 1.0, {}),
          DomainClassifier::make(2, {}, Activation::Tanh, {}, seed + 2)};
}

}  // namespace

TEST_CASE("selection examples") {
  const std::vector<Prediction> preds{pred({0.9, 0.1}), pred({0.6, 0.4}), pred({0.2, 0.8})};
  CHECK(select_pseudo(preds, 0.0).empty());

  const auto all = select_pseudo(preds, 1.0);
  REQUIRE(all.size() == 3);
  CHECK(all[0].label == 0);
  CHECK(all[1].label == 0);
  CHECK(all[2].label == 1);

  const auto half = select_pseudo(preds, 0.5);
  REQUIRE(half.size() == 2);
  CHECK(half[0].target_index == 0);
  CHECK(half[0].label == 0);
  CHECK(half[0].confidence == 0.9);
  CHECK(half[1].target_index == 2);
  CHECK(half[1].label == 1);

  CHECK_THROWS_AS(select_pseudo(preds, 1.5), ContractViolation);
}

TEST_CASE("selection ties go to the lower index") {
  const std::vector<Prediction> preds{pred({0.3, 0.7}), pred({0.7, 0.3}), pred({0.3, 0.7})};
  const auto sel = select_pseudo(preds, 0.5);
  REQUIRE(sel.size() == 2);
  CHECK(sel[0].target_index == 0);
  CHECK(sel[1].target_index == 1);
}

TEST_CASE("selection properties") {
  testing::Gen gen(91);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = gen.integer(1, 60), C = gen.integer(2, 5);
    const auto preds = random_preds(gen, n, C);
    const double portion = gen.uniform(0, 1);
    const auto sel = select_pseudo(preds, portion);

    std::set<std::size_t> seen;
    std::vector<int> predicted(static_cast<std::size_t>(C), 0), chosen(static_cast<std::size_t>(C), 0);
    for (const auto& p : preds) ++predicted[static_cast<std::size_t>(p.argmax())];
    for (const auto& s : sel) {
      CHECK(s.label == preds[s.target_index].argmax());
      CHECK(s.confidence == preds[s.target_index].confidence());
      CHECK(seen.insert(s.target_index).second);
      ++chosen[static_cast<std::size_t>(s.label)];
    }
    for (int c = 0; c < C; ++c) {
      const int quota = static_cast<int>(std::ceil(portion * predicted[static_cast<std::size_t>(c)] - 1e-9));
      CHECK(chosen[static_cast<std::size_t>(c)] == std::min(quota, predicted[static_cast<std::size_t>(c)]));
    }
    // every unselected target of a class is no more confident than the selected ones
    for (int c = 0; c < C; ++c) {
      double min_in = 2.0, max_out = -1.0;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i].argmax() != c) continue;
        (seen.count(i) ? min_in : max_out) =
            seen.count(i) ? std::min(min_in, preds[i].confidence()) : std::max(max_out, preds[i].confidence());
      }
      CHECK(max_out <= min_in);
    }
  }
}

TEST_CASE("schedule") {
  SelfTrainSchedule s{0.1, 0.1, 0.15, 3};
  CHECK(s.portion(0) == doctest::Approx(0.10));
  CHECK(s.portion(1) == doctest::Approx(0.15));
  CHECK(s.portion(2) == doctest::Approx(0.15));

  testing::Gen gen(92);
  for (int trial = 0; trial < 50; ++trial) {
    SelfTrainSchedule r{gen.uniform(0, 0.5), gen.uniform(0, 0.2), 0.0, 10};
    r.pmax = gen.uniform(r.p0, 1.0);
    CHECK_NOTHROW(r.validate());
    for (int t = 1; t < r.rounds; ++t) {
      CHECK(r.portion(t) >= r.portion(t - 1));
      CHECK(r.portion(t) <= r.pmax);
    }
  }
  CHECK_THROWS_AS((SelfTrainSchedule{0.2, 0.1, 0.1, 3}.validate()), ConfigError);
  CHECK_THROWS_AS((SelfTrainSchedule{0.1, -0.1, 0.2, 3}.validate()), ConfigError);
  CHECK_THROWS_AS((SelfTrainSchedule{0.1, 0.1, 0.2, -1}.validate()), ConfigError);
}

TEST_CASE("zero rounds equals a single end-to-end run") {
  auto s = make_setup(1, 150);
  TrainConfig cfg;
  cfg.epochs = 3;
  SelfTrainSchedule sched;
  sched.rounds = 0;
  const auto drst = run_drst(s.data.source, s.data.target, sched, cfg, s.model, s.domain);
  const auto base = train_end_to_end(s.data.source, s.data.target.without_labels(), s.model, s.domain, cfg);
  CHECK(drst.rounds.empty());
  CHECK(drst.final.model.theta() == base.model.theta());
  CHECK(drst.final.domain.net().parameters() == base.domain.net().parameters());
  REQUIRE(drst.final.history.size() == base.history.size());
  for (std::size_t e = 0; e < base.history.size(); ++e) CHECK(drst.final.history[e].dual == base.history[e].dual);
}

TEST_CASE("rounds record schedule and selection") {
  auto s = make_setup(2, 150);
  TrainConfig cfg;
  cfg.epochs = 2;
  SelfTrainSchedule sched{0.1, 0.05, 0.2, 3};
  const auto a = run_drst(s.data.source, s.data.target, sched, cfg, s.model, s.domain);
  REQUIRE(a.rounds.size() == 3);
  for (int t = 0; t < 3; ++t) {
    CHECK(a.rounds[t].round == t);
    CHECK(a.rounds[t].portion == doctest::Approx(sched.portion(t)));
    CHECK(a.rounds[t].evaluated);
    CHECK(a.rounds[t].accuracy >= 0.0);
    CHECK(a.rounds[t].accuracy <= 1.0);
  }
  CHECK(a.selection.size() == a.rounds.back().n_pseudo);
  std::set<std::size_t> idx;
  for (const auto& p : a.selection) CHECK(idx.insert(p.target_index).second);

  const auto b = run_drst(s.data.source, s.data.target, sched, cfg, s.model, s.domain);
  CHECK(a.final.model.theta() == b.final.model.theta());

  const auto unlabeled = run_drst(s.data.source, s.data.target.without_labels(), sched, cfg, s.model, s.domain);
  for (const auto& r : unlabeled.rounds) CHECK_FALSE(r.evaluated);
  CHECK(unlabeled.final.model.theta() == a.final.model.theta());

  CHECK_THROWS_AS(run_drst(s.data.source, Dataset(), sched, cfg, s.model, s.domain), ContractViolation);
}
