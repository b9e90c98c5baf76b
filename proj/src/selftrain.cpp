#include "drl/selftrain.hpp"

#include <algorithm>
#include <cmath>

#include "drl/errors.hpp"

namespace drl {

void SelfTrainSchedule::validate() const {
  if (!(p0 >= 0.0)) throw ConfigError("schedule.p0 must be >= 0");
  if (!(pmax >= p0 && pmax <= 1.0)) throw ConfigError("schedule.pmax must lie in [p0, 1]");
  if (!(dp >= 0.0)) throw ConfigError("schedule.dp must be >= 0");
  if (rounds < 0) throw ConfigError("schedule.rounds must be >= 0");
}

double SelfTrainSchedule::portion(int round) const {
  return std::min(p0 + round * dp, pmax);
}

std::vector<PseudoLabel> select_pseudo(std::span<const Prediction> preds, double portion) {
  if (!(portion >= 0.0 && portion <= 1.0))
    throw ContractViolation("select_pseudo: portion must lie in [0, 1]");
  std::vector<std::vector<PseudoLabel>> by_class;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int c = preds[i].argmax();
    if (static_cast<std::size_t>(c) >= by_class.size()) by_class.resize(static_cast<std::size_t>(c) + 1);
    by_class[static_cast<std::size_t>(c)].push_back({i, c, preds[i].confidence()});
  }
  std::vector<PseudoLabel> out;
  for (auto& group : by_class) {
    // 1e-9 keeps products like 0.065 * 200 from rounding up past an integer
    const double want = std::ceil(portion * static_cast<double>(group.size()) - 1e-9);
    const auto take = std::min(group.size(), static_cast<std::size_t>(std::max(want, 0.0)));
    std::stable_sort(group.begin(), group.end(), [](const PseudoLabel& a, const PseudoLabel& b) {
      return a.confidence > b.confidence;
    });
    out.insert(out.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end(),
            [](const PseudoLabel& a, const PseudoLabel& b) { return a.target_index < b.target_index; });
  return out;
}

namespace {

Dataset augment_source(const Dataset& source, const Dataset& target,
                       std::span<const PseudoLabel> pseudo) {
  std::vector<Sample> samples(source.samples().begin(), source.samples().end());
  for (const auto& p : pseudo)
    samples.push_back(Sample{target[p.target_index].features, p.label, Domain::Target});
  return Dataset(source.name() + "+pseudo", source.class_count(), std::move(samples));
}

}  // namespace

DrstResult run_drst(const Dataset& source, const Dataset& target,
                    const SelfTrainSchedule& schedule, const TrainConfig& cfg,
                    RobustClassifier model, DomainClassifier domain, RatioMode mode,
                    int epochs_per_round) {
  schedule.validate();
  if (target.empty()) throw ContractViolation("run_drst: empty target");
  const Dataset pool = target.without_labels();
  const bool evaluate = target.labeled();
  const auto eval_labels = evaluate ? target.labels() : std::vector<int>{};

  DrstResult out{train_end_to_end(source, pool, std::move(model), std::move(domain), cfg, mode), {}, {}};
  TrainConfig round_cfg = cfg;
  if (epochs_per_round > 0) round_cfg.epochs = epochs_per_round;

  for (int t = 0; t < schedule.rounds; ++t) {
    const DomainClassifier* dom = mode == RatioMode::Learned ? &out.final.domain : nullptr;
    const auto preds = predict_dataset(out.final.model, dom, pool);
    RoundRecord rec;
    rec.round = t;
    rec.portion = schedule.portion(t);
    out.selection = select_pseudo(preds, rec.portion);
    rec.n_pseudo = out.selection.size();

    const Dataset augmented = augment_source(source, pool, out.selection);
    round_cfg.seed = cfg.seed + static_cast<std::uint64_t>(t) + 1;
    out.final = train_end_to_end(augmented, pool, std::move(out.final.model),
                                 std::move(out.final.domain), round_cfg, mode);

    if (evaluate) {
      const auto probs = to_prob_matrix(predict_dataset(out.final.model, dom, pool));
      const auto rep = calibration_report(probs, eval_labels);
      rec.evaluated = true;
      rec.accuracy = rep.accuracy;
      rec.brier = rep.brier;
      rec.ece = rep.ece;
    }
    out.rounds.push_back(rec);
  }
  return out;
}

}  // namespace drl
