#include "drl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "drl/calibration.hpp"
#include "drl/errors.hpp"

namespace drl {

namespace fs = std::filesystem;
using nlohmann::json;

SeedPlan SeedPlan::from(std::uint64_t seed) {
  return {seed, seed + 1, seed + 2, seed + 3, seed + 4, seed + 5};
}

namespace {

// ---- config reading with field paths ------------------------------------

class Section {
 public:
  Section(const json& obj, std::string path, std::initializer_list<const char*> allowed)
      : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(label() + " must be an object");
    for (const auto& [key, value] : obj_.items()) {
      (void)value;
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
        throw ConfigError("unknown field " + field(key));
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const char* key) const { return obj_.contains(key); }
  const json& raw(const char* key) const { return obj_.at(key); }

  void number(const char* key, double& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + " must be a number");
    out = v.get<double>();
    if (!std::isfinite(out)) throw ConfigError(field(key) + " must be finite");
  }

  void integer(const char* key, int& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key) + " must be an integer");
    const auto x = v.get<long long>();
    if (x < -2147483647LL || x > 2147483647LL) throw ConfigError(field(key) + " is out of range");
    out = static_cast<int>(x);
  }

  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!obj_.at(key).is_boolean()) throw ConfigError(field(key) + " must be true or false");
    out = obj_.at(key).get<bool>();
  }

  void string(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!obj_.at(key).is_string()) throw ConfigError(field(key) + " must be a string");
    out = obj_.at(key).get<std::string>();
  }

  void vector(const char* key, Eigen::VectorXd& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(field(key) + " must be a non-empty array of numbers");
    out.resize(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw ConfigError(field(key) + "[" + std::to_string(i) + "] must be a number");
      out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
    }
  }

  void matrix(const char* key, Eigen::MatrixXd& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array() || v.empty()) throw ConfigError(field(key) + " must be a non-empty array of rows");
    const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
    out.resize(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_array() || v[i].size() != cols || cols == 0)
        throw ConfigError(field(key) + " must be a rectangular array of numbers");
      for (std::size_t j = 0; j < cols; ++j) {
        if (!v[i][j].is_number()) throw ConfigError(field(key) + " must contain only numbers");
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j].get<double>();
      }
    }
  }

  void int_list(const char* key, std::vector<int>& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + " must be an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(field(key) + " must be an array of integers");
      out.push_back(e.get<int>());
    }
  }

  void number_list(const char* key, std::vector<double>& out) const {
    if (!has(key)) return;
    const auto& v = obj_.at(key);
    if (!v.is_array()) throw ConfigError(field(key) + " must be an array of numbers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(field(key) + " must be an array of numbers");
      out.push_back(e.get<double>());
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }
  const json& obj_;
  std::string path_;
};

Activation parse_activation(const std::string& s, const std::string& field) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError(field + " must be \"tanh\" or \"relu\"");
}

const char* activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

const char* feature_kind_name(FeatureKind k) {
  switch (k) {
    case FeatureKind::Identity: return "identity";
    case FeatureKind::BiasAugmented: return "bias";
    case FeatureKind::Mlp: return "mlp";
  }
  return "mlp";
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void parse_data(const Section& root, DataConfig& d) {
  if (!root.has("data")) return;
  Section s(root.raw("data"), "data",
            {"kind", "gaussian", "source_path", "target_path", "target_labeled", "class_count",
             "labeled_per_class"});
  std::string kind = "gaussian";
  s.string("kind", kind);
  if (kind == "gaussian") {
    d.kind = DataKind::Gaussian;
  } else if (kind == "csv") {
    d.kind = DataKind::Csv;
  } else {
    throw ConfigError("data.kind must be \"gaussian\" or \"csv\"");
  }
  if (s.has("gaussian")) {
    Section g(s.raw("gaussian"), "data.gaussian",
              {"source_mean", "target_mean", "source_cov", "target_cov", "boundary_weights",
               "boundary_bias", "n_source", "n_target"});
    auto& spec = d.gaussian;
    g.vector("source_mean", spec.source_mean);
    g.vector("target_mean", spec.target_mean);
    g.matrix("source_cov", spec.source_cov);
    g.matrix("target_cov", spec.target_cov);
    g.vector("boundary_weights", spec.boundary_weights);
    g.number("boundary_bias", spec.boundary_bias);
    g.integer("n_source", spec.n_source);
    g.integer("n_target", spec.n_target);
    const auto dim = spec.source_mean.size();
    require(spec.target_mean.size() == dim, "data.gaussian.target_mean must match source_mean in length");
    require(spec.boundary_weights.size() == dim,
            "data.gaussian.boundary_weights must match source_mean in length");
    require(spec.source_cov.rows() == dim && spec.source_cov.cols() == dim,
            "data.gaussian.source_cov must be d x d");
    require(spec.target_cov.rows() == dim && spec.target_cov.cols() == dim,
            "data.gaussian.target_cov must be d x d");
    require(spec.n_source >= 1, "data.gaussian.n_source must be >= 1");
    require(spec.n_target >= 1, "data.gaussian.n_target must be >= 1");
  }
  s.string("source_path", d.source_path);
  s.string("target_path", d.target_path);
  s.boolean("target_labeled", d.target_labeled);
  if (s.has("class_count")) {
    int c = 0;
    s.integer("class_count", c);
    require(c >= 1, "data.class_count must be >= 1");
    d.class_count = c;
  }
  s.integer("labeled_per_class", d.labeled_per_class);
  require(d.labeled_per_class >= 1, "data.labeled_per_class must be >= 1");
  if (d.kind == DataKind::Csv) {
    require(!d.source_path.empty(), "data.source_path is required when data.kind is \"csv\"");
    require(!d.target_path.empty(), "data.target_path is required when data.kind is \"csv\"");
    require(fs::exists(d.source_path), "data.source_path does not exist: " + d.source_path);
    require(fs::exists(d.target_path), "data.target_path does not exist: " + d.target_path);
  }
}

void parse_model(const Section& root, ModelConfig& m) {
  if (!root.has("model")) return;
  Section s(root.raw("model"), "model", {"features", "r", "ratio_min", "ratio_max", "domain"});
  if (s.has("features")) {
    Section f(s.raw("features"), "model.features", {"kind", "hidden", "out_dim", "activation"});
    std::string kind = feature_kind_name(m.features.kind);
    f.string("kind", kind);
    if (kind == "identity") m.features.kind = FeatureKind::Identity;
    else if (kind == "bias") m.features.kind = FeatureKind::BiasAugmented;
    else if (kind == "mlp") m.features.kind = FeatureKind::Mlp;
    else throw ConfigError("model.features.kind must be \"identity\", \"bias\" or \"mlp\"");
    f.int_list("hidden", m.features.hidden);
    f.integer("out_dim", m.features.out_dim);
    std::string act = activation_name(m.features.activation);
    f.string("activation", act);
    m.features.activation = parse_activation(act, "model.features.activation");
    for (int h : m.features.hidden) require(h >= 1, "model.features.hidden widths must be >= 1");
    require(m.features.out_dim >= 1, "model.features.out_dim must be >= 1");
  }
  s.number("r", m.r);
  require(m.r >= 0.0 && m.r <= 1.0, "model.r must lie in [0, 1]");
  s.number("ratio_min", m.bounds.min);
  s.number("ratio_max", m.bounds.max);
  require(m.bounds.min > 0.0, "model.ratio_min must be > 0");
  require(m.bounds.max >= m.bounds.min, "model.ratio_max must be >= model.ratio_min");
  if (s.has("domain")) {
    Section d(s.raw("domain"), "model.domain", {"hidden", "activation"});
    d.int_list("hidden", m.domain_hidden);
    std::string act = activation_name(m.domain_activation);
    d.string("activation", act);
    m.domain_activation = parse_activation(act, "model.domain.activation");
    for (int h : m.domain_hidden) require(h >= 1, "model.domain.hidden widths must be >= 1");
  }
}

void parse_train(const Section& root, TrainConfig& t) {
  if (!root.has("train")) return;
  Section s(root.raw("train"), "train",
            {"lr_domain", "lr_model", "momentum", "batch_size", "epochs", "domain_update_period"});
  s.number("lr_domain", t.lr_domain);
  s.number("lr_model", t.lr_model);
  s.number("momentum", t.momentum);
  s.integer("batch_size", t.batch_size);
  s.integer("epochs", t.epochs);
  s.integer("domain_update_period", t.domain_update_period);
}

void parse_schedule(const Section& root, SelfTrainSchedule& sch, int& epochs_per_round) {
  if (!root.has("schedule")) return;
  Section s(root.raw("schedule"), "schedule", {"p0", "dp", "pmax", "rounds", "epochs_per_round"});
  s.number("p0", sch.p0);
  s.number("dp", sch.dp);
  s.number("pmax", sch.pmax);
  s.integer("rounds", sch.rounds);
  s.integer("epochs_per_round", epochs_per_round);
  require(epochs_per_round >= 0, "schedule.epochs_per_round must be >= 0");
}

void parse_ssl(const Section& root, SslConfig& c) {
  if (!root.has("ssl")) return;
  Section s(root.raw("ssl"), "ssl", {"threshold", "unlabeled_batch", "lambda_u", "augmentation"});
  s.number("threshold", c.threshold);
  s.integer("unlabeled_batch", c.unlabeled_batch);
  s.number("lambda_u", c.lambda_u);
  if (s.has("augmentation")) {
    Section a(s.raw("augmentation"), "ssl.augmentation",
              {"weak_noise_std", "strong_noise_std", "strong_mask_fraction"});
    a.number("weak_noise_std", c.augmentation.weak_noise_std);
    a.number("strong_noise_std", c.augmentation.strong_noise_std);
    a.number("strong_mask_fraction", c.augmentation.strong_mask_fraction);
  }
}

void parse_plugin(const Section& root, PluginConfig& p) {
  if (!root.has("plugin")) return;
  Section s(root.raw("plugin"), "plugin", {"bandwidths", "train_fraction", "iterations", "lr", "momentum"});
  s.number_list("bandwidths", p.bandwidths);
  s.number("train_fraction", p.options.train_fraction);
  s.integer("iterations", p.options.iterations);
  s.number("lr", p.options.lr);
  s.number("momentum", p.options.momentum);
  require(!p.bandwidths.empty(), "plugin.bandwidths must not be empty");
  for (double h : p.bandwidths) require(h > 0.0, "plugin.bandwidths entries must be > 0");
  require(p.options.train_fraction > 0.0 && p.options.train_fraction < 1.0,
          "plugin.train_fraction must lie in (0, 1)");
  require(p.options.iterations >= 1, "plugin.iterations must be >= 1");
  require(p.options.lr > 0.0, "plugin.lr must be > 0");
  require(p.options.momentum >= 0.0 && p.options.momentum < 1.0, "plugin.momentum must lie in [0, 1)");
}

void parse_calibrate(const Section& root, CalibrateConfig& c) {
  if (!root.has("calibrate")) return;
  Section s(root.raw("calibrate"), "calibrate", {"ts_fraction", "bins"});
  s.number("ts_fraction", c.ts_fraction);
  s.integer("bins", c.bins);
  require(c.ts_fraction > 0.0 && c.ts_fraction < 1.0, "calibrate.ts_fraction must lie in (0, 1)");
  require(c.bins >= 1, "calibrate.bins must be >= 1");
}

void validate(ExperimentConfig& cfg) {
  cfg.train.validate();
  cfg.schedule.validate();
  cfg.ssl.base = cfg.train;
  cfg.ssl.validate();
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  Section root(doc, "",
               {"seed", "output_dir", "data", "model", "train", "schedule", "ssl", "plugin", "calibrate"});
  ExperimentConfig cfg;
  if (!root.has("seed")) throw ConfigError("seed is required");
  const auto& seed = root.raw("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0))
    throw ConfigError("seed must be a non-negative integer");
  cfg.seed = seed.get<std::uint64_t>();
  root.string("output_dir", cfg.output_dir);
  parse_data(root, cfg.data);
  parse_model(root, cfg.model);
  parse_train(root, cfg.train);
  parse_schedule(root, cfg.schedule, cfg.epochs_per_round);
  parse_ssl(root, cfg.ssl);
  parse_plugin(root, cfg.plugin);
  parse_calibrate(root, cfg.calibrate);
  validate(cfg);
  return cfg;
}

ExperimentConfig parse_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::VectorXd row = m.row(i).transpose();
    rows.push_back(vec_json(row));
  }
  return rows;
}

}  // namespace

json to_json(const ExperimentConfig& cfg) {
  json data{{"kind", cfg.data.kind == DataKind::Gaussian ? "gaussian" : "csv"},
            {"labeled_per_class", cfg.data.labeled_per_class}};
  if (cfg.data.kind == DataKind::Gaussian) {
    const auto& g = cfg.data.gaussian;
    data["gaussian"] = {{"source_mean", vec_json(g.source_mean)},
                        {"target_mean", vec_json(g.target_mean)},
                        {"source_cov", mat_json(g.source_cov)},
                        {"target_cov", mat_json(g.target_cov)},
                        {"boundary_weights", vec_json(g.boundary_weights)},
                        {"boundary_bias", g.boundary_bias},
                        {"n_source", g.n_source},
                        {"n_target", g.n_target}};
  } else {
    data["source_path"] = cfg.data.source_path;
    data["target_path"] = cfg.data.target_path;
    data["target_labeled"] = cfg.data.target_labeled;
    if (cfg.data.class_count) data["class_count"] = *cfg.data.class_count;
  }
  const auto& m = cfg.model;
  json model{{"features",
              {{"kind", feature_kind_name(m.features.kind)},
               {"hidden", m.features.hidden},
               {"out_dim", m.features.out_dim},
               {"activation", activation_name(m.features.activation)}}},
             {"r", m.r},
             {"ratio_min", m.bounds.min},
             {"ratio_max", m.bounds.max},
             {"domain", {{"hidden", m.domain_hidden}, {"activation", activation_name(m.domain_activation)}}}};
  const auto& t = cfg.train;
  json train{{"lr_domain", t.lr_domain},   {"lr_model", t.lr_model},
             {"momentum", t.momentum},     {"batch_size", t.batch_size},
             {"epochs", t.epochs},         {"domain_update_period", t.domain_update_period}};
  json schedule{{"p0", cfg.schedule.p0},
                {"dp", cfg.schedule.dp},
                {"pmax", cfg.schedule.pmax},
                {"rounds", cfg.schedule.rounds},
                {"epochs_per_round", cfg.epochs_per_round}};
  const auto& a = cfg.ssl.augmentation;
  json ssl{{"threshold", cfg.ssl.threshold},
           {"unlabeled_batch", cfg.ssl.unlabeled_batch},
           {"lambda_u", cfg.ssl.lambda_u},
           {"augmentation",
            {{"weak_noise_std", a.weak_noise_std},
             {"strong_noise_std", a.strong_noise_std},
             {"strong_mask_fraction", a.strong_mask_fraction}}}};
  json plugin{{"bandwidths", cfg.plugin.bandwidths},
              {"train_fraction", cfg.plugin.options.train_fraction},
              {"iterations", cfg.plugin.options.iterations},
              {"lr", cfg.plugin.options.lr},
              {"momentum", cfg.plugin.options.momentum}};
  json calibrate{{"ts_fraction", cfg.calibrate.ts_fraction}, {"bins", cfg.calibrate.bins}};
  return json{{"seed", cfg.seed},   {"output_dir", cfg.output_dir}, {"data", data},
              {"model", model},     {"train", train},               {"schedule", schedule},
              {"ssl", ssl},         {"plugin", plugin},             {"calibrate", calibrate}};
}

void apply_overrides(ExperimentConfig& cfg, const RunOverrides& overrides) {
  if (overrides.output_dir) cfg.output_dir = *overrides.output_dir;
  if (overrides.seed) cfg.seed = *overrides.seed;
}

namespace {

// ---- output staging ---------------------------------------------------------

// Holds the directory lock and stages every file under a temporary name;
// commit() renames them all, otherwise the destructor removes them.
class RunOutputs {
 public:
  explicit RunOutputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    lock_ = dir_ / ".drl.lock";
    std::FILE* f = std::fopen(lock_.c_str(), "wx");
    if (!f) throw IoError("output directory " + dir_.string() + " is locked by another run");
    std::fclose(f);
  }

  ~RunOutputs() {
    std::error_code ec;
    if (!committed_)
      for (const auto& [name, tmp] : staged_) fs::remove(tmp, ec);
    fs::remove(lock_, ec);
  }

  RunOutputs(const RunOutputs&) = delete;
  RunOutputs& operator=(const RunOutputs&) = delete;

  fs::path stage(const std::string& name) {
    auto tmp = dir_ / ("." + name + ".partial");
    staged_[name] = tmp;
    return tmp;
  }

  std::ofstream open(const std::string& name) {
    std::ofstream out(stage(name), std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir_ / name).string());
    return out;
  }

  void commit() {
    for (const auto& [name, tmp] : staged_) {
      std::error_code ec;
      fs::rename(tmp, dir_ / name, ec);
      if (ec) throw IoError("cannot finalize " + (dir_ / name).string() + ": " + ec.message());
    }
    committed_ = true;
  }

 private:
  fs::path dir_;
  fs::path lock_;
  std::map<std::string, fs::path> staged_;
  bool committed_ = false;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

void write_json_file(RunOutputs& out, const std::string& name, const json& value) {
  auto f = out.open(name);
  f << value.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + name);
}

struct Evaluated {
  std::string name;
  std::vector<Prediction> preds;
  std::vector<double> ratios;
  std::vector<std::size_t> indices;  // positions in the evaluated dataset
  std::optional<CalibrationReport> report;
};

class RunWriter {
 public:
  RunWriter(const std::string& command, const ExperimentConfig& cfg, RunOutputs& out)
      : command_(command), cfg_(cfg), out_(out), metrics_(out.open("metrics.jsonl")) {}

  void metric(const json& record) { metrics_ << record.dump() << '\n'; }

  void add(Evaluated e) { models_.push_back(std::move(e)); }

  void finish(const Dataset& evaluated, json extra = json::object()) {
    metrics_.close();
    if (!metrics_) throw IoError("failed writing metrics.jsonl");

    json models = json::object();
    for (const auto& m : models_)
      if (m.report) models[m.name] = *m.report;
    json report{{"tool", kToolVersion}, {"command", command_}, {"config", to_json(cfg_)},
                {"models", models}};
    for (auto& [k, v] : extra.items()) report[k] = v;
    write_json_file(out_, "report.json", report);

    auto rel = out_.open("reliability.csv");
    rel << "model,lower,upper,count,confidence,accuracy\n";
    for (const auto& m : models_)
      if (m.report)
        for (const auto& b : m.report->bins)
          rel << m.name << ',' << fmt(b.lower) << ',' << fmt(b.upper) << ',' << b.count << ','
              << fmt(b.mean_confidence) << ',' << fmt(b.accuracy) << '\n';
    rel.close();
    if (!rel) throw IoError("failed writing reliability.csv");

    auto pred = out_.open("predictions.csv");
    pred << "model,index,label,predicted,confidence,ratio\n";
    for (const auto& m : models_)
      for (std::size_t i = 0; i < m.preds.size(); ++i) {
        const auto idx = m.indices.empty() ? i : m.indices[i];
        const auto& label = evaluated[idx].label;
        pred << m.name << ',' << idx << ',' << (label ? std::to_string(*label) : std::string()) << ','
             << m.preds[i].argmax() << ',' << fmt(m.preds[i].confidence()) << ',' << fmt(m.ratios[i])
             << '\n';
      }
    pred.close();
    if (!pred) throw IoError("failed writing predictions.csv");
  }

 private:
  std::string command_;
  const ExperimentConfig& cfg_;
  RunOutputs& out_;
  std::ofstream metrics_;
  std::vector<Evaluated> models_;
};

// ---- data and models --------------------------------------------------------

struct LoadedData {
  Dataset source;
  Dataset target;
  std::optional<GaussianShiftSpec> spec;
};

LoadedData load_data(const ExperimentConfig& cfg, const SeedPlan& seeds) {
  if (cfg.data.kind == DataKind::Gaussian) {
    auto spec = cfg.data.gaussian;
    spec.seed = seeds.data;
    auto d = generate_gaussian_shift(spec);
    return {std::move(d.source), std::move(d.target), spec};
  }
  CsvSchema src_schema{true, Domain::Source, cfg.data.class_count};
  auto source = load_csv(cfg.data.source_path, src_schema);
  CsvSchema tgt_schema{cfg.data.target_labeled, Domain::Target, source.class_count()};
  auto target = load_csv(cfg.data.target_path, tgt_schema);
  if (source.dim() != target.dim())
    throw ConfigError("data: source and target CSV files differ in feature count");
  return {std::move(source), std::move(target), std::nullopt};
}

FeatureMap make_features(const ModelConfig& m, int dim, std::uint64_t seed) {
  switch (m.features.kind) {
    case FeatureKind::Identity: return FeatureMap::identity(dim);
    case FeatureKind::BiasAugmented: return FeatureMap::bias_augmented(dim);
    case FeatureKind::Mlp:
      return FeatureMap::mlp(dim, m.features.hidden, m.features.out_dim, m.features.activation, seed);
  }
  throw ConfigError("model.features.kind is invalid");
}

RobustClassifier make_model(const ExperimentConfig& cfg, const Dataset& source, double r,
                            const SeedPlan& seeds) {
  if (source.class_count() < 1) throw ConfigError("data: source carries no classes");
  return RobustClassifier::zeros(source.class_count(),
                                 make_features(cfg.model, source.dim(), seeds.features), r,
                                 cfg.model.bounds);
}

DomainClassifier make_domain(const ExperimentConfig& cfg, int dim, const SeedPlan& seeds) {
  return DomainClassifier::make(dim, cfg.model.domain_hidden, cfg.model.domain_activation,
                                cfg.model.bounds, seeds.domain);
}

TrainConfig seeded(TrainConfig t, const SeedPlan& seeds) {
  t.seed = seeds.shuffle;
  return t;
}

Evaluated evaluate(const std::string& name, const RobustClassifier& model,
                   const DomainClassifier* domain, const Dataset& data, int bins) {
  Evaluated e;
  e.name = name;
  e.preds = predict_dataset(model, domain, data, &e.ratios);
  if (data.labeled() && !data.empty())
    e.report = calibration_report(to_prob_matrix(e.preds), data.labels(), bins);
  return e;
}

void write_checkpoint(RunOutputs& out, const ExperimentConfig& cfg, const RobustClassifier& model,
                      const DomainClassifier* domain) {
  json ck{{"tool", kToolVersion}, {"model", model}, {"config", to_json(cfg)}};
  ck["domain"] = domain ? json(*domain) : json(nullptr);
  write_json_file(out, "model.json", ck);
}

json nullable(bool present, double v) { return present ? json(v) : json(nullptr); }

// ---- commands -----------------------------------------------------------------

void cmd_simulate(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  if (cfg.data.kind != DataKind::Gaussian)
    throw ConfigError("data.kind must be \"gaussian\" for simulate");
  auto spec = cfg.data.gaussian;
  spec.seed = seeds.data;
  const auto data = generate_gaussian_shift(spec);
  write_csv(out.stage("source.csv"), data.source);
  write_csv(out.stage("target.csv"), data.target);

  RunWriter w("simulate", cfg, out);
  for (const auto* d : {&data.source, &data.target}) {
    double positives = 0.0, log_ratio = 0.0;
    for (const auto& s : d->samples()) {
      positives += *s.label == 1 ? 1.0 : 0.0;
      log_ratio += data.true_ratio.log_ratio(s.features);
    }
    const double n = static_cast<double>(d->size());
    w.metric({{"split", d == &data.source ? "source" : "target"},
              {"n", d->size()},
              {"positive_rate", positives / n},
              {"mean_log_ratio", log_ratio / n}});
  }

  // Bayes predictor P(y|x) with the exact ratio on the target split.
  Evaluated bayes;
  bayes.name = "bayes";
  for (const auto& s : data.target.samples()) {
    const double p = gaussian_shift_positive_probability(spec, s.features);
    bayes.preds.push_back(Prediction{{1.0 - p, p}, 0.0});
    bayes.ratios.push_back(data.true_ratio(s.features));
  }
  bayes.report = calibration_report(to_prob_matrix(bayes.preds), data.target.labels(), cfg.calibrate.bins);
  w.add(std::move(bayes));
  w.finish(data.target);
}

json epoch_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"dual", r.dual},
          {"bce", r.bce},
          {"source_accuracy", r.source_accuracy},
          {"mean_target_ratio", r.mean_target_ratio}};
}

json erm_json(const ErmRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"accuracy", r.accuracy}};
}

void cmd_train_drl(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  const auto data = load_data(cfg, seeds);
  auto res = train_end_to_end(data.source, data.target.without_labels(),
                              make_model(cfg, data.source, cfg.model.r, seeds),
                              make_domain(cfg, data.source.dim(), seeds), seeded(cfg.train, seeds));
  RunWriter w("train-drl", cfg, out);
  for (const auto& r : res.history) w.metric(epoch_json(r));
  w.add(evaluate("drl", res.model, &res.domain, data.target, cfg.calibrate.bins));
  write_checkpoint(out, cfg, res.model, &res.domain);
  w.finish(data.target);
}

void cmd_train_erm(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  const auto data = load_data(cfg, seeds);
  auto res = train_erm(data.source, make_model(cfg, data.source, 0.0, seeds), seeded(cfg.train, seeds));
  RunWriter w("train-erm", cfg, out);
  for (const auto& r : res.history) w.metric(erm_json(r));
  w.add(evaluate("erm", res.model, nullptr, data.target, cfg.calibrate.bins));
  write_checkpoint(out, cfg, res.model, nullptr);
  w.finish(data.target);
}

void cmd_drst(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  const auto data = load_data(cfg, seeds);
  auto res = run_drst(data.source, data.target, cfg.schedule, seeded(cfg.train, seeds),
                      make_model(cfg, data.source, cfg.model.r, seeds),
                      make_domain(cfg, data.source.dim(), seeds), RatioMode::Learned,
                      cfg.epochs_per_round);
  RunWriter w("drst", cfg, out);
  for (const auto& r : res.rounds)
    w.metric({{"round", r.round},
              {"portion", r.portion},
              {"n_pseudo", r.n_pseudo},
              {"accuracy", nullable(r.evaluated, r.accuracy)},
              {"brier", nullable(r.evaluated, r.brier)},
              {"ece", nullable(r.evaluated, r.ece)}});
  w.add(evaluate("drst", res.final.model, &res.final.domain, data.target, cfg.calibrate.bins));
  write_checkpoint(out, cfg, res.final.model, &res.final.domain);
  w.finish(data.target);
}

}  // namespace

Dataset labeled_subset(const Dataset& source, int per_class, std::uint64_t seed) {
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> taken(static_cast<std::size_t>(source.class_count()), 0);
  std::vector<std::size_t> keep;
  for (auto i : order) {
    const auto y = static_cast<std::size_t>(*source[i].label);
    if (taken[y] < per_class) {
      ++taken[y];
      keep.push_back(i);
    }
  }
  for (std::size_t c = 0; c < taken.size(); ++c)
    if (taken[c] < per_class)
      throw ConfigError("data.labeled_per_class exceeds the " + std::to_string(taken[c]) +
                        " source samples of class " + std::to_string(c));
  std::sort(keep.begin(), keep.end());
  return source.subset(keep, source.name() + "-labeled");
}

namespace {

void cmd_drssl(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  const auto data = load_data(cfg, seeds);
  const auto labeled = labeled_subset(data.source, cfg.data.labeled_per_class, seeds.split);
  SslConfig ssl = cfg.ssl;
  ssl.base = seeded(cfg.train, seeds);
  ssl.augmentation.seed = seeds.augmentation;
  auto res = run_drssl(labeled, data.target, ssl, make_model(cfg, labeled, cfg.model.r, seeds),
                       make_domain(cfg, labeled.dim(), seeds), RatioMode::Learned);
  RunWriter w("drssl", cfg, out);
  for (const auto& r : res.history)
    w.metric({{"epoch", r.epoch},
              {"sup_loss", r.sup_loss},
              {"unsup_loss", r.unsup_loss},
              {"mask_rate", r.mask_rate},
              {"target_acc", nullable(r.evaluated, r.target_acc)}});
  w.add(evaluate("drssl", res.model, &res.domain, data.target, cfg.calibrate.bins));
  write_checkpoint(out, cfg, res.model, &res.domain);
  w.finish(data.target);
}

void cmd_plugin_sim(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  if (cfg.data.kind != DataKind::Gaussian)
    throw ConfigError("data.kind must be \"gaussian\" for plugin-sim");
  auto spec = cfg.data.gaussian;
  spec.seed = seeds.data;
  auto options = cfg.plugin.options;
  options.r = cfg.model.r;
  options.bounds = cfg.model.bounds;
  const auto res = run_plugin_simulation(spec, cfg.plugin.bandwidths, options);
  {
    auto f = out.open("plugin.csv");
    write_plugin_csv(f, res.rows);
  }
  RunWriter w("plugin-sim", cfg, out);
  json rows = json::array();
  for (const auto& r : res.rows) {
    json j{{"h", r.bandwidth},
           {"ll_source", r.ll_source},
           {"ll_target", r.ll_target},
           {"target_logloss", r.target_logloss}};
    w.metric(j);
    rows.push_back(j);
  }
  w.finish(Dataset{}, {{"rows", rows}, {"erm_target_logloss", res.erm_target_logloss}});
}

void cmd_calibrate(const ExperimentConfig& cfg, const SeedPlan& seeds, RunOutputs& out) {
  const auto data = load_data(cfg, seeds);
  if (!data.target.labeled())
    throw ConfigError("calibrate needs labeled target data (data.target_labeled)");
  const auto train = seeded(cfg.train, seeds);
  auto erm = train_erm(data.source, make_model(cfg, data.source, 0.0, seeds), train);
  auto drl = train_end_to_end(data.source, data.target.without_labels(),
                              make_model(cfg, data.source, cfg.model.r, seeds),
                              make_domain(cfg, data.source.dim(), seeds), train);

  // Temperature fit on one part of the labeled target, every model scored on the rest.
  std::vector<std::size_t> order(data.target.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seeds.split);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_fit = static_cast<std::size_t>(
      std::lround(cfg.calibrate.ts_fraction * static_cast<double>(order.size())));
  if (n_fit == 0 || n_fit == order.size())
    throw ConfigError("calibrate.ts_fraction leaves an empty split");
  std::vector<std::size_t> fit_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_fit));
  std::vector<std::size_t> eval_idx(order.begin() + static_cast<std::ptrdiff_t>(n_fit), order.end());
  std::sort(fit_idx.begin(), fit_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());
  const auto fit = data.target.subset(fit_idx, "ts-fit");
  const auto held = data.target.subset(eval_idx, "ts-eval");

  const auto logits = [&](const Dataset& d) {
    Eigen::MatrixXd z(static_cast<Eigen::Index>(d.size()), erm.model.class_count());
    for (std::size_t i = 0; i < d.size(); ++i)
      z.row(static_cast<Eigen::Index>(i)) = erm.model.scores(d[i].features).transpose();
    return z;
  };
  const double temperature = fit_temperature(logits(fit), fit.labels());

  RunWriter w("calibrate", cfg, out);
  for (const auto& r : erm.history) {
    auto j = erm_json(r);
    j["model"] = "source";
    w.metric(j);
  }
  for (const auto& r : drl.history) {
    auto j = epoch_json(r);
    j["model"] = "drl";
    w.metric(j);
  }
  w.metric({{"model", "ts"}, {"temperature", temperature}});

  auto source_eval = evaluate("source", erm.model, nullptr, held, cfg.calibrate.bins);
  source_eval.indices = eval_idx;
  Evaluated ts;
  ts.name = "ts";
  ts.indices = eval_idx;
  const Eigen::MatrixXd probs = softmax_rows(logits(held), temperature);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Prediction p;
    p.probs.assign(probs.row(i).data(), probs.row(i).data() + probs.cols());
    ts.preds.push_back(std::move(p));
    ts.ratios.push_back(1.0);
  }
  ts.report = calibration_report(probs, held.labels(), cfg.calibrate.bins);
  auto drl_eval = evaluate("drl", drl.model, &drl.domain, held, cfg.calibrate.bins);
  drl_eval.indices = eval_idx;
  w.add(std::move(source_eval));
  w.add(std::move(ts));
  w.add(std::move(drl_eval));
  w.finish(data.target, {{"temperature", temperature}, {"ts_fit_count", fit.size()}});
}

}  // namespace

void run_experiment(const std::string& command, const ExperimentConfig& cfg) {
  if (std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end())
    throw ContractViolation("unknown command '" + command + "'");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir is required (config or --out)");
  const auto seeds = SeedPlan::from(cfg.seed);
  RunOutputs out(cfg.output_dir);
  if (command == "simulate") cmd_simulate(cfg, seeds, out);
  else if (command == "train-drl") cmd_train_drl(cfg, seeds, out);
  else if (command == "train-erm") cmd_train_erm(cfg, seeds, out);
  else if (command == "drst") cmd_drst(cfg, seeds, out);
  else if (command == "drssl") cmd_drssl(cfg, seeds, out);
  else if (command == "plugin-sim") cmd_plugin_sim(cfg, seeds, out);
  else cmd_calibrate(cfg, seeds, out);
  out.commit();
}

std::string compare_reports(std::span<const fs::path> paths) {
  if (paths.size() < 2) throw ContractViolation("compare needs at least two reports");
  struct Row {
    std::string name;
    double accuracy, brier, ece, miscls;
    int classes;
  };
  std::vector<Row> rows;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open report");
    try {
      const auto doc = json::parse(in);
      const auto& models = doc.at("models");
      if (!models.is_object() || models.empty())
        throw ParseError(path.string() + ": report has no evaluated models");
      for (const auto& [name, m] : models.items()) {
        CalibrationReport rep = m.get<CalibrationReport>();
        rows.push_back({models.size() == 1 ? path.string() : path.string() + "#" + name, rep.accuracy,
                        rep.brier, rep.ece, rep.miscls_entropy, rep.class_count});
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": malformed report (" + e.what() + ")");
    }
  }
  std::ostringstream out;
  out << "name,accuracy,brier,ece,miscls_entropy,warning\n";
  const int ref = rows.front().classes;
  for (const auto& r : rows) {
    out << r.name << ',' << fmt(r.accuracy) << ',' << fmt(r.brier) << ',' << fmt(r.ece) << ','
        << fmt(r.miscls) << ',';
    if (r.classes != ref)
      out << "class count " << r.classes << " differs from " << ref;
    out << '\n';
  }
  return out.str();
}

}  // namespace drl
