#include "drl/drl.h"

#include <cstring>
#include <fstream>
#include <new>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "drl/calibration.hpp"
#include "drl/errors.hpp"
#include "drl/experiment.hpp"
#include "drl/robust.hpp"

struct drl_model {
  drl::RobustClassifier model;
  std::optional<drl::DomainClassifier> domain;
};

namespace {

thread_local std::string last_error;

drl_status fail(drl_status code, const std::string& message) {
  last_error = message;
  return code;
}

// Runs f and maps library exceptions onto status codes.
template <class F>
drl_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return DRL_OK;
  } catch (const drl::ConfigError& e) {
    return fail(DRL_ERR_CONFIG, e.what());
  } catch (const drl::DivergenceError& e) {
    return fail(DRL_ERR_DIVERGENCE, e.what());
  } catch (const drl::NumericError& e) {
    return fail(DRL_ERR_DIVERGENCE, e.what());
  } catch (const drl::ContractViolation& e) {
    return fail(DRL_ERR_CONTRACT, e.what());
  } catch (const drl::ParseError& e) {
    return fail(DRL_ERR_PARSE, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(DRL_ERR_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(DRL_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(DRL_ERR_RUNTIME, e.what());
  }
}

bool known_command(const char* command) {
  for (const auto& c : drl::kCommands)
    if (c == command) return true;
  return false;
}

Eigen::MatrixXd rows(const double* data, size_t n, size_t classes) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < classes; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i * classes + j];
  return m;
}

drl_status check_metric_args(const double* probs, const int* labels, size_t n, size_t classes,
                             const void* out) {
  if (!probs || !labels || !out) return fail(DRL_ERR_CONTRACT, "null argument");
  if (n == 0 || classes == 0) return fail(DRL_ERR_CONTRACT, "empty input");
  return DRL_OK;
}

}  // namespace

extern "C" {

const char* drl_version(void) { return drl::kToolVersion; }

const char* drl_last_error(void) { return last_error.c_str(); }

const char* const* drl_commands(void) {
  static const std::vector<const char*> names = [] {
    std::vector<const char*> v;
    for (const auto& c : drl::kCommands) v.push_back(c.c_str());
    v.push_back(nullptr);
    return v;
  }();
  return names.data();
}

drl_status drl_validate_config(const char* command, const char* config_json) {
  if (!command || !known_command(command))
    return fail(DRL_ERR_USAGE, std::string("unknown command '") + (command ? command : "") + "'");
  if (!config_json) return fail(DRL_ERR_CONTRACT, "null config");
  return guarded([&] { drl::parse_config_text(config_json); });
}

drl_status drl_run(const char* command, const char* config_json, const char* out_dir,
                   const uint64_t* seed) {
  if (!command || !known_command(command))
    return fail(DRL_ERR_USAGE, std::string("unknown command '") + (command ? command : "") + "'");
  if (!config_json) return fail(DRL_ERR_CONTRACT, "null config");
  return guarded([&] {
    auto cfg = drl::parse_config_text(config_json);
    drl::RunOverrides o;
    if (out_dir) o.output_dir = out_dir;
    if (seed) o.seed = *seed;
    drl::apply_overrides(cfg, o);
    drl::run_experiment(command, cfg);
  });
}

drl_status drl_compare(const char* const* report_paths, size_t count, char** csv_out) {
  if (!csv_out) return fail(DRL_ERR_CONTRACT, "null output pointer");
  *csv_out = nullptr;
  if (count < 2) return fail(DRL_ERR_USAGE, "compare needs at least two reports");
  if (!report_paths) return fail(DRL_ERR_CONTRACT, "null report list");
  return guarded([&] {
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < count; ++i) {
      if (!report_paths[i]) throw drl::ContractViolation("null report path");
      paths.emplace_back(report_paths[i]);
    }
    const auto table = drl::compare_reports(paths);
    char* buf = new char[table.size() + 1];
    std::memcpy(buf, table.c_str(), table.size() + 1);
    *csv_out = buf;
  });
}

void drl_string_free(char* s) { delete[] s; }

drl_status drl_model_load(const char* path, drl_model** out) {
  if (!path || !out) return fail(DRL_ERR_CONTRACT, "null argument");
  *out = nullptr;
  return guarded([&] {
    std::ifstream in(path);
    if (!in) throw drl::IoError(std::string("cannot open ") + path);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw drl::ParseError(std::string(path) + ": " + e.what());
    }
    auto h = std::make_unique<drl_model>();
    h->model = doc.at("model").get<drl::RobustClassifier>();
    if (doc.contains("domain") && !doc.at("domain").is_null())
      h->domain = doc.at("domain").get<drl::DomainClassifier>();
    *out = h.release();
  });
}

void drl_model_free(drl_model* model) { delete model; }

drl_status drl_model_shape(const drl_model* model, size_t* input_dim, size_t* class_count) {
  if (!model) return fail(DRL_ERR_CONTRACT, "null model");
  if (input_dim) *input_dim = static_cast<size_t>(model->model.features().in_dim());
  if (class_count) *class_count = static_cast<size_t>(model->model.class_count());
  last_error.clear();
  return DRL_OK;
}

drl_status drl_model_predict(const drl_model* model, const double* x, size_t input_dim,
                             double* probs, size_t class_count, double* ratio) {
  if (!model || !x || !probs) return fail(DRL_ERR_CONTRACT, "null argument");
  if (input_dim != static_cast<size_t>(model->model.features().in_dim()))
    return fail(DRL_ERR_CONTRACT, "input dimension does not match the model");
  if (class_count != static_cast<size_t>(model->model.class_count()))
    return fail(DRL_ERR_CONTRACT, "class count does not match the model");
  return guarded([&] {
    const Eigen::Map<const Eigen::VectorXd> v(x, static_cast<Eigen::Index>(input_dim));
    const Eigen::VectorXd xv = v;
    const double R = model->domain ? drl::domain_forward(*model->domain, xv).ratio : 1.0;
    const auto p = drl::predict(model->model, xv, R, drl::PredictMode::test());
    for (size_t j = 0; j < class_count; ++j) probs[j] = p.probs[j];
    if (ratio) *ratio = R;
  });
}

drl_status drl_brier(const double* probs, const int* labels, size_t n, size_t classes, double* out) {
  if (auto s = check_metric_args(probs, labels, n, classes, out); s != DRL_OK) return s;
  return guarded([&] { *out = drl::brier(rows(probs, n, classes), {labels, n}); });
}

drl_status drl_ece(const double* probs, const int* labels, size_t n, size_t classes, int bins,
                   double* out) {
  if (auto s = check_metric_args(probs, labels, n, classes, out); s != DRL_OK) return s;
  return guarded([&] { *out = drl::ece(rows(probs, n, classes), {labels, n}, bins).value; });
}

drl_status drl_miscls_entropy(const double* probs, const int* labels, size_t n, size_t classes,
                              double* out, int* all_correct) {
  if (auto s = check_metric_args(probs, labels, n, classes, out); s != DRL_OK) return s;
  return guarded([&] {
    const auto me = drl::miscls_entropy(rows(probs, n, classes), {labels, n});
    *out = me.value;
    if (all_correct) *all_correct = me.all_correct ? 1 : 0;
  });
}

drl_status drl_fit_temperature(const double* logits, const int* labels, size_t n, size_t classes,
                               double* temperature) {
  if (auto s = check_metric_args(logits, labels, n, classes, temperature); s != DRL_OK) return s;
  return guarded([&] { *temperature = drl::fit_temperature(rows(logits, n, classes), {labels, n}); });
}

}  // extern "C"
