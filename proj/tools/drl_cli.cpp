#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "drl/drl.h"

namespace {

constexpr int kUsage = DRL_ERR_USAGE;

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int report(drl_status status) {
  if (status != DRL_OK) std::cerr << "drl: " << drl_last_error() << '\n';
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust learning experiments"};
  app.set_version_flag("--version", std::string(drl_version()));
  app.require_subcommand(1);

  struct RunArgs {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
  };
  std::vector<std::pair<CLI::App*, std::string>> runs;
  RunArgs args;
  for (const char* const* c = drl_commands(); *c; ++c) {
    auto* sub = app.add_subcommand(*c, std::string("run ") + *c);
    sub->add_option("-c,--config", args.config, "JSON config file")->required();
    sub->add_option("-o,--out", args.out, "output directory (overrides output_dir)");
    sub->add_option("-s,--seed", args.seed, "top-level seed (overrides seed)");
    runs.emplace_back(sub, *c);
  }

  std::string validate_command, validate_config;
  auto* validate = app.add_subcommand("validate", "check a config without running it");
  validate->add_option("command", validate_command, "command the config is meant for")->required();
  validate->add_option("-c,--config", validate_config, "JSON config file")->required();

  std::vector<std::string> reports;
  auto* compare = app.add_subcommand("compare", "tabulate report.json files as CSV");
  compare->add_option("reports", reports, "report.json paths (at least two)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (compare->parsed()) {
    if (reports.size() < 2) {
      std::cerr << "drl: compare needs at least two reports\n";
      return kUsage;
    }
    std::vector<const char*> paths;
    for (const auto& r : reports) paths.push_back(r.c_str());
    char* csv = nullptr;
    const auto status = drl_compare(paths.data(), paths.size(), &csv);
    if (status == DRL_OK) {
      std::cout << csv;
      drl_string_free(csv);
    }
    return report(status);
  }

  const std::string& config_path = validate->parsed() ? validate_config : args.config;
  const auto text = read_file(config_path);
  if (!text) {
    std::cerr << "drl: cannot read config " << config_path << '\n';
    return DRL_ERR_CONFIG;
  }

  if (validate->parsed()) {
    const auto status = drl_validate_config(validate_command.c_str(), text->c_str());
    if (status == DRL_OK) std::cout << "ok\n";
    return report(status);
  }

  for (const auto& [sub, name] : runs) {
    if (!sub->parsed()) continue;
    const std::uint64_t seed = args.seed.value_or(0);
    return report(drl_run(name.c_str(), text->c_str(), args.out.empty() ? nullptr : args.out.c_str(),
                          args.seed ? &seed : nullptr));
  }
  return kUsage;
}
