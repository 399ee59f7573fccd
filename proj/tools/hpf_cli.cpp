#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "hpf/error.hpp"
#include "hpf/experiment.hpp"
#include "hpf/io.hpp"

// Exit codes: 0 success, 1 certificate violation, 2 invalid configuration,
// 3 any other runtime failure.
int main(int argc, char** argv) {
  CLI::App app{"Hierarchical partitioning forecaster experiments"};
  std::string config_path;
  std::string mode;
  std::uint64_t seed = 0;
  std::string out;
  bool strict = false;
  bool global_clock = false;
  app.add_option("--config", config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  app.add_option("--mode", mode, "regret-certify, switching-certify, nowcast or synth-data");
  auto* seed_opt = app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output directory");
  app.add_flag("--strict-paper-indexing", strict, "FTAL weights from A_{t-1}, b_{t-1}");
  app.add_flag("--global-switch-clock", global_clock, "switching rates from the global round counter");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  hpf::ExperimentConfig config;
  try {
    hpf::Json doc = config_path.empty() ? hpf::Json::object() : hpf::read_json_file(config_path);
    if (!doc.is_object()) throw hpf::InvalidArgument("config must be a JSON object");
    if (!mode.empty()) doc["mode"] = mode;
    config = hpf::config_from_json(doc);
    if (*seed_opt) config.seed = seed;
    if (!out.empty()) config.out = out;
    if (strict) config.strict_paper_indexing = true;
    if (global_clock) config.global_switch_clock = true;
  } catch (const std::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  }

  try {
    const hpf::ExperimentResult result = hpf::run_experiment(config);
    for (const std::string& line : result.messages) (result.ok ? std::cout : std::cerr) << line << '\n';
    return result.ok ? 0 : 1;
  } catch (const hpf::InvalidArgument& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const hpf::ResourceLimit& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const hpf::ContractViolation& e) {
    std::cerr << "violation: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
