// fedhp — experiment driver for the federated hardware-prompt learning
// simulator. Subcommands: gen-data, gen-masks, pretrain, federate, evaluate,
// gradcheck, commcost.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "fedhp/commands.hpp"
#include "fedhp/config.hpp"

namespace {

// Exit codes: 0 ok, 1 generic/invalid input, 2 missing file or I/O,
// 3 config schema violation, 4 numerical failure.
constexpr int kExitGeneric = 1;
constexpr int kExitIo = 2;
constexpr int kExitSchema = 3;
constexpr int kExitNumerical = 4;

void print_error(const char* kind, const std::string& message) {
  nlohmann::json j;
  j["error"]["kind"] = kind;
  j["error"]["message"] = message;
  std::cerr << j.dump() << "\n";
}

struct CommonOptions {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algorithm;
};

fedhp::cli::ExperimentConfig load_config(const CommonOptions& opt) {
  auto config = fedhp::cli::ExperimentConfig::load(opt.config_path);
  if (opt.seed) config.seed = *opt.seed;
  if (opt.algorithm) {
    config.training.algorithm =
        fedhp::federation::algorithm_from_name(*opt.algorithm);
    config.validate();
  }
  if (!opt.out.empty()) config.output = opt.out;
  return config;
}

void add_common(CLI::App* cmd, CommonOptions& opt, bool with_algorithm = true) {
  cmd->add_option("--config", opt.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--out", opt.out, "output directory (overrides config)");
  cmd->add_option("--seed", opt.seed, "root seed (overrides config)");
  if (with_algorithm)
    cmd->add_option("--algorithm", opt.algorithm,
                    "algorithm (overrides config): fedhp fedavg fedprox "
                    "scaffold joint local-only");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated hardware-prompt learning simulator"};
  app.require_subcommand(1);

  CommonOptions gen_data_opt, gen_masks_opt, pretrain_opt, federate_opt,
      gradcheck_opt, commcost_opt;
  std::string eval_run_dir;
  std::size_t eval_trials = 1;

  add_common(app.add_subcommand("gen-data", "write the dataset cubes"),
             gen_data_opt, false);
  add_common(app.add_subcommand("gen-masks", "write the scenario masks"),
             gen_masks_opt, false);
  add_common(app.add_subcommand("pretrain", "pre-train client backbones"),
             pretrain_opt, false);
  add_common(app.add_subcommand("federate", "run the federated experiment"),
             federate_opt);
  auto* eval_cmd =
      app.add_subcommand("evaluate", "re-evaluate a finished run");
  eval_cmd->add_option("--checkpoint", eval_run_dir,
                       "run directory produced by federate")
      ->required();
  eval_cmd->add_option("--trials", eval_trials, "number of evaluation trials");
  add_common(app.add_subcommand("gradcheck", "gradient fidelity report"),
             gradcheck_opt, false);
  add_common(app.add_subcommand("commcost", "per-round communication table"),
             commcost_opt, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen-data")) {
      const auto config = load_config(gen_data_opt);
      fedhp::cli::cmd_gen_data(config, config.output);
    } else if (app.got_subcommand("gen-masks")) {
      const auto config = load_config(gen_masks_opt);
      fedhp::cli::cmd_gen_masks(config, config.output);
    } else if (app.got_subcommand("pretrain")) {
      const auto config = load_config(pretrain_opt);
      fedhp::cli::cmd_pretrain(config, config.output);
    } else if (app.got_subcommand("federate")) {
      const auto config = load_config(federate_opt);
      fedhp::cli::cmd_federate(config, config.output);
    } else if (app.got_subcommand("evaluate")) {
      fedhp::cli::cmd_evaluate(eval_run_dir, eval_trials, std::cout);
    } else if (app.got_subcommand("gradcheck")) {
      const auto config = load_config(gradcheck_opt);
      fedhp::cli::cmd_gradcheck(config, std::cout);
    } else if (app.got_subcommand("commcost")) {
      const auto config = load_config(commcost_opt);
      fedhp::cli::cmd_commcost(config, std::cout);
    }
  } catch (const fedhp::ConfigError& e) {
    print_error("schema", e.what());
    return kExitSchema;
  } catch (const fedhp::IoError& e) {
    print_error("io", e.what());
    return kExitIo;
  } catch (const fedhp::NumericalError& e) {
    print_error("numerical", e.what());
    return kExitNumerical;
  } catch (const fedhp::InvalidInput& e) {
    print_error("invalid_input", e.what());
    return kExitGeneric;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitGeneric;
  }
  return 0;
}
