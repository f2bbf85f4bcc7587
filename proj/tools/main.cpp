// Experiment driver: corpus generation, stratified splitting, continual
// debiasing runs, and report aggregation.

#include <cstdio>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clf/experiment.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string seeds;
  int parallel = -1;
  std::string ablate;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config_path, "experiment configuration (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--out", flags.out_dir, "output directory (overrides the config)");
  cmd->add_option("--seeds", flags.seeds, "comma-separated seed list (overrides the config)");
  cmd->add_option("--parallel", flags.parallel, "worker count for the sweep (0 = all cores)");
  cmd->add_option("--ablate", flags.ablate, "disable a component: bir | replay | none")
      ->check(CLI::IsMember({"bir", "replay", "none"}));
}

clf::ExperimentConfig load_config(const CommonFlags& flags) {
  clf::ExperimentConfig config = clf::ExperimentConfig::from_json_file(flags.config_path);
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (!flags.seeds.empty()) {
    config.seeds.clear();
    std::string token;
    for (char c : flags.seeds + ",") {
      if (c == ',') {
        if (!token.empty()) {
          try {
            config.seeds.push_back(std::stoull(token));
          } catch (const std::exception&) {
            throw clf::ConfigError("--seeds: '" + token + "' is not an integer");
          }
        }
        token.clear();
      } else {
        token += c;
      }
    }
    if (config.seeds.empty()) throw clf::ConfigError("--seeds produced an empty list");
  }
  if (flags.parallel >= 0) config.parallel = flags.parallel;
  if (!flags.ablate.empty()) config.ablate = flags.ablate;
  config.validate();
  return config;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const clf::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const clf::InputError*>(&e)) return "input";
  if (dynamic_cast<const clf::UsageError*>(&e)) return "usage";
  if (dynamic_cast<const clf::IoError*>(&e)) return "io";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual debiasing experiment driver"};
  app.require_subcommand(1);

  CommonFlags gen_flags, split_flags, run_flags;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus (train/validation/test)");
  add_common(gen, gen_flags, true);
  CLI::App* split = app.add_subcommand("split", "stratified split into attribute sub-datasets");
  add_common(split, split_flags, true);
  CLI::App* run = app.add_subcommand("run", "train and evaluate over the configured sequences");
  add_common(run, run_flags, true);

  std::string report_in, report_out, report_bc = "fped";
  CLI::App* report = app.add_subcommand("report", "aggregate run results into summary tables");
  report->add_option("results", report_in, "directory of run result files")->required();
  report->add_option("--out", report_out, "output directory for summary.csv / report.json")
      ->required();
  report->add_option("--bc-metric", report_bc, "bias table for BC: fped | overall_fpr")
      ->check(CLI::IsMember({"fped", "overall_fpr"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      clf::cmd_gen(load_config(gen_flags));
    } else if (split->parsed()) {
      clf::cmd_split(load_config(split_flags));
    } else if (run->parsed()) {
      clf::cmd_run(load_config(run_flags));
    } else if (report->parsed()) {
      clf::cmd_report(report_in, report_out,
                      report_bc == "fped" ? clf::BcMetric::Fped : clf::BcMetric::OverallFpr);
    }
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = {{"type", error_kind(e)}, {"message", e.what()}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  }
  return 0;
}
