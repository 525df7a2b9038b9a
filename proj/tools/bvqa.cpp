// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The bvqa Authors

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "bvqa/commands.hpp"

namespace {

const std::map<std::string, std::string> kDescriptions = {
    {"synth", "write a synthetic dataset: PPM frames plus manifest"},
    {"extract", "patch every frame and write one feature file per video"},
    {"pretrain", "pretrain the spatial module on per-frame image scores"},
    {"finetune", "train spatial, temporal and head end to end on videos"},
    {"predict", "score every video of a manifest with a trained model"},
    {"evaluate", "k random splits or a cross-dataset run; writes the report"},
    {"ablate", "spatial x temporal (x pretraining) grid of evaluations"},
    {"gradcheck", "compare analytic gradients against finite differences"},
    {"benchmark", "per-stage wall clock at a given resolution"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind video quality assessment with recurrent spatial and temporal pooling"};
  app.require_subcommand(1);
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::map<std::string, CLI::Option*>> options;
  std::map<std::string, std::string> config_files;
  for (const auto& [name, specs] : bvqa::command_options()) {
    auto* sub = app.add_subcommand(name, kDescriptions.at(name));
    sub->add_option("--config", config_files[name], "key = value file; explicit flags override it");
    for (const auto& spec : specs) {
      auto& slot = values[name][spec.key];
      const std::string flag = bvqa::flag_name(spec.key);
      std::string help = spec.help;
      if (!spec.default_value.empty() && !spec.is_flag) help += " [default: " + spec.default_value + "]";
      if (spec.required) help += " (required)";
      options[name][spec.key] = spec.is_flag ? sub->add_flag(flag, help) : sub->add_option(flag, slot, help);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  for (auto* sub : app.get_subcommands()) {
    const std::string name = sub->get_name();
    bvqa::KeyValues given;
    if (!config_files[name].empty()) given["config"] = config_files[name];
    for (const auto& [key, opt] : options[name]) {
      if (opt->count() == 0) continue;
      given[key] = opt->get_expected_min() == 0 ? "1" : values[name][key];
    }
    try {
      return bvqa::run_command(name, given, std::cout, std::cerr);
    } catch (const bvqa::Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return e.exit_code();
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return static_cast<int>(bvqa::ErrorKind::kData);
    }
  }
  return 1;
}
