#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "sectune/cli.hpp"

using namespace sectune::cli;

int main(int argc, char** argv) {
  CLI::App app{"sectune-lab: mine, train and evaluate security instruction tuning on a toy language"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  app.add_option("--config", config, "JSON run config")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed (overrides config seed)");
  app.add_option("--out", out, "output directory (overrides config out)");
  app.add_option("--set", sets, "override a config field: section.key=value")->take_all();

  auto* synth = app.add_subcommand("synth", "write the synthetic corpus, datasets, scenarios and probes");
  auto* mine = app.add_subcommand("mine", "mine security triples from the commit corpus");
  auto* train = app.add_subcommand("train", "train standard_only, safecoder or sven");
  std::string mode;
  train->add_option("--mode", mode, "train.mode override")->check(CLI::IsMember({"standard_only", "safecoder", "sven"}));
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the scenarios and the utility probe");
  std::vector<std::string> variants;
  eval->add_option("--variant", variants, "prompt variant(s): func_only, sec_generic, sec_specific");
  auto* sweep = app.add_subcommand("sweep-sven", "SVEN over kl weights 2^n / 10");
  std::vector<int> sweep_n;
  sweep->add_option("--sweep-n", sweep_n, "exponents n to run (default 1..8)");
  auto* study = app.add_subcommand("study", "pretrain, then compare none / standard_only / safecoder");
  auto* report = app.add_subcommand("report", "render reports as markdown tables");
  std::vector<std::string> report_inputs;
  report->add_option("inputs", report_inputs, "eval, study, sweep or mine report files");

  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<std::string> overrides = sets;
    auto quoted = [](const std::string& s) { return "\"" + s + "\""; };
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (!out.empty()) overrides.push_back("out=" + quoted(std::filesystem::absolute(out).string()));
    if (!mode.empty()) overrides.push_back("train.mode=" + quoted(mode));
    if (!variants.empty()) {
      std::string list = "[";
      for (std::size_t i = 0; i < variants.size(); ++i) list += (i ? "," : "") + quoted(variants[i]);
      overrides.push_back("eval.variants=" + list + "]");
    }
    if (!sweep_n.empty()) {
      std::string list = "[";
      for (std::size_t i = 0; i < sweep_n.size(); ++i) list += (i ? "," : "") + std::to_string(sweep_n[i]);
      overrides.push_back("sweep.n=" + list + "]");
    }
    if (!report_inputs.empty()) {
      std::string list = "[";
      for (std::size_t i = 0; i < report_inputs.size(); ++i) {
        list += (i ? "," : "") + quoted(std::filesystem::absolute(report_inputs[i]).string());
      }
      overrides.push_back("report.inputs=" + list + "]");
    }
    const RunConfig cfg = RunConfig::load(config, overrides);

    if (*synth) cmd_synth(cfg, std::cout);
    else if (*mine) cmd_mine(cfg, std::cout);
    else if (*train) cmd_train(cfg, std::cout);
    else if (*eval) cmd_eval(cfg, std::cout);
    else if (*sweep) cmd_sweep_sven(cfg, std::cout);
    else if (*study) cmd_study(cfg, std::cout);
    else if (*report) cmd_report(cfg, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
