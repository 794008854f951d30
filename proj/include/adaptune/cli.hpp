#pragma once

// Command-line front end. Flags override values from the --config JSON file.
// Exit codes: 0 success, 2 configuration, 3 data, 4 numeric failure.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "adaptune/error.hpp"
#include "adaptune/pipeline.hpp"

namespace adaptune::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

inline int exit_code(const Error& e) {
  const std::string& k = e.kind();
  if (k == "config" || k == "dimension" || k == "index" || k == "step-index") return kExitConfig;
  if (k == "numeric" || k == "degeneracy") return kExitNumeric;
  return kExitData;
}

struct Flags {
  std::string config;
  std::string manifest;
  std::optional<std::string> task;
  std::optional<std::string> variant;
  std::optional<std::size_t> rank;
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

inline void add_run_flags(CLI::App* app, Flags& f, bool training) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "Run seed (required here or in the config)");
  app->add_option("--threads", f.threads, "Worker threads");
  app->add_option("--out", f.out, "Output directory");
  if (!training) return;
  app->add_option("--manifest", f.manifest, "JSONL manifest");
  app->add_option("--task", f.task, "detect or severity");
  app->add_option("--variant", f.variant, "lora, dora, frozen-svm or baseline-svm");
  app->add_option("--rank", f.rank, "Adapter rank");
  app->add_option("--lr", f.lr, "Adam learning rate");
  app->add_option("--epochs", f.epochs, "Training epochs");
}

inline pipeline::RunConfig resolve(const Flags& f) {
  pipeline::RunConfig c = f.config.empty() ? pipeline::RunConfig{} : pipeline::load_run_config(f.config);
  if (!f.manifest.empty()) c.manifest = f.manifest;
  if (f.task) c.task = data::parse_task(*f.task);
  if (f.variant) {
    c.variant = pipeline::parse_variant(*f.variant);
    if (pipeline::is_peft(c.variant)) {
      c.adapter.variant = c.variant == pipeline::Variant::lora ? peft::Variant::lora : peft::Variant::dora;
    }
  }
  if (f.rank) c.adapter.rank = *f.rank;
  if (f.lr) c.train.learning_rate = *f.lr;
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.seed) c.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (f.out) c.out = *f.out;
  return c;
}

/// Runs one command; `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"LoRA/DoRA adapter fine-tuning of a compact audio encoder, with SVM baselines", "adaptune"};
  app.require_subcommand(1);
  Flags synth_f, features_f, train_f, cv_f;
  add_run_flags(app.add_subcommand("synth", "Generate the synthetic severity-graded corpus"), synth_f, false);
  add_run_flags(app.add_subcommand("features", "Write functional features of every manifest entry as CSV"), features_f, true);
  add_run_flags(app.add_subcommand("train", "Train on the train split and evaluate on the eval split"), train_f, true);
  add_run_flags(app.add_subcommand("cv", "k-fold cross-validation over train+dev with macro-F1 selection"), cv_f, true);

  CLI::App* merge = app.add_subcommand("merge", "Fold adapters into the base weights");
  std::string adapters_path, base_path, merge_out = ".";
  std::uint64_t merge_seed = 0;
  merge->add_option("adapters", adapters_path, "Adapter checkpoint")->required();
  merge->add_option("base", base_path, "Base encoder checkpoint")->required();
  merge->add_option("--out", merge_out, "Output directory");
  merge->add_option("--seed", merge_seed, "Seed of the random probe inputs");

  CLI::App* report = app.add_subcommand("report", "Tabulate accuracy and macro-F1 of metrics files");
  std::vector<std::string> metric_files;
  std::string report_out;
  report->add_option("metrics", metric_files, "metrics.json files")->required();
  report->add_option("--out", report_out, "Directory for report.csv");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "synth") {
      pipeline::cmd_synth(resolve(synth_f), out);
    } else if (cmd == "features") {
      pipeline::cmd_features(resolve(features_f), out);
    } else if (cmd == "train") {
      pipeline::cmd_train(resolve(train_f), out);
    } else if (cmd == "cv") {
      pipeline::cmd_cv(resolve(cv_f), out);
    } else if (cmd == "merge") {
      pipeline::cmd_merge(adapters_path, base_path, merge_out, merge_seed, out);
    } else if (cmd == "report") {
      std::vector<std::filesystem::path> paths(metric_files.begin(), metric_files.end());
      const std::string csv = pipeline::cmd_report(paths, report_out, out);
      out << "\n" << csv;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}

}  // namespace adaptune::cli
