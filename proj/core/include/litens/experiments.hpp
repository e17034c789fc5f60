#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "litens/datasets.hpp"
#include "litens/training.hpp"

namespace litens {

// One command invocation: which experiment, its data, the ensemble knobs,
// and the evaluation settings. Sentinels (0, negative lambda, "auto", empty
// lists) mean "use the per-experiment default" and are resolved by
// apply_experiment_defaults; hidden widths grow into full layer_sizes only
// once the input dimension is known (resolve_ensemble).
struct ExperimentConfig {
  std::string experiment = "case1";  // case1 | case2 | case3 | toy8d | csv
  int n = 0;
  std::uint64_t seed = 1;
  std::string csv_path;
  bool baseline = false;  // M = 1, lambda = 0

  int M = 0;
  double lambda = -1.0;
  double eps_stab = 1e-6;
  double accuracy_epsilon = 0.05;
  double learning_rate = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 0;
  int epochs = 0;
  std::vector<int> hidden;        // hidden widths only
  std::string activation = "auto";

  int n_eval = 10000;
  int grid_resolution = 100;
  int projection_samples = 256;
  std::string models_dir;  // eval: directory holding model_*.json
  std::string out_dir;     // empty: LITENS_OUT_DIR, then ./litens-out
};

void apply_experiment_defaults(ExperimentConfig& config);

// Full EnsembleConfig for a known input dimension. Call after
// apply_experiment_defaults.
EnsembleConfig resolve_ensemble(const ExperimentConfig& config, int input_dim);

// Stable hex digest of every semantically relevant field; names the output
// directory so reruns land on the same path.
std::string config_hash(const ExperimentConfig& config);

std::filesystem::path resolve_out_dir(const ExperimentConfig& config,
                                      std::string_view command);

// Builtin rules and domain for the config; throws UsageError in csv mode.
RuleCase experiment_case(const ExperimentConfig& config);

// Generates the builtin dataset or loads the CSV.
Dataset experiment_dataset(const ExperimentConfig& config);

// Writes dataset.csv + provenance sidecar; logs kept/rejected counts.
void cmd_gen_data(const ExperimentConfig& config, std::ostream& log);

// Trains, then writes model_<m>.json, history.csv (the oversize diagnostic
// lands in the history notes), and the resolved config.
void cmd_train(const ExperimentConfig& config, std::ostream& log);

// Loads models from models_dir, evaluates against the experiment's rules,
// writes report.json, report.csv, and one grid CSV per model.
void cmd_eval(const ExperimentConfig& config, std::ostream& log);

struct ReproduceOptions {
  std::string profile = "full";  // full | ci (reduced widths)
  std::string out_root;
};

// End-to-end runs over the shipped seeds producing summary.md plus all
// artifacts. target: fig3 | fig5 | table1. Output bytes depend only on
// target and profile.
void cmd_reproduce(std::string_view target, const ReproduceOptions& options,
                   std::ostream& log);

}  // namespace litens
