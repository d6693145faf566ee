#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "kepo/trainer.hpp"

namespace kepo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TaskParams {
  std::uint64_t seed = 1;
  int n_train = 16;
  int n_eval_per_split = 64;
  int n_ood_splits = 3;
  bool cliff = false;
  bool misleading = false;
  int nuisance_dim = 4;

  bool operator==(const TaskParams&) const = default;
};

struct ExperimentConfig {
  TaskParams task;
  TrainConfig train;
  std::string output_dir = "out";
};

// Strict parse: unknown keys are rejected with their full path, every field
// is validated, and method-dependent fields (hint_enabled, distill_alpha)
// are forced to their resolved values before validation. The resolved echo
// of a config is itself a valid config reproducing the run.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json resolved_config_json(const ExperimentConfig& cfg);

TaskSet task_set_from_params(const TaskParams& p);

// Executes one run and writes metrics.jsonl, checkpoints.csv, weights.json,
// tasks.jsonl, resolved_config.json (and rollout_trace.jsonl when tracing)
// into the output directory. Files are written to a temporary name and
// renamed on success. Throws on validation or divergence failure.
TrainResult run_experiment(const ExperimentConfig& cfg);

struct CompareOptions {
  std::vector<std::string> config_paths;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "compare_out";
};

// Runs every (config, seed) pair and merges per-checkpoint rows into
// summary.csv plus per-method mean curves in summary_mean.csv. Configs must
// share the task block (identical data) and may differ only in method and
// gating fields.
int compare_experiments(const CompareOptions& opts);

// Loads a weight file and a task-set file and prints per-split accuracy.
int evaluate_weights(const std::string& weights_path,
                     const std::string& taskset_path, int episodes_per_context);

}  // namespace kepo
