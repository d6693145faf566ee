#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "kepo/objective.hpp"

namespace kepo {

enum class Method { kGrpo, kGkd, kKepo, kKepoKe };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct TrainSchedule {
  int steps = 0;   // explicit step count; 0 derives it from epochs
  int epochs = 5;
  int groups_per_step = 16;
};

struct TrainConfig {
  Method method = Method::kKepo;
  std::uint64_t seed = 1;
  TrainSchedule schedule;
  RolloutConfig rollout;
  ObjectiveConfig objective;
  double learning_rate = 0.05;
  int eval_every = 10;  // checkpoint cadence in steps
  int eval_episodes_per_context = 1;
  double teacher_strength = 10.0;
  int offline_dataset_size = 256;  // teacher samples for the gkd mixture
  InitPriors init;
  bool trace_rollouts = false;

  void validate() const;
};

struct StepRecord {
  int step = 0;
  int group_count = 0;
  double mean_reward = 0.0;
  double reward_positive_group_fraction = 0.0;
  double triggered_fraction = 0.0;
  double discarded_fraction = 0.0;
  int distilled_count = 0;
  double pg_term = 0.0;
  double distill_term = 0.0;
  double ref_kl_term = 0.0;
  // Fraction of this step's injected trajectories that carry a letter token
  // outside the answer span (revealed-answer leakage; measured, not
  // prevented).
  double injected_leak_fraction = 0.0;
};

struct CheckpointRecord {
  int step = 0;  // number of updates applied to the evaluated snapshot
  double id_accuracy = 0.0;
  std::map<std::string, double> ood_accuracy;
  double ood_accuracy_mean = 0.0;
};

struct GroupTraceRecord {
  int step = 0;
  int group = 0;
  int context_index = 0;
  std::vector<int> rewards;
  bool triggered = false;
  int attempts_used = 0;
  int injected_count = 0;
  bool discarded = false;
  std::vector<std::string> provenance;
};

struct RunMetrics {
  std::vector<StepRecord> steps;
  std::vector<CheckpointRecord> checkpoints;
  std::vector<GroupTraceRecord> trace;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainResult {
  RunMetrics metrics;
  PolicySnapshot final_policy;
};

// Seeded end-to-end loop: freeze theta_old, roll out all groups, assemble
// the batch gradient for the selected method, apply plain gradient ascent,
// record metrics, and evaluate ID/OOD checkpoints every eval_every steps
// (plus the initial and final policies). Bit-reproducible given the config.
TrainResult train_run(const TaskSet& ts, const TrainConfig& cfg);

// Greedy (argmax) decoding accuracy per evaluation split; deterministic.
// The rng parameter is reserved for sampling-based decoders and is unused
// under greedy decoding.
std::map<std::string, double> evaluate(
    const PolicySnapshot& snapshot,
    const std::map<std::string, std::vector<Context>>& eval_splits,
    int episodes_per_context, RngStream& rng);

}  // namespace kepo
