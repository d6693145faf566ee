#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kepo/tokens.hpp"

namespace kepo {

// The answer letter is a deterministic function of the two cue bits and
// never of the nuisance features; out-of-distribution splits shift only the
// nuisance distribution.
enum class AnswerRule { kXorAB };

std::string answer_rule_name(AnswerRule rule);
AnswerRule parse_answer_rule(const std::string& name);

struct DomainTag {
  bool ood = false;
  int split = 0;  // 1-based OOD split index, 0 for ID

  std::string str() const;
  static DomainTag parse(const std::string& s);
  bool operator==(const DomainTag&) const = default;
};

// One task instance. Hint and revealed answer are both absent in standard
// rollouts and both present in hint-aware rollouts.
struct Context {
  std::string family = "mcq";
  int index = 0;
  bool cue0 = false;
  bool cue1 = false;
  Eigen::VectorXd nuisance;
  DomainTag domain;
  AnswerRule rule = AnswerRule::kXorAB;
  bool cliff = false;  // cliff tasks demand at least one filler for format

  std::optional<int> hint;      // token id with hint role
  std::optional<int> revealed;  // answer letter index 0..3

  int cue_config() const { return (cue0 ? 1 : 0) + (cue1 ? 2 : 0); }
  Context with_hint(int hint_token, int answer_letter) const;
  bool operator==(const Context&) const;
};

struct RewardBreakdown {
  int format = 0;
  int accuracy = 0;
  int total = 0;
  bool operator==(const RewardBreakdown&) const = default;
};

struct TaskSet {
  std::vector<Context> train_contexts;  // all ID
  std::map<std::string, std::vector<Context>> eval_splits;  // keyed by domain tag
  AnswerRule answer_rule = AnswerRule::kXorAB;
  bool cliff_mode = false;
  bool misleading = false;  // decoy fillers steer the teacher off the rule
  int nuisance_dim = 4;
  int n_ood_splits = 0;
};

struct TaskSetOptions {
  int nuisance_dim = 4;
  bool misleading = false;
};

// There are only this many distinct nuisance-shift families.
inline constexpr int kMaxOodSplits = 7;

TaskSet make_task_set(std::uint64_t seed, int n_train, int n_eval_per_split,
                      int n_ood_splits, bool cliff_mode,
                      const TaskSetOptions& opt = {});

int correct_letter(const Context& ctx);

// Total function over arbitrary in-vocabulary sequences: malformed input
// scores zero, it does not error. format=1 requires the full tag grammar
// (with at least one filler on cliff tasks); accuracy=1 requires a single
// well-formed answer-tag pair around the correct letter, whether or not
// the think section parses.
RewardBreakdown score_trajectory(const Context& ctx, std::span<const int> tokens);

// Line-delimited record file, one context per record plus a header record.
void save_task_set(const TaskSet& ts, const std::string& path);
TaskSet load_task_set(const std::string& path);

// Monte-Carlo diagnostics under a policy that draws tokens uniformly at
// random, cycling over the training contexts. Used by the cliff checks.
double uniform_random_mean_reward(const TaskSet& ts, int episodes,
                                  std::uint64_t seed);
double uniform_random_positive_rate(const TaskSet& ts, int episodes,
                                    std::uint64_t seed);

}  // namespace kepo
