#pragma once

#include <optional>
#include <vector>

#include "kepo/policy.hpp"
#include "kepo/rng.hpp"

namespace kepo {

struct RolloutConfig {
  int group_size = 8;   // G
  int budget = 8;       // rejection budget B per injected slot
  int injected = 1;     // m, accepted trajectories per triggered group
  bool hint_enabled = true;

  void validate() const;
};

// One group of trajectories sharing a context. A triggered group whose
// rejection sampling never succeeded is discarded: it keeps its bookkeeping
// but carries no trajectories and contributes nothing to the gradient.
struct RolloutGroup {
  Context context;  // hint-free context of the group
  std::vector<Trajectory> trajectories;
  bool triggered = false;
  std::optional<int> hint_used;
  int injected_count = 0;
  int attempts_used = 0;

  bool discarded() const { return triggered && trajectories.empty(); }
};

// G independent scored samples from policy_old; all on-policy. The context
// must be hint-free.
std::vector<Trajectory> standard_group_rollout(const PolicySnapshot& policy_old,
                                               const Context& ctx,
                                               int group_size, RngStream& rng);

// Sample a hint symbol from the teacher conditioned on the context with the
// answer revealed, restricted to the hint vocabulary.
int generate_hint(const PolicySnapshot& teacher, const Context& ctx,
                  int answer_letter, RngStream& rng);

struct RejectionResult {
  std::optional<Trajectory> trajectory;
  int attempts = 0;
};

// Up to `budget` samples from policy_old conditioned on (ctx, hint, revealed
// answer); the first reward-positive one is returned as HINT_INJECTED with
// its plain-context log-prob recorded alongside the sampling log-prob.
// Exhausting the budget is a value, not an error.
RejectionResult hint_rejection_sample(const PolicySnapshot& policy_old,
                                      const Context& ctx, int hint_token,
                                      int answer_letter, int budget,
                                      RngStream& rng);

// Full adaptive rollout: standard group first; if every trajectory scored
// zero and hints are enabled, generate one hint, run rejection sampling for
// each of the m injected slots, and back-fill with a uniformly chosen
// on-policy subset so non-discarded groups hold exactly G trajectories.
// With hints disabled the result is bit-identical to the standard rollout.
RolloutGroup knowledge_enhanced_rollout(const PolicySnapshot& policy_old,
                                        const PolicySnapshot* teacher,
                                        const Context& ctx,
                                        const RolloutConfig& cfg,
                                        RngStream& rng);

}  // namespace kepo
