#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

#include "kepo/rollout.hpp"

namespace kepo {

enum class EstimatorKind { kRloo, kGrpo };

std::string estimator_name(EstimatorKind kind);
EstimatorKind parse_estimator(const std::string& name);

struct ObjectiveConfig {
  EstimatorKind estimator = EstimatorKind::kGrpo;
  double clip_epsilon = 0.2;
  double kl_beta = 0.04;
  double distill_tau = 1.0;
  double distill_alpha = 1.0;
  bool gate_strict = false;  // true: reward > tau, false: reward >= tau
  double gkd_lambda = 1.0;
  int inner_epochs = 1;
  // false: advantages over on-policy members only, injected trajectories
  // excluded from the policy-gradient term (ablation).
  bool mixed_pool_advantages = true;
  // true: importance-weight denominator for injected trajectories uses the
  // plain-context log-prob instead of the hint-conditioned sampling
  // log-prob (ablation; biases the ratio).
  bool naive_injected_ratio = false;

  void validate() const;
};

struct BatchGradient {
  Eigen::MatrixXd grad;  // ascent direction, shape of the policy weights
  double pg_term = 0.0;
  double distill_term = 0.0;
  double ref_kl_term = 0.0;
  int distilled_count = 0;
  int group_count = 0;
  // gkd bookkeeping
  int student_distilled = 0;
  int offline_distilled = 0;
};

bool distill_gate(double reward, double tau, bool strict);

// Clipped-surrogate policy gradient plus reference-KL penalty. Requires
// cfg.distill_alpha == 0 and non-empty groups.
BatchGradient grpo_batch_gradient(const std::vector<RolloutGroup>& groups,
                                  const PolicySnapshot& current,
                                  const PolicySnapshot& ref,
                                  const ObjectiveConfig& cfg);

// Full objective: policy-gradient term over the mixed pool, quality-gated
// forward-KL distillation toward the teacher (evaluated on the hint-free
// context), and the reference-KL penalty. With the gate above the maximum
// attainable reward this reduces bit-for-bit to grpo_batch_gradient.
BatchGradient kepo_batch_gradient(const std::vector<RolloutGroup>& groups,
                                  const PolicySnapshot& current,
                                  const PolicySnapshot& policy_old,
                                  const PolicySnapshot& ref,
                                  const PolicySnapshot* teacher,
                                  const ObjectiveConfig& cfg);

// Distillation-only lambda mixture: per trajectory slot, distill on the
// student-sampled trajectory with probability lambda, otherwise on a
// teacher-sampled one from the offline dataset. No reward term, no gating.
BatchGradient gkd_batch_gradient(const std::vector<RolloutGroup>& groups,
                                 const std::vector<Trajectory>& offline,
                                 const PolicySnapshot& current,
                                 const PolicySnapshot& teacher, double lambda,
                                 RngStream& rng, double alpha = 1.0);

}  // namespace kepo
