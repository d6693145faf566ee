#include "kepo/objective.hpp"

#include <cmath>
#include <stdexcept>

#include "kepo/estimators.hpp"

namespace kepo {

std::string estimator_name(EstimatorKind kind) {
  return kind == EstimatorKind::kRloo ? "rloo" : "grpo";
}

EstimatorKind parse_estimator(const std::string& name) {
  if (name == "rloo") return EstimatorKind::kRloo;
  if (name == "grpo") return EstimatorKind::kGrpo;
  throw std::invalid_argument("unknown estimator: " + name);
}

void ObjectiveConfig::validate() const {
  if (!(clip_epsilon > 0.0) || !(clip_epsilon < 1.0))
    throw std::invalid_argument("clip_epsilon must lie in (0, 1)");
  if (kl_beta < 0.0) throw std::invalid_argument("kl_beta must be >= 0");
  if (distill_alpha < 0.0)
    throw std::invalid_argument("distill_alpha must be >= 0");
  if (gkd_lambda < 0.0 || gkd_lambda > 1.0)
    throw std::invalid_argument("gkd_lambda must lie in [0, 1]");
  if (inner_epochs < 1)
    throw std::invalid_argument("inner_epochs must be >= 1");
}

bool distill_gate(double reward, double tau, bool strict) {
  return strict ? reward > tau : reward >= tau;
}

namespace {

std::vector<double> advantages_for(EstimatorKind kind,
                                   std::span<const double> rewards) {
  return kind == EstimatorKind::kRloo ? rloo_advantages(rewards)
                                      : grpo_advantages(rewards);
}

// d/dW of the exact step KL(p_theta || q) where p_theta = softmax(W phi):
// row v gets p_v * ((logp_v - logq_v) - KL) * phi.
void add_ref_kl_gradient(const PolicySnapshot& current,
                         const PolicySnapshot& ref, const Context& ctx,
                         std::span<const int> tokens, double coeff,
                         Eigen::MatrixXd& grad) {
  const FeatureMap& fm = current.feature_map();
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const auto prefix = tokens.subspan(0, s);
    const int step = static_cast<int>(s);
    const Eigen::VectorXd lp = token_log_distribution(current, ctx, prefix, step);
    const Eigen::VectorXd lq = token_log_distribution(ref, ctx, prefix, step);
    const double kl = step_kl(lp, lq);
    if (!std::isfinite(kl))
      throw std::runtime_error("reference KL lost support along trajectory");
    const Eigen::VectorXd phi = fm.features(ctx, prefix, step);
    Eigen::VectorXd coef(fm.vocab_size);
    for (int v = 0; v < fm.vocab_size; ++v)
      coef[v] = std::exp(lp[v]) * ((lp[v] - lq[v]) - kl);
    grad.noalias() += coeff * (coef * phi.transpose());
  }
}

// d/dW of the length-normalized forward KL(teacher || student) is
// (1/L) sum_steps (p_student - p_teacher) phi^T; `coeff` carries the sign
// and the distillation weight.
void add_distill_gradient(const PolicySnapshot& teacher,
                          const PolicySnapshot& student, const Context& ctx,
                          std::span<const int> tokens, double coeff,
                          Eigen::MatrixXd& grad) {
  const FeatureMap& fm = student.feature_map();
  const double inv_len = 1.0 / static_cast<double>(tokens.size());
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const auto prefix = tokens.subspan(0, s);
    const int step = static_cast<int>(s);
    const Eigen::VectorXd pt = token_distribution(teacher, ctx, prefix, step);
    const Eigen::VectorXd ps = token_distribution(student, ctx, prefix, step);
    const Eigen::VectorXd phi = fm.features(ctx, prefix, step);
    grad.noalias() += (coeff * inv_len) * ((pt - ps) * phi.transpose());
  }
}

BatchGradient assemble(const std::vector<RolloutGroup>& groups,
                       const PolicySnapshot& current, const PolicySnapshot& ref,
                       const PolicySnapshot* teacher, const ObjectiveConfig& cfg,
                       bool allow_distill) {
  cfg.validate();
  const FeatureMap& fm = current.feature_map();
  if (!(ref.feature_map() == fm))
    throw std::invalid_argument("reference feature map mismatch");
  if (allow_distill && teacher != nullptr && !(teacher->feature_map() == fm))
    throw std::invalid_argument("teacher feature map mismatch");

  BatchGradient out;
  out.grad = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  out.group_count = static_cast<int>(groups.size());
  const bool distilling =
      allow_distill && teacher != nullptr && cfg.distill_alpha > 0.0;

  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& group = groups[gi];
    if (group.trajectories.empty())
      throw std::invalid_argument("empty group at index " + std::to_string(gi));
    const Context& plain = group.context;
    const int g = static_cast<int>(group.trajectories.size());

    // Advantages: over the mixed pool by default; the ablation restricts
    // both the baseline and the pg term to on-policy members.
    std::vector<int> pg_members;
    std::vector<double> rewards;
    for (int i = 0; i < g; ++i) {
      const Trajectory& t = group.trajectories[i];
      if (cfg.mixed_pool_advantages || t.provenance == Provenance::kOnPolicy) {
        pg_members.push_back(i);
        rewards.push_back(static_cast<double>(t.reward.total));
      }
    }
    const std::vector<double> adv = advantages_for(cfg.estimator, rewards);

    Eigen::MatrixXd group_grad = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
    double group_pg = 0.0;
    double group_kl_sum = 0.0;

    for (std::size_t mi = 0; mi < pg_members.size(); ++mi) {
      const Trajectory& t = group.trajectories[pg_members[mi]];
      const double logp_new = trajectory_logprob(current, plain, t.tokens);
      const double logp_behavior =
          (t.provenance == Provenance::kHintInjected && cfg.naive_injected_ratio)
              ? t.plain_old_logprob
              : t.total_logprob;
      const double ratio = importance_weight(logp_new, logp_behavior);
      group_pg += clipped_weight(ratio, cfg.clip_epsilon) * adv[mi];
      // Gradient flows through the ratio only where the min selects the
      // unclipped branch.
      if (ratio <= 1.0 + cfg.clip_epsilon && adv[mi] != 0.0)
        group_grad.noalias() +=
            (adv[mi] * ratio) * grad_trajectory_logprob(current, plain, t.tokens);
    }

    for (int i = 0; i < g; ++i) {
      const Trajectory& t = group.trajectories[i];
      if (cfg.kl_beta > 0.0) {
        const double kl = reference_kl(current, ref, plain, t.tokens);
        if (!std::isfinite(kl))
          throw std::runtime_error("infinite reference KL in group " +
                                   std::to_string(gi));
        group_kl_sum += kl;
        add_ref_kl_gradient(current, ref, plain, t.tokens,
                            -cfg.kl_beta / static_cast<double>(g), group_grad);
      }
      if (distilling &&
          distill_gate(t.reward.total, cfg.distill_tau, cfg.gate_strict)) {
        const double div = distill_divergence(*teacher, current, plain, t.tokens);
        if (!std::isfinite(div))
          throw std::runtime_error(
              "infinite distillation divergence in group " + std::to_string(gi) +
              ", trajectory " + std::to_string(i));
        ++out.distilled_count;
        out.distill_term += cfg.distill_alpha * div;
        add_distill_gradient(*teacher, current, plain, t.tokens,
                             cfg.distill_alpha, group_grad);
      }
    }

    if (!group_grad.allFinite())
      throw std::runtime_error("non-finite gradient contribution in group " +
                               std::to_string(gi));
    out.grad += group_grad;
    out.pg_term += group_pg;
    out.ref_kl_term += cfg.kl_beta * group_kl_sum / static_cast<double>(g);
  }
  return out;
}

}  // namespace

BatchGradient grpo_batch_gradient(const std::vector<RolloutGroup>& groups,
                                  const PolicySnapshot& current,
                                  const PolicySnapshot& ref,
                                  const ObjectiveConfig& cfg) {
  if (cfg.distill_alpha != 0.0)
    throw std::invalid_argument(
        "grpo_batch_gradient requires distill_alpha == 0");
  return assemble(groups, current, ref, nullptr, cfg, false);
}

BatchGradient kepo_batch_gradient(const std::vector<RolloutGroup>& groups,
                                  const PolicySnapshot& current,
                                  const PolicySnapshot& policy_old,
                                  const PolicySnapshot& ref,
                                  const PolicySnapshot* teacher,
                                  const ObjectiveConfig& cfg) {
  // Spot-check that the stored behavioral log-probs really came from
  // policy_old; catches mixed-up snapshots early.
  if (!groups.empty() && !groups.front().trajectories.empty()) {
    const Trajectory& t = groups.front().trajectories.front();
    const double lp =
        trajectory_logprob(policy_old, t.sampling_context, t.tokens);
    if (std::isfinite(lp) && std::abs(lp - t.total_logprob) > 1e-9)
      throw std::invalid_argument(
          "trajectories were not sampled from the given policy_old");
  }
  return assemble(groups, current, ref, teacher, cfg, true);
}

BatchGradient gkd_batch_gradient(const std::vector<RolloutGroup>& groups,
                                 const std::vector<Trajectory>& offline,
                                 const PolicySnapshot& current,
                                 const PolicySnapshot& teacher, double lambda,
                                 RngStream& rng, double alpha) {
  if (lambda < 0.0 || lambda > 1.0)
    throw std::invalid_argument("lambda must lie in [0, 1]");
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (lambda < 1.0 && offline.empty())
    throw std::invalid_argument("offline dataset required for lambda < 1");
  const FeatureMap& fm = current.feature_map();
  if (!(teacher.feature_map() == fm))
    throw std::invalid_argument("teacher feature map mismatch");

  BatchGradient out;
  out.grad = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  out.group_count = static_cast<int>(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& group = groups[gi];
    if (group.trajectories.empty())
      throw std::invalid_argument("empty group at index " + std::to_string(gi));
    for (const Trajectory& student_traj : group.trajectories) {
      const bool use_student = rng.uniform01() < lambda;
      const Trajectory& t =
          use_student
              ? student_traj
              : offline[rng.below(static_cast<std::uint32_t>(offline.size()))];
      const Context& ctx = use_student ? group.context : t.sampling_context;
      const double div = distill_divergence(teacher, current, ctx, t.tokens);
      if (!std::isfinite(div))
        throw std::runtime_error("infinite distillation divergence in group " +
                                 std::to_string(gi));
      out.distill_term += alpha * div;
      ++out.distilled_count;
      if (use_student)
        ++out.student_distilled;
      else
        ++out.offline_distilled;
      add_distill_gradient(teacher, current, ctx, t.tokens, alpha, out.grad);
    }
  }
  if (!out.grad.allFinite())
    throw std::runtime_error("non-finite distillation gradient");
  return out;
}

}  // namespace kepo
