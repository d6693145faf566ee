#include "kepo/rollout.hpp"

#include <algorithm>
#include <stdexcept>

#include "kepo/env.hpp"

namespace kepo {

void RolloutConfig::validate() const {
  if (group_size < 2)
    throw std::invalid_argument("group_size must be >= 2");
  if (budget < 1) throw std::invalid_argument("budget must be >= 1");
  if (injected < 1 || injected >= group_size)
    throw std::invalid_argument("injected count must satisfy 1 <= m < G");
}

std::vector<Trajectory> standard_group_rollout(const PolicySnapshot& policy_old,
                                               const Context& ctx,
                                               int group_size, RngStream& rng) {
  if (ctx.hint || ctx.revealed)
    throw std::invalid_argument("standard rollout requires a hint-free context");
  if (group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  std::vector<Trajectory> out;
  out.reserve(group_size);
  for (int i = 0; i < group_size; ++i) {
    Trajectory tr = sample_trajectory(policy_old, ctx, rng);
    tr.reward = score_trajectory(ctx, tr.tokens);
    tr.provenance = Provenance::kOnPolicy;
    out.push_back(std::move(tr));
  }
  return out;
}

int generate_hint(const PolicySnapshot& teacher, const Context& ctx,
                  int answer_letter, RngStream& rng) {
  if (teacher.label() != SnapshotLabel::kTeacher)
    throw std::invalid_argument("hint generation requires a TEACHER snapshot");
  if (answer_letter < 0 || answer_letter >= Vocab::kNumLetters)
    throw std::invalid_argument("answer letter out of range");
  Context hctx = ctx;
  hctx.hint.reset();
  hctx.revealed = answer_letter;
  const Eigen::VectorXd p = token_distribution(teacher, hctx, {}, 0);
  // Sample within the hint sub-vocabulary (the hint channel analog of a
  // dedicated hint prompt).
  double z = 0.0;
  for (int k = 0; k < Vocab::kNumHints; ++k) z += p[Vocab::hint(k)];
  if (z <= 0.0) return Vocab::hint(static_cast<int>(rng.below(Vocab::kNumHints)));
  const double u = rng.uniform01() * z;
  double acc = 0.0;
  for (int k = 0; k < Vocab::kNumHints; ++k) {
    acc += p[Vocab::hint(k)];
    if (u < acc) return Vocab::hint(k);
  }
  return Vocab::hint(Vocab::kNumHints - 1);
}

RejectionResult hint_rejection_sample(const PolicySnapshot& policy_old,
                                      const Context& ctx, int hint_token,
                                      int answer_letter, int budget,
                                      RngStream& rng) {
  if (budget < 1) throw std::invalid_argument("budget must be >= 1");
  const Context aug = ctx.with_hint(hint_token, answer_letter);
  RejectionResult res;
  for (int b = 1; b <= budget; ++b) {
    Trajectory tr = sample_trajectory(policy_old, aug, rng);
    tr.reward = score_trajectory(ctx, tr.tokens);
    res.attempts = b;
    if (tr.reward.total > 0) {
      tr.provenance = Provenance::kHintInjected;
      tr.plain_old_logprob = trajectory_logprob(policy_old, ctx, tr.tokens);
      res.trajectory = std::move(tr);
      break;
    }
  }
  return res;
}

namespace {

// First `keep` positions of a partial Fisher-Yates shuffle, returned in
// ascending order so the surviving on-policy subset keeps its original
// relative order.
std::vector<int> sample_without_replacement(int n, int keep, RngStream& rng) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int i = 0; i < keep; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint32_t>(n - i)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

RolloutGroup knowledge_enhanced_rollout(const PolicySnapshot& policy_old,
                                        const PolicySnapshot* teacher,
                                        const Context& ctx,
                                        const RolloutConfig& cfg,
                                        RngStream& rng) {
  cfg.validate();
  RolloutGroup grp;
  grp.context = ctx;
  grp.trajectories = standard_group_rollout(policy_old, ctx, cfg.group_size, rng);

  int max_total = 0;
  for (const Trajectory& t : grp.trajectories)
    max_total = std::max(max_total, t.reward.total);
  if (!cfg.hint_enabled || max_total > 0) return grp;

  grp.triggered = true;
  if (teacher == nullptr)
    throw std::invalid_argument("hint-enabled rollout requires a teacher");
  const int answer = correct_letter(ctx);
  const int hint = generate_hint(*teacher, ctx, answer, rng);
  grp.hint_used = hint;

  std::vector<Trajectory> accepted;
  for (int j = 0; j < cfg.injected; ++j) {
    RejectionResult res =
        hint_rejection_sample(policy_old, ctx, hint, answer, cfg.budget, rng);
    grp.attempts_used += res.attempts;
    if (res.trajectory) accepted.push_back(std::move(*res.trajectory));
  }
  if (accepted.empty()) {
    grp.trajectories.clear();  // discarded: nothing enters the buffer
    return grp;
  }

  const int keep = cfg.group_size - static_cast<int>(accepted.size());
  const std::vector<int> kept =
      sample_without_replacement(cfg.group_size, keep, rng);
  std::vector<Trajectory> buffer;
  buffer.reserve(cfg.group_size);
  for (int i : kept) buffer.push_back(std::move(grp.trajectories[i]));
  for (Trajectory& t : accepted) buffer.push_back(std::move(t));
  grp.trajectories = std::move(buffer);
  grp.injected_count = static_cast<int>(accepted.size());
  return grp;
}

}  // namespace kepo
