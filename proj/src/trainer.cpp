#include "kepo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kepo/estimators.hpp"

namespace kepo {

namespace {

// Substream tags; keep stable so runs stay reproducible across refactors.
constexpr std::uint64_t kRolloutTag = 0x726f6c6cull;
constexpr std::uint64_t kGkdTag = 0x676b64ull;
constexpr std::uint64_t kOfflineTag = 0x6f66666cull;
constexpr std::uint64_t kEvalTag = 0x6576616cull;

}  // namespace

std::string method_name(Method m) {
  switch (m) {
    case Method::kGrpo: return "grpo";
    case Method::kGkd: return "gkd";
    case Method::kKepo: return "kepo";
    case Method::kKepoKe: return "kepo-ke";
  }
  return "kepo";
}

Method parse_method(const std::string& name) {
  if (name == "grpo") return Method::kGrpo;
  if (name == "gkd") return Method::kGkd;
  if (name == "kepo") return Method::kKepo;
  if (name == "kepo-ke") return Method::kKepoKe;
  throw std::invalid_argument("unknown method: " + name);
}

void TrainConfig::validate() const {
  rollout.validate();
  objective.validate();
  if (schedule.steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (schedule.steps == 0 && schedule.epochs < 1)
    throw std::invalid_argument("epochs must be >= 1 when steps is 0");
  if (schedule.groups_per_step < 1)
    throw std::invalid_argument("groups_per_step must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be > 0");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (eval_episodes_per_context < 1)
    throw std::invalid_argument("eval_episodes_per_context must be >= 1");
  if (!(teacher_strength > 0.0))
    throw std::invalid_argument("teacher_strength must be > 0");
  if (offline_dataset_size < 1)
    throw std::invalid_argument("offline_dataset_size must be >= 1");
  if (method == Method::kGrpo && objective.distill_alpha != 0.0)
    throw std::invalid_argument("grpo runs require distill_alpha == 0");
  if (method != Method::kKepo && rollout.hint_enabled)
    throw std::invalid_argument(
        "hint-aware exploration is only available with the kepo method");
}

namespace {

bool needs_teacher(const TrainConfig& cfg) {
  return cfg.method == Method::kGkd || cfg.rollout.hint_enabled ||
         cfg.objective.distill_alpha > 0.0;
}

// Letter token anywhere but the single answer slot counts as leakage.
bool leaks_letter(const Trajectory& t) {
  int open_pos = -1;
  for (std::size_t i = 0; i < t.tokens.size(); ++i)
    if (t.tokens[i] == Vocab::kAnswerOpen) open_pos = static_cast<int>(i);
  for (std::size_t i = 0; i < t.tokens.size(); ++i)
    if (Vocab::is_letter(t.tokens[i]) &&
        static_cast<int>(i) != open_pos + 1)
      return true;
  return false;
}

StepRecord summarize_step(int step, const std::vector<RolloutGroup>& groups) {
  StepRecord rec;
  rec.step = step;
  rec.group_count = static_cast<int>(groups.size());
  long traj_count = 0;
  double reward_sum = 0.0;
  int positive_groups = 0, triggered = 0, discarded = 0;
  long injected = 0, leaking = 0;
  for (const RolloutGroup& g : groups) {
    if (g.triggered) ++triggered;
    if (g.discarded()) ++discarded;
    bool positive = false;
    for (const Trajectory& t : g.trajectories) {
      ++traj_count;
      reward_sum += t.reward.total;
      if (t.reward.total > 0) positive = true;
      if (t.provenance == Provenance::kHintInjected) {
        ++injected;
        if (leaks_letter(t)) ++leaking;
      }
    }
    if (positive) ++positive_groups;
  }
  const double n_groups = std::max<std::size_t>(groups.size(), 1);
  rec.mean_reward = traj_count > 0 ? reward_sum / traj_count : 0.0;
  rec.reward_positive_group_fraction = positive_groups / n_groups;
  rec.triggered_fraction = triggered / n_groups;
  rec.discarded_fraction = discarded / n_groups;
  rec.injected_leak_fraction =
      injected > 0 ? static_cast<double>(leaking) / injected : 0.0;
  return rec;
}

GroupTraceRecord trace_group(int step, int index, const RolloutGroup& g) {
  GroupTraceRecord rec;
  rec.step = step;
  rec.group = index;
  rec.context_index = g.context.index;
  rec.triggered = g.triggered;
  rec.attempts_used = g.attempts_used;
  rec.injected_count = g.injected_count;
  rec.discarded = g.discarded();
  for (const Trajectory& t : g.trajectories) {
    rec.rewards.push_back(t.reward.total);
    rec.provenance.push_back(provenance_name(t.provenance));
  }
  return rec;
}

}  // namespace

std::map<std::string, double> evaluate(
    const PolicySnapshot& snapshot,
    const std::map<std::string, std::vector<Context>>& eval_splits,
    int episodes_per_context, RngStream& rng) {
  (void)rng;  // greedy decoding draws nothing
  if (episodes_per_context < 1)
    throw std::invalid_argument("episodes_per_context must be >= 1");
  std::map<std::string, double> acc;
  for (const auto& [tag, ctxs] : eval_splits) {
    if (ctxs.empty()) throw std::invalid_argument("empty eval split: " + tag);
    long correct = 0, episodes = 0;
    for (const Context& ctx : ctxs) {
      const std::vector<int> tokens = greedy_trajectory(snapshot, ctx);
      const RewardBreakdown rb = score_trajectory(ctx, tokens);
      correct += static_cast<long>(rb.accuracy) * episodes_per_context;
      episodes += episodes_per_context;
    }
    acc[tag] = static_cast<double>(correct) / static_cast<double>(episodes);
  }
  return acc;
}

TrainResult train_run(const TaskSet& ts, const TrainConfig& cfg) {
  cfg.validate();
  if (ts.train_contexts.empty())
    throw std::invalid_argument("task set has no training contexts");

  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  PolicySnapshot current = init_policy(fm, cfg.init);
  const PolicySnapshot ref = current.frozen_as(SnapshotLabel::kReference);
  std::optional<PolicySnapshot> teacher;
  if (needs_teacher(cfg)) teacher = make_teacher(ts, cfg.teacher_strength);

  std::vector<Trajectory> offline;
  if (cfg.method == Method::kGkd) {
    offline.reserve(cfg.offline_dataset_size);
    for (int i = 0; i < cfg.offline_dataset_size; ++i) {
      const Context& ctx =
          ts.train_contexts[static_cast<std::size_t>(i) % ts.train_contexts.size()];
      RngStream rng(derive_seed(cfg.seed, {kOfflineTag, static_cast<std::uint64_t>(i)}));
      Trajectory tr = sample_trajectory(*teacher, ctx, rng);
      tr.reward = score_trajectory(ctx, tr.tokens);
      offline.push_back(std::move(tr));
    }
  }

  const int n_train = static_cast<int>(ts.train_contexts.size());
  const int gps = cfg.schedule.groups_per_step;
  const int steps_per_epoch = (n_train + gps - 1) / gps;
  const int total_steps = cfg.schedule.steps > 0
                              ? cfg.schedule.steps
                              : cfg.schedule.epochs * steps_per_epoch;

  RunMetrics metrics;
  auto run_checkpoint = [&](int after_updates, const PolicySnapshot& snap) {
    RngStream rng(derive_seed(cfg.seed,
                              {kEvalTag, static_cast<std::uint64_t>(after_updates)}));
    const auto acc =
        evaluate(snap, ts.eval_splits, cfg.eval_episodes_per_context, rng);
    CheckpointRecord rec;
    rec.step = after_updates;
    double ood_sum = 0.0;
    int ood_n = 0;
    for (const auto& [tag, a] : acc) {
      if (tag == "ID") {
        rec.id_accuracy = a;
      } else {
        rec.ood_accuracy[tag] = a;
        ood_sum += a;
        ++ood_n;
      }
    }
    rec.ood_accuracy_mean = ood_n > 0 ? ood_sum / ood_n : 0.0;
    metrics.checkpoints.push_back(std::move(rec));
  };

  run_checkpoint(0, current);

  for (int step = 0; step < total_steps; ++step) {
    const PolicySnapshot policy_old = current.frozen_as(SnapshotLabel::kOld);
    std::vector<RolloutGroup> groups;
    groups.reserve(gps);
    for (int g = 0; g < gps; ++g) {
      const int ci = (step * gps + g) % n_train;
      RngStream rng(derive_seed(cfg.seed, {kRolloutTag,
                                           static_cast<std::uint64_t>(step),
                                           static_cast<std::uint64_t>(g)}));
      groups.push_back(knowledge_enhanced_rollout(
          policy_old, teacher ? &*teacher : nullptr, ts.train_contexts[ci],
          cfg.rollout, rng));
    }

    StepRecord rec = summarize_step(step, groups);
    if (cfg.trace_rollouts)
      for (std::size_t g = 0; g < groups.size(); ++g)
        metrics.trace.push_back(trace_group(step, static_cast<int>(g), groups[g]));

    std::vector<RolloutGroup> active;
    active.reserve(groups.size());
    for (RolloutGroup& g : groups)
      if (!g.discarded()) active.push_back(std::move(g));

    for (int epoch = 0; epoch < cfg.objective.inner_epochs; ++epoch) {
      BatchGradient bg;
      try {
        switch (cfg.method) {
          case Method::kGrpo:
            bg = grpo_batch_gradient(active, current, ref, cfg.objective);
            break;
          case Method::kGkd: {
            RngStream rng(derive_seed(cfg.seed, {kGkdTag,
                                                 static_cast<std::uint64_t>(step),
                                                 static_cast<std::uint64_t>(epoch)}));
            bg = gkd_batch_gradient(active, offline, current, *teacher,
                                    cfg.objective.gkd_lambda, rng,
                                    cfg.objective.distill_alpha);
            break;
          }
          case Method::kKepo:
          case Method::kKepoKe:
            bg = kepo_batch_gradient(active, current, policy_old, ref,
                                     teacher ? &*teacher : nullptr,
                                     cfg.objective);
            break;
        }
      } catch (const std::exception& e) {
        throw DivergenceError(
            step, "gradient assembly failed at step " + std::to_string(step) +
                      " (mean_reward=" + std::to_string(rec.mean_reward) +
                      "): " + e.what());
      }
      current.mutable_weights() += cfg.learning_rate * bg.grad;
      if (!current.weights().allFinite())
        throw DivergenceError(
            step, "non-finite weights after update at step " +
                      std::to_string(step) +
                      " (mean_reward=" + std::to_string(rec.mean_reward) + ")");
      rec.distilled_count = bg.distilled_count;
      rec.pg_term = bg.pg_term;
      rec.distill_term = bg.distill_term;
      rec.ref_kl_term = bg.ref_kl_term;
    }

    metrics.steps.push_back(rec);
    const int after = step + 1;
    if (after % cfg.eval_every == 0 || after == total_steps)
      run_checkpoint(after, current);
  }

  return TrainResult{std::move(metrics), current.frozen_as(SnapshotLabel::kCurrent)};
}

}  // namespace kepo
