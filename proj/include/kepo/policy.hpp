#pragma once

#include <Eigen/Core>
#include <span>
#include <string>
#include <vector>

#include "kepo/env.hpp"
#include "kepo/features.hpp"
#include "kepo/rng.hpp"

namespace kepo {

enum class SnapshotLabel { kCurrent, kOld, kReference, kTeacher };

std::string snapshot_label_name(SnapshotLabel label);
SnapshotLabel parse_snapshot_label(const std::string& name);

// Linear-softmax sequence policy: one weight row per token, logits are
// weights * features(ctx, prefix, step). Snapshots labelled anything but
// CURRENT are frozen; only the trainer mutates the CURRENT snapshot.
class PolicySnapshot {
 public:
  PolicySnapshot(Eigen::MatrixXd weights, FeatureMap feature_map,
                 SnapshotLabel label);

  const Eigen::MatrixXd& weights() const { return weights_; }
  Eigen::MatrixXd& mutable_weights();  // throws unless label == kCurrent
  const FeatureMap& feature_map() const { return feature_map_; }
  SnapshotLabel label() const { return label_; }

  PolicySnapshot frozen_as(SnapshotLabel label) const;

 private:
  Eigen::MatrixXd weights_;
  FeatureMap feature_map_;
  SnapshotLabel label_;
};

enum class Provenance { kOnPolicy, kHintInjected };

std::string provenance_name(Provenance p);

struct Trajectory {
  std::vector<int> tokens;
  // Log-probs under the sampling snapshot and sampling context, one per token.
  std::vector<double> step_logprobs;
  double total_logprob = 0.0;
  RewardBreakdown reward;
  Provenance provenance = Provenance::kOnPolicy;
  Context sampling_context;
  // Log-prob under the sampling snapshot and the hint-free context. Equals
  // total_logprob for on-policy samples; differs for hint-injected ones,
  // whose sampling context carries the hint and the revealed answer.
  double plain_old_logprob = 0.0;
};

// Exact softmax over the vocabulary, max-subtraction stabilized. Throws on
// non-finite logits (signals divergence).
Eigen::VectorXd token_distribution(const PolicySnapshot& snap,
                                   const Context& ctx,
                                   std::span<const int> prefix, int step);

// Log-softmax companion of token_distribution; same logits, same order.
Eigen::VectorXd token_log_distribution(const PolicySnapshot& snap,
                                       const Context& ctx,
                                       std::span<const int> prefix, int step);

// Sequential ancestral sampling; stops at the end token or max length.
// Reward and provenance are left for the caller to fill in.
Trajectory sample_trajectory(const PolicySnapshot& snap, const Context& ctx,
                             RngStream& rng);

// Argmax decoding (first index wins ties); deterministic.
std::vector<int> greedy_trajectory(const PolicySnapshot& snap,
                                   const Context& ctx);

// Sum of per-step log-probs; -inf when a token has zero probability under
// the snapshot (the caller must not silently clamp this).
double trajectory_logprob(const PolicySnapshot& snap, const Context& ctx,
                          std::span<const int> tokens);

// d/dW of trajectory_logprob: sum over steps of (onehot(token) - p) phi^T.
Eigen::MatrixXd grad_trajectory_logprob(const PolicySnapshot& snap,
                                        const Context& ctx,
                                        std::span<const int> tokens);

// Fixed teacher built by logit-margin construction, no training loop. It
// follows the tag grammar with the correct letter, emits hint symbols that
// encode the answer when one is revealed, and (on misleading task sets)
// prefers letter D after a decoy filler.
PolicySnapshot make_teacher(const TaskSet& ts, double strength);

// Initial student weights. The hint priors give the untrained policy a weak
// instruction-following instinct on hint-conditioned input only: they touch
// features that are identically zero in standard rollouts.
struct InitPriors {
  double format_prior = 0.0;       // tag-skeleton chain, no filler
  double hint_letter_prior = 2.0;  // hint/revealed one-hots -> letters
  double hint_tag_prior = 2.4;     // hint presence -> answer tags
};

PolicySnapshot init_policy(const FeatureMap& fm, const InitPriors& priors);

// Bit-exact round trip including the feature-map descriptor and label.
void save_snapshot(const PolicySnapshot& snap, const std::string& path);
PolicySnapshot load_snapshot(const std::string& path);

}  // namespace kepo
