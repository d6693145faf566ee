#include "kepo/selftest.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "kepo/estimators.hpp"
#include "kepo/objective.hpp"
#include "kepo/rollout.hpp"
#include "kepo/trainer.hpp"

namespace kepo {

namespace {

PolicySnapshot random_compact_snapshot(int vocab, int dim, int max_len,
                                       RngStream& rng, double scale = 1.0) {
  const FeatureMap fm = FeatureMap::compact(vocab, dim, max_len);
  Eigen::MatrixXd w(vocab, dim);
  for (int r = 0; r < vocab; ++r)
    for (int c = 0; c < dim; ++c) w(r, c) = rng.uniform(-scale, scale);
  return PolicySnapshot(std::move(w), fm, SnapshotLabel::kCurrent);
}

std::vector<int> random_tokens(int vocab, int len, RngStream& rng) {
  std::vector<int> t(len);
  for (int& x : t) x = static_cast<int>(rng.below(vocab));
  return t;
}

}  // namespace

std::vector<CheckResult> run_selftests() {
  std::vector<CheckResult> results;
  auto check = [&](const std::string& name, std::function<std::string()> body) {
    CheckResult r;
    r.name = name;
    try {
      r.detail = body();  // empty detail means pass
      r.ok = r.detail.empty();
    } catch (const std::exception& e) {
      r.ok = false;
      r.detail = std::string("exception: ") + e.what();
    }
    results.push_back(std::move(r));
  };

  check("advantages: zero-sum, shift invariance, G=2 relation", [] {
    RngStream rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
      const int g = std::vector<int>{2, 4, 8}[trial % 3];
      std::vector<double> r(g), shifted(g);
      const double c = rng.uniform(-3.0, 3.0);
      for (int i = 0; i < g; ++i) {
        r[i] = rng.uniform(-5.0, 5.0);
        shifted[i] = r[i] + c;
      }
      const auto a1 = rloo_advantages(r), a2 = grpo_advantages(r);
      const auto s1 = rloo_advantages(shifted), s2 = grpo_advantages(shifted);
      double sum1 = 0, sum2 = 0;
      for (int i = 0; i < g; ++i) {
        sum1 += a1[i];
        sum2 += a2[i];
        if (std::abs(a1[i] - s1[i]) > 1e-12 || std::abs(a2[i] - s2[i]) > 1e-12)
          return std::string("shift invariance violated");
        if (g == 2 && a1[i] != 2.0 * a2[i])
          return std::string("G=2 relation violated");
      }
      if (std::abs(sum1) > 1e-12 || std::abs(sum2) > 1e-12)
        return std::string("advantages do not sum to zero");
    }
    return std::string();
  });

  check("hand values: rloo [2,0,0,0], grpo [2,0,0,0], clip(1.5, 0.2)", [] {
    const std::vector<double> r{2, 0, 0, 0};
    const auto a = rloo_advantages(r);
    const auto b = grpo_advantages(r);
    const double e = 1e-12;
    if (std::abs(a[0] - 2.0) > e || std::abs(a[1] + 2.0 / 3.0) > e)
      return std::string("rloo hand value off");
    if (std::abs(b[0] - 1.5) > e || std::abs(b[1] + 0.5) > e)
      return std::string("grpo hand value off");
    if (std::abs(clipped_weight(1.5, 0.2) - 1.2) > e)
      return std::string("clipped weight off");
    if (importance_weight(-2.0, -2.0) != 1.0)
      return std::string("ratio not exactly 1 at equal log-probs");
    return std::string();
  });

  check("softmax: normalization and uniformity at zero weights", [] {
    RngStream rng(17);
    const TaskSet ts = make_task_set(3, 4, 4, 1, false);
    const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::MatrixXd w(fm.vocab_size, fm.dim);
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-2, 2);
      PolicySnapshot snap(w, fm, SnapshotLabel::kCurrent);
      const auto p = token_distribution(snap, ts.train_contexts[trial % 4], {},
                                        trial % fm.max_len);
      if (std::abs(p.sum() - 1.0) > 1e-12)
        return std::string("distribution does not sum to one");
    }
    PolicySnapshot zero(Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim), fm,
                        SnapshotLabel::kCurrent);
    const auto p = token_distribution(zero, ts.train_contexts[0], {}, 0);
    for (int v = 0; v < fm.vocab_size; ++v)
      if (std::abs(p[v] - 1.0 / fm.vocab_size) > 1e-12)
        return std::string("zero weights are not uniform");
    return std::string();
  });

  check("gradient: finite differences on compact instances", [] {
    RngStream rng(23);
    for (int trial = 0; trial < 5; ++trial) {
      PolicySnapshot snap = random_compact_snapshot(8, 16, 8, rng);
      const auto tokens = random_tokens(8, 4, rng);
      const Context ctx;
      const Eigen::MatrixXd g = grad_trajectory_logprob(snap, ctx, tokens);
      const double h = 1e-5;
      double worst = 0.0, scale = 0.0;
      Eigen::MatrixXd w = snap.weights();
      for (int r = 0; r < w.rows(); ++r)
        for (int c = 0; c < w.cols(); ++c) {
          Eigen::MatrixXd wp = w, wm = w;
          wp(r, c) += h;
          wm(r, c) -= h;
          PolicySnapshot sp(wp, snap.feature_map(), SnapshotLabel::kCurrent);
          PolicySnapshot sm(wm, snap.feature_map(), SnapshotLabel::kCurrent);
          const double fd = (trajectory_logprob(sp, ctx, tokens) -
                             trajectory_logprob(sm, ctx, tokens)) /
                            (2 * h);
          worst = std::max(worst, std::abs(fd - g(r, c)));
          scale = std::max(scale, std::abs(fd));
        }
      if (worst > 1e-4 * std::max(scale, 1.0))
        return std::string("finite-difference mismatch");
    }
    return std::string();
  });

  check("KL: non-negative, zero at equality, ln 2 point case", [] {
    RngStream rng(29);
    const Context ctx;
    for (int trial = 0; trial < 200; ++trial) {
      PolicySnapshot a = random_compact_snapshot(6, 10, 8, rng);
      PolicySnapshot b = random_compact_snapshot(6, 10, 8, rng);
      const auto tokens = random_tokens(6, 5, rng);
      const double kl = reference_kl(a, b, ctx, tokens);
      if (!(kl >= 0.0)) return std::string("negative KL");
      if (reference_kl(a, a, ctx, tokens) != 0.0)
        return std::string("KL at equality not exactly zero");
    }
    const FeatureMap fm = FeatureMap::compact(2, 2, 8);
    Eigen::MatrixXd wp = Eigen::MatrixXd::Zero(2, 2);
    wp(0, 0) = 60.0;  // effectively a point mass on token 0
    PolicySnapshot point(wp, fm, SnapshotLabel::kCurrent);
    PolicySnapshot uniform(Eigen::MatrixXd::Zero(2, 2), fm,
                           SnapshotLabel::kCurrent);
    const std::vector<int> one{0};
    if (std::abs(reference_kl(point, uniform, ctx, one) - std::log(2.0)) > 1e-12)
      return std::string("point-vs-uniform KL is not ln 2");
    return std::string();
  });

  check("reward: bounded, sparse, grammar sound", [] {
    RngStream rng(31);
    const TaskSet ts = make_task_set(5, 4, 4, 1, true);
    for (int trial = 0; trial < 5000; ++trial) {
      const auto t =
          random_tokens(Vocab::kSize, 1 + static_cast<int>(rng.below(8)), rng);
      const auto rb = score_trajectory(ts.train_contexts[trial % 4], t);
      if (rb.total != rb.format + rb.accuracy || rb.total < 0 || rb.total > 2)
        return std::string("reward out of range");
    }
    return std::string();
  });

  check("rollout: size law, injection purity, budget ceiling", [] {
    const TaskSet ts = make_task_set(7, 8, 4, 1, true);
    const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
    const PolicySnapshot student = init_policy(fm, InitPriors{});
    const PolicySnapshot old = student.frozen_as(SnapshotLabel::kOld);
    const PolicySnapshot teacher = make_teacher(ts, 10.0);
    RolloutConfig cfg;
    for (int trial = 0; trial < 200; ++trial) {
      RngStream rng(1000 + trial);
      const RolloutGroup g = knowledge_enhanced_rollout(
          old, &teacher, ts.train_contexts[trial % 8], cfg, rng);
      if (!g.discarded() &&
          static_cast<int>(g.trajectories.size()) != cfg.group_size)
        return std::string("non-discarded group size is not G");
      if (g.attempts_used > cfg.injected * cfg.budget)
        return std::string("budget ceiling violated");
      for (const auto& t : g.trajectories)
        if (t.provenance == Provenance::kHintInjected && t.reward.total <= 0)
          return std::string("injected trajectory without positive reward");
    }
    return std::string();
  });

  check("teacher: near-oracle reward on ID contexts", [] {
    const TaskSet ts = make_task_set(9, 8, 4, 1, true);
    const PolicySnapshot teacher = make_teacher(ts, 10.0);
    RngStream rng(2024);
    double mean = 0.0;
    const int episodes = 400;
    for (int e = 0; e < episodes; ++e) {
      const Context& ctx = ts.train_contexts[e % 8];
      Trajectory tr = sample_trajectory(teacher, ctx, rng);
      mean += score_trajectory(ctx, tr.tokens).total;
    }
    mean /= episodes;
    if (mean < 1.9) {
      std::ostringstream os;
      os << "teacher mean reward " << mean << " < 1.9";
      return os.str();
    }
    return std::string();
  });

  return results;
}

}  // namespace kepo
