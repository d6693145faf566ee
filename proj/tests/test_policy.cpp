#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "kepo/env.hpp"
#include "kepo/policy.hpp"
#include "test_helpers.hpp"

using namespace kepo;

namespace {

Context plain_context(const TaskSet& ts, int i = 0) { return ts.train_contexts[i]; }

// Central finite differences of trajectory_logprob over every weight entry.
Eigen::MatrixXd fd_grad(const PolicySnapshot& snap, const Context& ctx,
                        const std::vector<int>& tokens, double h) {
  const FeatureMap& fm = snap.feature_map();
  Eigen::MatrixXd out(fm.vocab_size, fm.dim);
  for (int r = 0; r < fm.vocab_size; ++r)
    for (int c = 0; c < fm.dim; ++c) {
      Eigen::MatrixXd wp = snap.weights(), wm = snap.weights();
      wp(r, c) += h;
      wm(r, c) -= h;
      const PolicySnapshot sp(wp, fm, SnapshotLabel::kCurrent);
      const PolicySnapshot sm(wm, fm, SnapshotLabel::kCurrent);
      out(r, c) = (trajectory_logprob(sp, ctx, tokens) -
                   trajectory_logprob(sm, ctx, tokens)) /
                  (2 * h);
    }
  return out;
}

}  // namespace

TEST_CASE("token distribution: zero weights are uniform and normalized") {
  const TaskSet ts = make_task_set(1, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  const PolicySnapshot zero = test::zero_snapshot(fm);
  for (int step = 0; step < fm.max_len; ++step) {
    const auto p = token_distribution(zero, plain_context(ts, step % 4), {}, step);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    for (int v = 0; v < fm.vocab_size; ++v)
      CHECK(p[v] == doctest::Approx(1.0 / fm.vocab_size).epsilon(1e-12));
  }
}

TEST_CASE("token distribution: a +10 logit dominates a vocabulary of 17") {
  const TaskSet ts = make_task_set(1, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  w(Vocab::kEnd, fm.f_bias()) = 10.0;
  const PolicySnapshot snap(w, fm, SnapshotLabel::kCurrent);
  const auto p = token_distribution(snap, plain_context(ts), {}, 0);
  CHECK(p[Vocab::kEnd] > 0.999);
  // Direct softmax evaluation: e^10 / (e^10 + V - 1).
  const double want = std::exp(10.0) / (std::exp(10.0) + fm.vocab_size - 1);
  CHECK(p[Vocab::kEnd] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("token distribution: normalization holds for random snapshots") {
  RngStream rng(21);
  const TaskSet ts = make_task_set(1, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  for (int trial = 0; trial < 200; ++trial) {
    const PolicySnapshot snap = test::random_snapshot(fm, rng, 3.0);
    const auto prefix = test::random_tokens(fm.vocab_size, trial % 4, rng);
    const auto p = token_distribution(snap, plain_context(ts, trial % 4), prefix,
                                      trial % fm.max_len);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    CHECK(p.minCoeff() >= 0.0);
  }
}

TEST_CASE("token distribution fails loudly on non-finite logits") {
  const FeatureMap fm = FeatureMap::compact(4, 6, 8);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 6);
  PolicySnapshot snap(w, fm, SnapshotLabel::kCurrent);
  snap.mutable_weights()(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(token_distribution(snap, Context{}, {}, 0), std::runtime_error);
}

TEST_CASE("sampling: same seed gives the same trajectory") {
  const TaskSet ts = make_task_set(2, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  RngStream rng1(77), rng2(77);
  const PolicySnapshot snap = test::zero_snapshot(fm);
  const Trajectory a = sample_trajectory(snap, plain_context(ts), rng1);
  const Trajectory b = sample_trajectory(snap, plain_context(ts), rng2);
  CHECK(a.tokens == b.tokens);
  CHECK(a.step_logprobs == b.step_logprobs);
  CHECK(a.total_logprob == b.total_logprob);
}

TEST_CASE("sampling: a near-deterministic policy repeats its chain") {
  const TaskSet ts = make_task_set(2, 4, 4, 1, true);
  const PolicySnapshot teacher = make_teacher(ts, 10.0);
  const Context ctx = plain_context(ts);
  const std::vector<int> chain = greedy_trajectory(teacher, ctx);
  RngStream rng(101);
  int hits = 0;
  for (int i = 0; i < 100; ++i)
    if (sample_trajectory(teacher, ctx, rng).tokens == chain) ++hits;
  CHECK(hits >= 99);
}

TEST_CASE("sampling: uniform first-token frequencies sit inside 3 sigma") {
  const TaskSet ts = make_task_set(3, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  const PolicySnapshot snap = test::zero_snapshot(fm);
  const Context ctx = plain_context(ts);
  RngStream rng(31337);
  const int n = 10000;
  std::vector<int> counts(fm.vocab_size, 0);
  for (int i = 0; i < n; ++i)
    ++counts[sample_trajectory(snap, ctx, rng).tokens.front()];
  const double p = 1.0 / fm.vocab_size;
  const double sigma = std::sqrt(p * (1 - p) / n);
  for (int v = 0; v < fm.vocab_size; ++v)
    CHECK(std::abs(counts[v] / static_cast<double>(n) - p) <= 3 * sigma);
}

TEST_CASE("trajectory logprob: uniform policy gives -L ln V") {
  const TaskSet ts = make_task_set(3, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  const PolicySnapshot snap = test::zero_snapshot(fm);
  const std::vector<int> tokens{0, 5, 9, 12};
  const double lp = trajectory_logprob(snap, plain_context(ts), tokens);
  CHECK(lp == doctest::Approx(-4.0 * std::log(fm.vocab_size)).epsilon(1e-12));
}

TEST_CASE("trajectory logprob: agrees with the sampling record") {
  RngStream rng(8), srng(9);
  const TaskSet ts = make_task_set(4, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  for (int trial = 0; trial < 100; ++trial) {
    const PolicySnapshot snap = test::random_snapshot(fm, rng, 2.0);
    const Context ctx = plain_context(ts, trial % 4);
    const Trajectory tr = sample_trajectory(snap, ctx, srng);
    const double lp = trajectory_logprob(snap, ctx, tr.tokens);
    CHECK(std::abs(lp - tr.total_logprob) <= 1e-12);
    double manual = 0.0;
    for (double s : tr.step_logprobs) manual += s;
    CHECK(std::abs(tr.total_logprob - manual) <= 1e-12);

    // exp(total) equals the product of the per-step probabilities.
    double product = 1.0;
    for (std::size_t s = 0; s < tr.tokens.size(); ++s) {
      const auto p = token_distribution(
          snap, ctx, std::span<const int>(tr.tokens.data(), s),
          static_cast<int>(s));
      product *= p[tr.tokens[s]];
    }
    CHECK(std::exp(lp) == doctest::Approx(product).epsilon(1e-10));
  }
}

TEST_CASE("trajectory logprob: identical weights give identical values") {
  RngStream rng(15);
  const FeatureMap fm = FeatureMap::compact(8, 16, 8);
  const PolicySnapshot a = test::random_snapshot(fm, rng);
  const PolicySnapshot b(a.weights(), fm, SnapshotLabel::kOld);
  const auto tokens = test::random_tokens(8, 6, rng);
  CHECK(trajectory_logprob(a, Context{}, tokens) ==
        trajectory_logprob(b, Context{}, tokens));
}

TEST_CASE("trajectory logprob: zero-probability token yields the -inf sentinel") {
  const FeatureMap fm = FeatureMap::compact(4, 6, 8);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 6);
  w(2, 0) = -2000.0;
  const PolicySnapshot snap(w, fm, SnapshotLabel::kCurrent);
  const double lp = trajectory_logprob(snap, Context{}, std::vector<int>{2});
  CHECK(std::isinf(lp));
  CHECK(lp < 0);
}

TEST_CASE("gradient: matches central finite differences on random triples") {
  RngStream rng(55);
  const FeatureMap fm = FeatureMap::compact(8, 16, 8);
  for (int trial = 0; trial < 10; ++trial) {
    const PolicySnapshot snap = test::random_snapshot(fm, rng);
    const auto tokens = test::random_tokens(8, 4 + trial % 5, rng);
    const Eigen::MatrixXd g = grad_trajectory_logprob(snap, Context{}, tokens);
    const Eigen::MatrixXd fd = fd_grad(snap, Context{}, tokens, 1e-5);
    CHECK(test::rel_error(g, fd) < 1e-4);
  }
}

TEST_CASE("gradient: closed form for a single uniform step") {
  const FeatureMap fm = FeatureMap::compact(8, 16, 8);
  const PolicySnapshot snap = test::zero_snapshot(fm);
  const std::vector<int> tokens{3};
  const Eigen::MatrixXd g = grad_trajectory_logprob(snap, Context{}, tokens);
  const Eigen::VectorXd phi = fm.features(Context{}, {}, 0);
  const double v = fm.vocab_size;
  CHECK((g.row(3).transpose() - (1.0 - 1.0 / v) * phi).cwiseAbs().maxCoeff() <=
        1e-12);
  CHECK((g.row(0).transpose() + (1.0 / v) * phi).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("gradient: saturated policy has a vanishing score on its own chain") {
  const TaskSet ts = make_task_set(5, 4, 4, 1, true);
  const PolicySnapshot teacher = make_teacher(ts, 10.0);
  const Context ctx = plain_context(ts);
  const std::vector<int> chain = greedy_trajectory(teacher, ctx);
  const Eigen::MatrixXd g = grad_trajectory_logprob(teacher, ctx, chain);
  CHECK(g.norm() < 1e-3);
}

TEST_CASE("gradient: the expected score over sampled trajectories is zero") {
  RngStream wrng(71);
  const FeatureMap fm = FeatureMap::compact(6, 10, 8);
  const PolicySnapshot snap = test::random_snapshot(fm, wrng);
  RngStream rng(72);
  const int n = 10000;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(6, 10);
  Eigen::MatrixXd sumsq = Eigen::MatrixXd::Zero(6, 10);
  for (int i = 0; i < n; ++i) {
    const Trajectory tr = sample_trajectory(snap, Context{}, rng);
    const Eigen::MatrixXd g = grad_trajectory_logprob(snap, Context{}, tr.tokens);
    sum += g;
    sumsq += g.cwiseProduct(g);
  }
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 10; ++c) {
      const double mean = sum(r, c) / n;
      const double var = sumsq(r, c) / n - mean * mean;
      const double se = std::sqrt(std::max(var, 0.0) / n);
      CHECK(std::abs(mean) <= 4 * se + 1e-12);
    }
}

TEST_CASE("teacher: strength 10 is near-oracle on ID contexts") {
  const TaskSet ts = make_task_set(6, 8, 8, 1, true);
  const PolicySnapshot teacher = make_teacher(ts, 10.0);
  CHECK(teacher.label() == SnapshotLabel::kTeacher);
  RngStream rng(404);
  double mean = 0.0;
  const int episodes = 1000;
  for (int e = 0; e < episodes; ++e) {
    const Context& ctx = ts.train_contexts[e % ts.train_contexts.size()];
    const Trajectory tr = sample_trajectory(teacher, ctx, rng);
    mean += score_trajectory(ctx, tr.tokens).total;
  }
  mean /= episodes;
  CHECK(mean >= 1.9);
}

TEST_CASE("teacher: strength 5 still conforms on most episodes") {
  const TaskSet ts = make_task_set(6, 8, 8, 1, true);
  const PolicySnapshot teacher = make_teacher(ts, 5.0);
  RngStream rng(405);
  int full = 0;
  const int episodes = 1000;
  for (int e = 0; e < episodes; ++e) {
    const Context& ctx = ts.train_contexts[e % ts.train_contexts.size()];
    const Trajectory tr = sample_trajectory(teacher, ctx, rng);
    if (score_trajectory(ctx, tr.tokens).total == 2) ++full;
  }
  CHECK(full >= 950);
}

TEST_CASE("teacher: vanishing strength behaves like uniform play") {
  const TaskSet ts = make_task_set(6, 8, 8, 1, true);
  const PolicySnapshot teacher = make_teacher(ts, 0.001);
  RngStream rng(406);
  const int episodes = 4000;
  double mean = 0.0, sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const Context& ctx = ts.train_contexts[e % ts.train_contexts.size()];
    const Trajectory tr = sample_trajectory(teacher, ctx, rng);
    const double total = score_trajectory(ctx, tr.tokens).total;
    mean += total;
    sq += total * total;
  }
  mean /= episodes;
  const double var = sq / episodes - mean * mean;
  const int oracle_episodes = 20000;
  const double oracle = uniform_random_mean_reward(ts, oracle_episodes, 9);
  // Combined Monte-Carlo noise of both estimates; the uniform oracle's
  // variance is close to the teacher's at vanishing strength.
  const double sigma = std::sqrt(var / episodes + var / oracle_episodes + 1e-12);
  CHECK(std::abs(mean - oracle) <= 3 * sigma + 1e-6);
}

TEST_CASE("teacher: strength must be positive") {
  const TaskSet ts = make_task_set(6, 4, 4, 1, false);
  CHECK_THROWS_AS(make_teacher(ts, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(make_teacher(ts, -1.0), std::invalid_argument);
}

TEST_CASE("snapshots: only CURRENT is mutable") {
  const FeatureMap fm = FeatureMap::compact(4, 6, 8);
  PolicySnapshot cur = test::zero_snapshot(fm);
  CHECK_NOTHROW(cur.mutable_weights()(0, 0) = 1.0);
  PolicySnapshot frozen = cur.frozen_as(SnapshotLabel::kTeacher);
  CHECK_THROWS_AS(frozen.mutable_weights(), std::logic_error);
  PolicySnapshot ref = cur.frozen_as(SnapshotLabel::kReference);
  CHECK_THROWS_AS(ref.mutable_weights(), std::logic_error);
}

TEST_CASE("snapshots: save/load round trip is bit exact") {
  namespace fs = std::filesystem;
  RngStream rng(91);
  const TaskSet ts = make_task_set(6, 4, 4, 1, false);
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  PolicySnapshot snap = test::random_snapshot(fm, rng, 5.0);
  // Exercise awkward values explicitly.
  snap.mutable_weights()(0, 0) = 0.1;
  snap.mutable_weights()(1, 1) = -1.0 / 3.0;
  snap.mutable_weights()(2, 2) = 1e-300;
  snap.mutable_weights()(3, 3) = 12345678.987654321;
  const PolicySnapshot frozen = snap.frozen_as(SnapshotLabel::kTeacher);

  const fs::path path = fs::temp_directory_path() / "kepo_snapshot_test.json";
  save_snapshot(frozen, path.string());
  const PolicySnapshot back = load_snapshot(path.string());
  fs::remove(path);

  CHECK(back.label() == SnapshotLabel::kTeacher);
  CHECK(back.feature_map() == frozen.feature_map());
  REQUIRE(back.weights().rows() == frozen.weights().rows());
  REQUIRE(back.weights().cols() == frozen.weights().cols());
  for (int r = 0; r < back.weights().rows(); ++r)
    for (int c = 0; c < back.weights().cols(); ++c)
      CHECK(back.weights()(r, c) == frozen.weights()(r, c));
}
