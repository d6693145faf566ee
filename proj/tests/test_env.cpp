#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "kepo/env.hpp"
#include "kepo/rng.hpp"
#include "test_helpers.hpp"

using namespace kepo;

namespace {

Context plain_context(bool cue0, bool cue1, bool cliff = false) {
  Context ctx;
  ctx.cue0 = cue0;
  ctx.cue1 = cue1;
  ctx.cliff = cliff;
  ctx.nuisance = Eigen::VectorXd::Zero(4);
  return ctx;
}

constexpr int TKO = Vocab::kThinkOpen;
constexpr int TKC = Vocab::kThinkClose;
constexpr int TAO = Vocab::kAnswerOpen;
constexpr int TAC = Vocab::kAnswerClose;
constexpr int F0 = Vocab::kFillerBase;
constexpr int END = Vocab::kEnd;

}  // namespace

TEST_CASE("correct letter follows the cue XOR rule") {
  CHECK(correct_letter(plain_context(false, false)) == 0);  // A
  CHECK(correct_letter(plain_context(true, false)) == 1);   // B
  CHECK(correct_letter(plain_context(false, true)) == 1);   // B
  CHECK(correct_letter(plain_context(true, true)) == 0);    // A
}

TEST_CASE("correct letter ignores nuisance and domain") {
  RngStream rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Context ctx = plain_context(trial % 2 == 0, trial % 4 < 2);
    const int base = correct_letter(ctx);
    for (int j = 0; j < 4; ++j) ctx.nuisance[j] = rng.uniform(-1, 1);
    ctx.domain = DomainTag{true, 1 + trial % kMaxOodSplits};
    CHECK(correct_letter(ctx) == base);
  }
}

TEST_CASE("scoring: well-formed sequences") {
  const Context ctx = plain_context(true, false);  // correct letter B
  const int good = Vocab::letter(1), bad = Vocab::letter(0);

  const std::vector<int> full{TKO, F0, TKC, TAO, good, TAC, END};
  CHECK(score_trajectory(ctx, full) == RewardBreakdown{1, 1, 2});

  const std::vector<int> wrong{TKO, F0, TKC, TAO, bad, TAC, END};
  CHECK(score_trajectory(ctx, wrong) == RewardBreakdown{1, 0, 1});

  const std::vector<int> fillers{F0, F0, F0};
  CHECK(score_trajectory(ctx, fillers) == RewardBreakdown{0, 0, 0});

  // No trailing end token is fine.
  const std::vector<int> no_end{TKO, TKC, TAO, good, TAC};
  CHECK(score_trajectory(ctx, no_end) == RewardBreakdown{1, 1, 2});
}

TEST_CASE("scoring: accuracy can fire without the think section") {
  const Context ctx = plain_context(false, false);  // correct letter A
  const std::vector<int> answer_only{TAO, Vocab::letter(0), TAC, END};
  CHECK(score_trajectory(ctx, answer_only) == RewardBreakdown{0, 1, 1});

  // Duplicate answer tags spoil the parse.
  const std::vector<int> twice{TAO, Vocab::letter(0), TAC, TAO, Vocab::letter(0), TAC};
  CHECK(score_trajectory(ctx, twice) == RewardBreakdown{0, 0, 0});

  // Two tokens between the tags do not parse.
  const std::vector<int> wide{TAO, Vocab::letter(0), F0, TAC};
  CHECK(score_trajectory(ctx, wide) == RewardBreakdown{0, 0, 0});
}

TEST_CASE("scoring: cliff mode demands at least one filler") {
  const Context easy = plain_context(false, false, false);
  const Context cliff = plain_context(false, false, true);
  const std::vector<int> skeleton{TKO, TKC, TAO, Vocab::letter(0), TAC};
  CHECK(score_trajectory(easy, skeleton).format == 1);
  CHECK(score_trajectory(cliff, skeleton).format == 0);
  // ...but accuracy still parses.
  CHECK(score_trajectory(cliff, skeleton).accuracy == 1);

  const std::vector<int> with_filler{TKO, F0, TKC, TAO, Vocab::letter(0), TAC};
  CHECK(score_trajectory(cliff, with_filler) == RewardBreakdown{1, 1, 2});
}

TEST_CASE("scoring: total function over arbitrary sequences") {
  RngStream rng(41);
  const Context ctx = plain_context(true, true, true);
  for (int trial = 0; trial < 20000; ++trial) {
    const auto t = test::random_tokens(Vocab::kSize,
                                       1 + static_cast<int>(rng.below(8)), rng);
    const RewardBreakdown rb = score_trajectory(ctx, t);
    CHECK(rb.total == rb.format + rb.accuracy);
    CHECK(rb.total >= 0);
    CHECK(rb.total <= 2);
    if (rb.format == 1) {
      // Grammar soundness: exactly one letter between the answer tags.
      int open = -1, letters_inside = 0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] == TAO) open = static_cast<int>(i);
        if (open >= 0 && Vocab::is_letter(t[i])) ++letters_inside;
        if (t[i] == TAC) break;
      }
      CHECK(letters_inside == 1);
    }
  }
}

TEST_CASE("scoring rejects precondition violations") {
  const Context ctx = plain_context(false, false);
  CHECK_THROWS_AS(score_trajectory(ctx, std::vector<int>{}), std::invalid_argument);
  CHECK_THROWS_AS(score_trajectory(ctx, std::vector<int>{99}), std::invalid_argument);
}

TEST_CASE("task set: counts forced by the arguments") {
  const TaskSet ts = make_task_set(1, 2, 2, 1, false);
  CHECK(ts.train_contexts.size() == 2);
  REQUIRE(ts.eval_splits.count("ID") == 1);
  REQUIRE(ts.eval_splits.count("OOD1") == 1);
  CHECK(ts.eval_splits.at("ID").size() == 2);
  CHECK(ts.eval_splits.at("OOD1").size() == 2);
  for (const auto& ctx : ts.train_contexts) {
    CHECK_FALSE(ctx.domain.ood);
    CHECK_FALSE(ctx.hint.has_value());
    CHECK_FALSE(ctx.revealed.has_value());
  }
}

TEST_CASE("task set: deterministic given the seed") {
  const TaskSet a = make_task_set(1, 4, 4, 2, true);
  const TaskSet b = make_task_set(1, 4, 4, 2, true);
  REQUIRE(a.train_contexts.size() == b.train_contexts.size());
  for (std::size_t i = 0; i < a.train_contexts.size(); ++i)
    CHECK(a.train_contexts[i] == b.train_contexts[i]);
  for (const auto& [tag, ctxs] : a.eval_splits) {
    const auto& other = b.eval_splits.at(tag);
    REQUIRE(ctxs.size() == other.size());
    for (std::size_t i = 0; i < ctxs.size(); ++i) CHECK(ctxs[i] == other[i]);
  }
  const TaskSet c = make_task_set(2, 4, 4, 2, true);
  CHECK_FALSE(c.train_contexts[0] == a.train_contexts[0]);
}

TEST_CASE("task set: OOD splits share the answer rule and shift only nuisance") {
  const TaskSet ts = make_task_set(11, 8, 8, 3, false);
  for (const auto& [tag, ctxs] : ts.eval_splits)
    for (const auto& ctx : ctxs) {
      CHECK(ctx.rule == ts.answer_rule);
      for (int j = 0; j < ctx.nuisance.size(); ++j) {
        CHECK(ctx.nuisance[j] >= -1.0);
        CHECK(ctx.nuisance[j] <= 1.0);
      }
    }
}

TEST_CASE("task set rejects out-of-range arguments") {
  CHECK_THROWS_AS(make_task_set(1, 0, 2, 1, false), std::invalid_argument);
  CHECK_THROWS_AS(make_task_set(1, 2, 2, 0, false), std::invalid_argument);
  CHECK_THROWS_AS(make_task_set(1, 2, 2, kMaxOodSplits + 1, false),
                  std::invalid_argument);
}

TEST_CASE("cliff property: uniform-random play almost never scores") {
  const TaskSet ts = make_task_set(7, 16, 8, 1, true);
  const double mean = uniform_random_mean_reward(ts, 10000, 123);
  CHECK(mean < 0.01);
  const double rate = uniform_random_positive_rate(ts, 10000, 123);
  CHECK(rate < 0.01);
}

TEST_CASE("task set round-trips through the record file") {
  namespace fs = std::filesystem;
  const TaskSet ts = make_task_set(21, 6, 5, 2, true, {4, true});
  const fs::path path = fs::temp_directory_path() / "kepo_taskset_test.jsonl";
  save_task_set(ts, path.string());
  const TaskSet back = load_task_set(path.string());
  fs::remove(path);

  CHECK(back.answer_rule == ts.answer_rule);
  CHECK(back.cliff_mode == ts.cliff_mode);
  CHECK(back.misleading == ts.misleading);
  CHECK(back.nuisance_dim == ts.nuisance_dim);
  REQUIRE(back.train_contexts.size() == ts.train_contexts.size());
  for (std::size_t i = 0; i < ts.train_contexts.size(); ++i)
    CHECK(back.train_contexts[i] == ts.train_contexts[i]);
  REQUIRE(back.eval_splits.size() == ts.eval_splits.size());
  for (const auto& [tag, ctxs] : ts.eval_splits) {
    const auto& other = back.eval_splits.at(tag);
    REQUIRE(other.size() == ctxs.size());
    for (std::size_t i = 0; i < ctxs.size(); ++i) CHECK(other[i] == ctxs[i]);
  }
}
