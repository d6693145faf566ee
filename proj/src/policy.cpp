#include "kepo/policy.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "kepo/env.hpp"

namespace kepo {

using nlohmann::json;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string snapshot_label_name(SnapshotLabel label) {
  switch (label) {
    case SnapshotLabel::kCurrent: return "CURRENT";
    case SnapshotLabel::kOld: return "OLD";
    case SnapshotLabel::kReference: return "REFERENCE";
    case SnapshotLabel::kTeacher: return "TEACHER";
  }
  return "CURRENT";
}

SnapshotLabel parse_snapshot_label(const std::string& name) {
  if (name == "CURRENT") return SnapshotLabel::kCurrent;
  if (name == "OLD") return SnapshotLabel::kOld;
  if (name == "REFERENCE") return SnapshotLabel::kReference;
  if (name == "TEACHER") return SnapshotLabel::kTeacher;
  throw std::invalid_argument("unknown snapshot label: " + name);
}

std::string provenance_name(Provenance p) {
  return p == Provenance::kOnPolicy ? "on_policy" : "hint_injected";
}

PolicySnapshot::PolicySnapshot(Eigen::MatrixXd weights, FeatureMap feature_map,
                               SnapshotLabel label)
    : weights_(std::move(weights)),
      feature_map_(feature_map),
      label_(label) {
  if (weights_.rows() != feature_map_.vocab_size ||
      weights_.cols() != feature_map_.dim)
    throw std::invalid_argument("weight shape does not match feature map");
  if (!weights_.allFinite())
    throw std::invalid_argument("snapshot weights must be finite");
}

Eigen::MatrixXd& PolicySnapshot::mutable_weights() {
  if (label_ != SnapshotLabel::kCurrent)
    throw std::logic_error("snapshot labelled " + snapshot_label_name(label_) +
                           " is immutable");
  return weights_;
}

PolicySnapshot PolicySnapshot::frozen_as(SnapshotLabel label) const {
  return PolicySnapshot(weights_, feature_map_, label);
}

namespace {

// logits -> (max-subtracted exponentials, their sum). Shared by the linear-
// and log-space distributions so sampled log-probs and recomputed ones agree
// bit for bit.
void stable_exp(const PolicySnapshot& snap, const Context& ctx,
                std::span<const int> prefix, int step, Eigen::VectorXd& shifted,
                double& sum_exp) {
  const FeatureMap& fm = snap.feature_map();
  Eigen::VectorXd phi = fm.features(ctx, prefix, step);
  Eigen::VectorXd logits = snap.weights() * phi;
  if (!logits.allFinite())
    throw std::runtime_error("non-finite logits (policy divergence)");
  const double m = logits.maxCoeff();
  shifted = (logits.array() - m).matrix();
  sum_exp = shifted.array().exp().sum();
}

}  // namespace

Eigen::VectorXd token_distribution(const PolicySnapshot& snap,
                                   const Context& ctx,
                                   std::span<const int> prefix, int step) {
  Eigen::VectorXd shifted;
  double sum_exp = 0.0;
  stable_exp(snap, ctx, prefix, step, shifted, sum_exp);
  return (shifted.array().exp() / sum_exp).matrix();
}

Eigen::VectorXd token_log_distribution(const PolicySnapshot& snap,
                                       const Context& ctx,
                                       std::span<const int> prefix, int step) {
  Eigen::VectorXd shifted;
  double sum_exp = 0.0;
  stable_exp(snap, ctx, prefix, step, shifted, sum_exp);
  const double log_z = std::log(sum_exp);
  return (shifted.array() - log_z).matrix();
}

Trajectory sample_trajectory(const PolicySnapshot& snap, const Context& ctx,
                             RngStream& rng) {
  const FeatureMap& fm = snap.feature_map();
  Trajectory tr;
  tr.sampling_context = ctx;
  tr.tokens.reserve(fm.max_len);
  for (int step = 0; step < fm.max_len; ++step) {
    Eigen::VectorXd shifted;
    double sum_exp = 0.0;
    stable_exp(snap, ctx, tr.tokens, step, shifted, sum_exp);
    const double log_z = std::log(sum_exp);
    const double u = rng.uniform01() * sum_exp;
    double acc = 0.0;
    int tok = -1;
    int last_positive = -1;
    for (int v = 0; v < fm.vocab_size; ++v) {
      const double e = std::exp(shifted[v]);
      if (e > 0.0) last_positive = v;
      acc += e;
      if (u < acc) {
        tok = v;
        break;
      }
    }
    if (tok < 0) tok = last_positive;  // u landed on accumulated round-off
    tr.tokens.push_back(tok);
    tr.step_logprobs.push_back(shifted[tok] - log_z);
    if (tok == fm.end_token) break;
  }
  double total = 0.0;
  for (double lp : tr.step_logprobs) total += lp;
  tr.total_logprob = total;
  tr.plain_old_logprob = total;
  return tr;
}

std::vector<int> greedy_trajectory(const PolicySnapshot& snap,
                                   const Context& ctx) {
  const FeatureMap& fm = snap.feature_map();
  std::vector<int> tokens;
  tokens.reserve(fm.max_len);
  for (int step = 0; step < fm.max_len; ++step) {
    Eigen::VectorXd p = token_distribution(snap, ctx, tokens, step);
    Eigen::Index tok = 0;
    p.maxCoeff(&tok);
    tokens.push_back(static_cast<int>(tok));
    if (tok == fm.end_token) break;
  }
  return tokens;
}

double trajectory_logprob(const PolicySnapshot& snap, const Context& ctx,
                          std::span<const int> tokens) {
  const FeatureMap& fm = snap.feature_map();
  if (tokens.size() > static_cast<std::size_t>(fm.max_len))
    throw std::invalid_argument("trajectory exceeds maximum length");
  double total = 0.0;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const int tok = tokens[s];
    if (tok < 0 || tok >= fm.vocab_size)
      throw std::invalid_argument("token outside vocabulary");
    Eigen::VectorXd shifted;
    double sum_exp = 0.0;
    stable_exp(snap, ctx, tokens.subspan(0, s), static_cast<int>(s), shifted,
               sum_exp);
    if (std::exp(shifted[tok]) == 0.0) return -kInf;  // zero-probability token
    total += shifted[tok] - std::log(sum_exp);
  }
  return total;
}

Eigen::MatrixXd grad_trajectory_logprob(const PolicySnapshot& snap,
                                        const Context& ctx,
                                        std::span<const int> tokens) {
  const FeatureMap& fm = snap.feature_map();
  if (tokens.size() > static_cast<std::size_t>(fm.max_len))
    throw std::invalid_argument("trajectory exceeds maximum length");
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const int tok = tokens[s];
    if (tok < 0 || tok >= fm.vocab_size)
      throw std::invalid_argument("token outside vocabulary");
    Eigen::VectorXd phi =
        fm.features(ctx, tokens.subspan(0, s), static_cast<int>(s));
    Eigen::VectorXd p =
        token_distribution(snap, ctx, tokens.subspan(0, s), static_cast<int>(s));
    grad.noalias() -= p * phi.transpose();
    grad.row(tok) += phi;
  }
  return grad;
}

PolicySnapshot make_teacher(const TaskSet& ts, double strength) {
  if (!(strength > 0.0))
    throw std::invalid_argument("teacher strength must be > 0");
  const FeatureMap fm = FeatureMap::standard(ts.nuisance_dim);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  const double chain = 2.5 * strength;
  const double cue = 1.0 * strength;
  const double hint = 3.0 * strength;

  // Tag chain with a single filler: the margin construction makes the
  // grammar-conforming sequence dominate step by step.
  w(Vocab::kThinkOpen, fm.f_step(0)) += chain;
  w(Vocab::kFillerBase, fm.f_prev(Vocab::kThinkOpen)) += chain;
  w(Vocab::kThinkClose, fm.f_prev(Vocab::kFillerBase)) += chain;
  w(Vocab::kAnswerOpen, fm.f_prev(Vocab::kThinkClose)) += chain;
  for (int k = 0; k < Vocab::kNumLetters; ++k) {
    w(Vocab::letter(k), fm.f_prev(Vocab::kAnswerOpen)) += chain;
    w(Vocab::kAnswerClose, fm.f_prev(Vocab::letter(k))) += chain;
  }
  w(Vocab::kEnd, fm.f_prev(Vocab::kAnswerClose)) += chain;

  // Answer rule: cue configuration selects the letter.
  for (int config = 0; config < 4; ++config) {
    Context probe;
    probe.cue0 = (config & 1) != 0;
    probe.cue1 = (config & 2) != 0;
    probe.rule = ts.answer_rule;
    w(Vocab::letter(correct_letter(probe)), fm.f_cue(config)) += cue;
  }

  // Hint channel: with the answer revealed, the matching hint symbol wins.
  for (int k = 0; k < Vocab::kNumHints; ++k)
    w(Vocab::hint(k), fm.f_revealed(k)) += hint;

  // Misleading variant: conditioned on a decoy filler the teacher drifts to
  // letter D, which the answer rule never selects.
  if (ts.misleading) {
    for (int f = Vocab::kFillerBase + 1; f < Vocab::kFillerBase + Vocab::kNumFillers;
         ++f)
      w(Vocab::letter(3), fm.f_prev(f)) += chain;
  }
  return PolicySnapshot(std::move(w), fm, SnapshotLabel::kTeacher);
}

PolicySnapshot init_policy(const FeatureMap& fm, const InitPriors& priors) {
  if (fm.kind != FeatureKind::kStandard)
    throw std::invalid_argument("init_policy needs the standard feature map");
  if (priors.format_prior < 0 || priors.hint_letter_prior < 0 ||
      priors.hint_tag_prior < 0)
    throw std::invalid_argument("init priors must be non-negative");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim);
  const double c = priors.format_prior;
  if (c > 0.0) {
    w(Vocab::kThinkOpen, fm.f_step(0)) += c;
    w(Vocab::kThinkClose, fm.f_prev(Vocab::kThinkOpen)) += c;
    w(Vocab::kAnswerOpen, fm.f_prev(Vocab::kThinkClose)) += c;
    for (int k = 0; k < Vocab::kNumLetters; ++k) {
      w(Vocab::letter(k), fm.f_prev(Vocab::kAnswerOpen)) += c;
      w(Vocab::kAnswerClose, fm.f_prev(Vocab::letter(k))) += c;
    }
    w(Vocab::kEnd, fm.f_prev(Vocab::kAnswerClose)) += c;
  }
  for (int k = 0; k < Vocab::kNumLetters; ++k) {
    w(Vocab::letter(k), fm.f_hint(k)) += priors.hint_letter_prior;
    w(Vocab::letter(k), fm.f_revealed(k)) += priors.hint_letter_prior;
  }
  w(Vocab::kAnswerOpen, fm.f_hint_present()) += priors.hint_tag_prior;
  w(Vocab::kAnswerClose, fm.f_hint_present()) += priors.hint_tag_prior;
  return PolicySnapshot(std::move(w), fm, SnapshotLabel::kCurrent);
}

void save_snapshot(const PolicySnapshot& snap, const std::string& path) {
  const FeatureMap& fm = snap.feature_map();
  json j;
  j["label"] = snapshot_label_name(snap.label());
  json fmj;
  fmj["kind"] = fm.kind == FeatureKind::kStandard ? "standard" : "compact";
  fmj["vocab_size"] = fm.vocab_size;
  fmj["end_token"] = fm.end_token;
  fmj["max_len"] = fm.max_len;
  fmj["nuisance_dim"] = fm.nuisance_dim;
  fmj["dim"] = fm.dim;
  j["feature_map"] = fmj;
  json rows = json::array();
  for (int r = 0; r < snap.weights().rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < snap.weights().cols(); ++c)
      row.push_back(snap.weights()(r, c));
    rows.push_back(std::move(row));
  }
  j["weights"] = std::move(rows);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicySnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  json j = json::parse(in);
  const json& fmj = j.at("feature_map");
  FeatureMap fm;
  const std::string kind = fmj.at("kind").get<std::string>();
  if (kind == "standard") {
    fm = FeatureMap::standard(fmj.at("nuisance_dim").get<int>());
  } else if (kind == "compact") {
    fm = FeatureMap::compact(fmj.at("vocab_size").get<int>(),
                             fmj.at("dim").get<int>(),
                             fmj.at("max_len").get<int>());
  } else {
    throw std::runtime_error("unknown feature-map kind: " + kind);
  }
  if (fm.dim != fmj.at("dim").get<int>() ||
      fm.vocab_size != fmj.at("vocab_size").get<int>() ||
      fm.end_token != fmj.at("end_token").get<int>() ||
      fm.max_len != fmj.at("max_len").get<int>())
    throw std::runtime_error("feature-map descriptor mismatch in " + path);
  const json& rows = j.at("weights");
  Eigen::MatrixXd w(fm.vocab_size, fm.dim);
  if (static_cast<int>(rows.size()) != fm.vocab_size)
    throw std::runtime_error("weight row count mismatch in " + path);
  for (int r = 0; r < fm.vocab_size; ++r) {
    const json& row = rows.at(r);
    if (static_cast<int>(row.size()) != fm.dim)
      throw std::runtime_error("weight column count mismatch in " + path);
    for (int c = 0; c < fm.dim; ++c) w(r, c) = row.at(c).get<double>();
  }
  return PolicySnapshot(std::move(w), fm,
                        parse_snapshot_label(j.at("label").get<std::string>()));
}

}  // namespace kepo
