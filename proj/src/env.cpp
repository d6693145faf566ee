#include "kepo/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "kepo/rng.hpp"

namespace kepo {

using nlohmann::json;

std::string Vocab::name(int id) {
  switch (id) {
    case kThinkOpen: return "<think>";
    case kThinkClose: return "</think>";
    case kAnswerOpen: return "<answer>";
    case kAnswerClose: return "</answer>";
    case kEnd: return "<end>";
    default: break;
  }
  if (is_letter(id)) return std::string(1, static_cast<char>('A' + letter_index(id)));
  if (is_filler(id)) return "f" + std::to_string(id - kFillerBase);
  if (is_hint(id)) return "h" + std::to_string(hint_index(id));
  return "?" + std::to_string(id);
}

std::string answer_rule_name(AnswerRule rule) {
  switch (rule) {
    case AnswerRule::kXorAB: return "xor-ab";
  }
  return "xor-ab";
}

AnswerRule parse_answer_rule(const std::string& name) {
  if (name == "xor-ab") return AnswerRule::kXorAB;
  throw std::invalid_argument("unknown answer rule: " + name);
}

std::string DomainTag::str() const {
  return ood ? "OOD" + std::to_string(split) : "ID";
}

DomainTag DomainTag::parse(const std::string& s) {
  if (s == "ID") return {};
  if (s.rfind("OOD", 0) == 0) {
    int k = std::stoi(s.substr(3));
    if (k >= 1 && k <= kMaxOodSplits) return {true, k};
  }
  throw std::invalid_argument("unknown domain tag: " + s);
}

Context Context::with_hint(int hint_token, int answer_letter) const {
  if (!Vocab::is_hint(hint_token))
    throw std::invalid_argument("hint must be a hint-role token");
  if (answer_letter < 0 || answer_letter >= Vocab::kNumLetters)
    throw std::invalid_argument("answer letter out of range");
  Context out = *this;
  out.hint = hint_token;
  out.revealed = answer_letter;
  return out;
}

bool Context::operator==(const Context& o) const {
  return family == o.family && index == o.index && cue0 == o.cue0 &&
         cue1 == o.cue1 && domain == o.domain && rule == o.rule &&
         cliff == o.cliff && hint == o.hint && revealed == o.revealed &&
         nuisance.size() == o.nuisance.size() && nuisance == o.nuisance;
}

int correct_letter(const Context& ctx) {
  switch (ctx.rule) {
    case AnswerRule::kXorAB: return (ctx.cue0 != ctx.cue1) ? 1 : 0;
  }
  return 0;
}

namespace {

// <think> f* </think> <answer> LETTER </answer>, optional trailing <end>;
// cliff tasks require at least one filler.
bool match_grammar(bool cliff, std::span<const int> t) {
  std::size_t n = t.size();
  if (n > 0 && t[n - 1] == Vocab::kEnd) --n;
  if (n < 5) return false;
  std::size_t i = 0;
  if (t[i++] != Vocab::kThinkOpen) return false;
  std::size_t fillers = 0;
  while (i < n && Vocab::is_filler(t[i])) {
    ++i;
    ++fillers;
  }
  if (cliff && fillers < 1) return false;
  if (i >= n || t[i++] != Vocab::kThinkClose) return false;
  if (i >= n || t[i++] != Vocab::kAnswerOpen) return false;
  if (i >= n || !Vocab::is_letter(t[i])) return false;
  ++i;
  if (i >= n || t[i++] != Vocab::kAnswerClose) return false;
  return i == n;
}

// Exactly one answer-tag pair in the whole sequence, wrapping exactly one
// letter. Returns the letter index or -1.
int parse_answer(std::span<const int> t) {
  int n_open = 0, n_close = 0;
  std::size_t open_pos = 0, close_pos = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == Vocab::kAnswerOpen) {
      ++n_open;
      open_pos = i;
    } else if (t[i] == Vocab::kAnswerClose) {
      ++n_close;
      close_pos = i;
    }
  }
  if (n_open != 1 || n_close != 1) return -1;
  if (close_pos != open_pos + 2) return -1;
  if (!Vocab::is_letter(t[open_pos + 1])) return -1;
  return Vocab::letter_index(t[open_pos + 1]);
}

// Nuisance shift pattern of OOD family k (1-based): amplitude grows with k,
// sign pattern varies with the component index.
double ood_shift(int split, int component) {
  const double amp = 0.4 + 0.05 * split;
  const int bit = (split >> (component % 3)) & 1;
  return bit ? -amp : amp;
}

Context sample_context(std::uint64_t seed, std::uint64_t block, int split,
                       int index, const DomainTag& domain, bool cliff,
                       int nuisance_dim) {
  RngStream rng(derive_seed(seed, {block, static_cast<std::uint64_t>(split),
                                   static_cast<std::uint64_t>(index)}));
  Context ctx;
  ctx.index = index;
  // Balanced cue design: cycle through the four configurations so every
  // split exercises the full answer rule.
  const int config = index % 4;
  ctx.cue0 = (config & 1) != 0;
  ctx.cue1 = (config & 2) != 0;
  ctx.domain = domain;
  ctx.cliff = cliff;
  ctx.nuisance.resize(nuisance_dim);
  for (int j = 0; j < nuisance_dim; ++j) {
    double v = rng.uniform(-0.5, 0.5);
    if (domain.ood) v += ood_shift(domain.split, j);
    ctx.nuisance[j] = std::clamp(v, -1.0, 1.0);
  }
  return ctx;
}

}  // namespace

RewardBreakdown score_trajectory(const Context& ctx,
                                 std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("empty trajectory");
  for (int tok : tokens)
    if (!Vocab::valid(tok))
      throw std::invalid_argument("token outside vocabulary: " +
                                  std::to_string(tok));
  RewardBreakdown rb;
  rb.format = match_grammar(ctx.cliff, tokens) ? 1 : 0;
  const int letter = parse_answer(tokens);
  rb.accuracy = (letter >= 0 && letter == correct_letter(ctx)) ? 1 : 0;
  rb.total = rb.format + rb.accuracy;
  return rb;
}

TaskSet make_task_set(std::uint64_t seed, int n_train, int n_eval_per_split,
                      int n_ood_splits, bool cliff_mode,
                      const TaskSetOptions& opt) {
  if (n_train < 1) throw std::invalid_argument("n_train must be >= 1");
  if (n_eval_per_split < 1)
    throw std::invalid_argument("n_eval_per_split must be >= 1");
  if (n_ood_splits < 1)
    throw std::invalid_argument("n_ood_splits must be >= 1");
  if (n_ood_splits > kMaxOodSplits)
    throw std::invalid_argument(
        "n_ood_splits exceeds the configured nuisance-family count (" +
        std::to_string(kMaxOodSplits) + ")");
  if (opt.nuisance_dim < 1 || opt.nuisance_dim > 16)
    throw std::invalid_argument("nuisance_dim must be in [1, 16]");

  TaskSet ts;
  ts.cliff_mode = cliff_mode;
  ts.misleading = opt.misleading;
  ts.nuisance_dim = opt.nuisance_dim;
  ts.n_ood_splits = n_ood_splits;

  for (int i = 0; i < n_train; ++i)
    ts.train_contexts.push_back(
        sample_context(seed, 1, 0, i, DomainTag{}, cliff_mode, opt.nuisance_dim));

  std::vector<Context> id_eval;
  for (int i = 0; i < n_eval_per_split; ++i)
    id_eval.push_back(
        sample_context(seed, 2, 0, i, DomainTag{}, cliff_mode, opt.nuisance_dim));
  ts.eval_splits["ID"] = std::move(id_eval);

  for (int k = 1; k <= n_ood_splits; ++k) {
    DomainTag tag{true, k};
    std::vector<Context> split;
    for (int i = 0; i < n_eval_per_split; ++i)
      split.push_back(
          sample_context(seed, 2, k, i, tag, cliff_mode, opt.nuisance_dim));
    ts.eval_splits[tag.str()] = std::move(split);
  }
  return ts;
}

namespace {

json context_to_json(const Context& ctx, const std::string& split) {
  json j;
  j["record"] = "context";
  j["split"] = split;
  j["family"] = ctx.family;
  j["index"] = ctx.index;
  j["cue"] = {ctx.cue0 ? 1 : 0, ctx.cue1 ? 1 : 0};
  std::vector<double> nuis(ctx.nuisance.data(),
                           ctx.nuisance.data() + ctx.nuisance.size());
  j["nuisance"] = nuis;
  j["domain"] = ctx.domain.str();
  return j;
}

Context context_from_json(const json& j, const TaskSet& ts) {
  Context ctx;
  ctx.family = j.at("family").get<std::string>();
  ctx.index = j.at("index").get<int>();
  auto cue = j.at("cue");
  ctx.cue0 = cue.at(0).get<int>() != 0;
  ctx.cue1 = cue.at(1).get<int>() != 0;
  auto nuis = j.at("nuisance").get<std::vector<double>>();
  ctx.nuisance = Eigen::Map<const Eigen::VectorXd>(nuis.data(),
                                                   static_cast<long>(nuis.size()));
  ctx.domain = DomainTag::parse(j.at("domain").get<std::string>());
  ctx.rule = ts.answer_rule;
  ctx.cliff = ts.cliff_mode;
  return ctx;
}

}  // namespace

void save_task_set(const TaskSet& ts, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  json header;
  header["record"] = "header";
  header["answer_rule"] = answer_rule_name(ts.answer_rule);
  header["cliff"] = ts.cliff_mode;
  header["misleading"] = ts.misleading;
  header["nuisance_dim"] = ts.nuisance_dim;
  header["ood_splits"] = ts.n_ood_splits;
  out << header.dump() << "\n";
  for (const auto& ctx : ts.train_contexts)
    out << context_to_json(ctx, "train").dump() << "\n";
  for (const auto& [tag, ctxs] : ts.eval_splits)
    for (const auto& ctx : ctxs)
      out << context_to_json(ctx, "eval").dump() << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

TaskSet load_task_set(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty task-set file: " + path);
  json header = json::parse(line);
  if (header.at("record").get<std::string>() != "header")
    throw std::runtime_error("task-set file must start with a header record");
  TaskSet ts;
  ts.answer_rule = parse_answer_rule(header.at("answer_rule").get<std::string>());
  ts.cliff_mode = header.at("cliff").get<bool>();
  ts.misleading = header.at("misleading").get<bool>();
  ts.nuisance_dim = header.at("nuisance_dim").get<int>();
  ts.n_ood_splits = header.at("ood_splits").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    if (j.at("record").get<std::string>() != "context")
      throw std::runtime_error("unexpected record kind in " + path);
    Context ctx = context_from_json(j, ts);
    const std::string split = j.at("split").get<std::string>();
    if (split == "train")
      ts.train_contexts.push_back(std::move(ctx));
    else
      ts.eval_splits[ctx.domain.str()].push_back(std::move(ctx));
  }
  return ts;
}

namespace {

template <typename Score>
double uniform_random_stat(const TaskSet& ts, int episodes, std::uint64_t seed,
                           Score score) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  if (ts.train_contexts.empty())
    throw std::invalid_argument("task set has no training contexts");
  RngStream rng(derive_seed(seed, {0x7261776ull}));
  std::vector<int> tokens;
  double acc = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const Context& ctx =
        ts.train_contexts[static_cast<std::size_t>(e) % ts.train_contexts.size()];
    tokens.clear();
    for (int step = 0; step < Vocab::kMaxLen; ++step) {
      int tok = static_cast<int>(rng.below(Vocab::kSize));
      tokens.push_back(tok);
      if (tok == Vocab::kEnd) break;
    }
    acc += score(score_trajectory(ctx, tokens));
  }
  return acc / episodes;
}

}  // namespace

double uniform_random_mean_reward(const TaskSet& ts, int episodes,
                                  std::uint64_t seed) {
  return uniform_random_stat(
      ts, episodes, seed, [](const RewardBreakdown& rb) { return rb.total; });
}

double uniform_random_positive_rate(const TaskSet& ts, int episodes,
                                    std::uint64_t seed) {
  return uniform_random_stat(ts, episodes, seed, [](const RewardBreakdown& rb) {
    return rb.total > 0 ? 1.0 : 0.0;
  });
}

}  // namespace kepo
