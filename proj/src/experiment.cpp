#include "kepo/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "kepo/estimators.hpp"

namespace kepo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::string& path,
                         const std::set<std::string>& allowed) {
  for (const auto& item : obj.items())
    if (!allowed.contains(item.key()))
      throw ConfigError(path + "." + item.key() + ": unknown key");
}

template <typename T>
T take(const json& obj, const std::string& path, const std::string& key,
       T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": wrong type");
  }
}

// Writes through a temporary name; the real name appears only on commit.
class AtomicFile {
 public:
  explicit AtomicFile(const fs::path& path)
      : path_(path), tmp_(path.string() + ".tmp"), out_(tmp_, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + tmp_.string());
  }
  std::ofstream& stream() { return out_; }
  void commit() {
    out_.flush();
    if (!out_) throw std::runtime_error("write failed: " + tmp_.string());
    out_.close();
    fs::rename(tmp_, path_);
    committed_ = true;
  }
  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(tmp_, ec);
    }
  }

 private:
  fs::path path_;
  fs::path tmp_;
  std::ofstream out_;
  bool committed_ = false;
};

}  // namespace

ExperimentConfig parse_experiment_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  reject_unknown_keys(j, "config",
                      {"method", "output_dir", "task", "rollout", "objective",
                       "train"});
  ExperimentConfig cfg;

  if (!j.contains("method")) throw ConfigError("config.method: required");
  try {
    cfg.train.method = parse_method(j.at("method").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.method: ") + e.what());
  }
  cfg.output_dir = take<std::string>(j, "config", "output_dir", "out");

  const json task = j.value("task", json::object());
  reject_unknown_keys(task, "config.task",
                      {"seed", "n_train", "n_eval_per_split", "n_ood_splits",
                       "cliff", "misleading", "nuisance_dim"});
  cfg.task.seed = take<std::uint64_t>(task, "config.task", "seed", 1);
  cfg.task.n_train = take<int>(task, "config.task", "n_train", 16);
  cfg.task.n_eval_per_split =
      take<int>(task, "config.task", "n_eval_per_split", 64);
  cfg.task.n_ood_splits = take<int>(task, "config.task", "n_ood_splits", 3);
  cfg.task.cliff = take<bool>(task, "config.task", "cliff", false);
  cfg.task.misleading = take<bool>(task, "config.task", "misleading", false);
  cfg.task.nuisance_dim = take<int>(task, "config.task", "nuisance_dim", 4);

  const json rollout = j.value("rollout", json::object());
  reject_unknown_keys(rollout, "config.rollout",
                      {"group_size", "budget", "injected", "hint_enabled"});
  cfg.train.rollout.group_size =
      take<int>(rollout, "config.rollout", "group_size", 8);
  cfg.train.rollout.budget = take<int>(rollout, "config.rollout", "budget", 8);
  cfg.train.rollout.injected =
      take<int>(rollout, "config.rollout", "injected", 1);
  cfg.train.rollout.hint_enabled =
      take<bool>(rollout, "config.rollout", "hint_enabled", true);

  const json obj = j.value("objective", json::object());
  reject_unknown_keys(obj, "config.objective",
                      {"estimator", "clip_epsilon", "kl_beta", "distill_tau",
                       "distill_alpha", "gate_strict", "gkd_lambda",
                       "inner_epochs", "mixed_pool_advantages",
                       "naive_injected_ratio"});
  try {
    cfg.train.objective.estimator = parse_estimator(
        take<std::string>(obj, "config.objective", "estimator", "grpo"));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.objective.estimator: ") + e.what());
  }
  cfg.train.objective.clip_epsilon =
      take<double>(obj, "config.objective", "clip_epsilon", 0.2);
  cfg.train.objective.kl_beta =
      take<double>(obj, "config.objective", "kl_beta", 0.04);
  cfg.train.objective.distill_tau =
      take<double>(obj, "config.objective", "distill_tau", 1.0);
  cfg.train.objective.distill_alpha =
      take<double>(obj, "config.objective", "distill_alpha", 1.0);
  cfg.train.objective.gate_strict =
      take<bool>(obj, "config.objective", "gate_strict", false);
  cfg.train.objective.gkd_lambda =
      take<double>(obj, "config.objective", "gkd_lambda", 1.0);
  cfg.train.objective.inner_epochs =
      take<int>(obj, "config.objective", "inner_epochs", 1);
  cfg.train.objective.mixed_pool_advantages =
      take<bool>(obj, "config.objective", "mixed_pool_advantages", true);
  cfg.train.objective.naive_injected_ratio =
      take<bool>(obj, "config.objective", "naive_injected_ratio", false);

  const json train = j.value("train", json::object());
  reject_unknown_keys(
      train, "config.train",
      {"seed", "steps", "epochs", "groups_per_step", "learning_rate",
       "eval_every", "eval_episodes_per_context", "teacher_strength",
       "offline_dataset_size", "init_format_prior", "init_hint_letter_prior",
       "init_hint_tag_prior", "trace_rollouts"});
  cfg.train.seed = take<std::uint64_t>(train, "config.train", "seed", 1);
  cfg.train.schedule.steps = take<int>(train, "config.train", "steps", 0);
  cfg.train.schedule.epochs = take<int>(train, "config.train", "epochs", 5);
  cfg.train.schedule.groups_per_step =
      take<int>(train, "config.train", "groups_per_step", 16);
  cfg.train.learning_rate =
      take<double>(train, "config.train", "learning_rate", 0.05);
  cfg.train.eval_every = take<int>(train, "config.train", "eval_every", 10);
  cfg.train.eval_episodes_per_context =
      take<int>(train, "config.train", "eval_episodes_per_context", 1);
  cfg.train.teacher_strength =
      take<double>(train, "config.train", "teacher_strength", 10.0);
  cfg.train.offline_dataset_size =
      take<int>(train, "config.train", "offline_dataset_size", 256);
  cfg.train.init.format_prior =
      take<double>(train, "config.train", "init_format_prior", 0.0);
  cfg.train.init.hint_letter_prior =
      take<double>(train, "config.train", "init_hint_letter_prior", 2.0);
  cfg.train.init.hint_tag_prior =
      take<double>(train, "config.train", "init_hint_tag_prior", 2.4);
  cfg.train.trace_rollouts =
      take<bool>(train, "config.train", "trace_rollouts", false);

  // Method resolution: only the full kepo method explores with hints, and
  // plain grpo carries no distillation term.
  if (cfg.train.method != Method::kKepo) cfg.train.rollout.hint_enabled = false;
  if (cfg.train.method == Method::kGrpo) cfg.train.objective.distill_alpha = 0.0;

  try {
    cfg.train.validate();
    if (cfg.task.n_train < 1) throw std::invalid_argument("n_train must be >= 1");
    if (cfg.task.n_eval_per_split < 1)
      throw std::invalid_argument("n_eval_per_split must be >= 1");
    if (cfg.task.n_ood_splits < 1 || cfg.task.n_ood_splits > kMaxOodSplits)
      throw std::invalid_argument("n_ood_splits must be in [1, " +
                                  std::to_string(kMaxOodSplits) + "]");
    if (cfg.task.nuisance_dim < 1 || cfg.task.nuisance_dim > 16)
      throw std::invalid_argument("nuisance_dim must be in [1, 16]");
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

json resolved_config_json(const ExperimentConfig& cfg) {
  json j;
  j["method"] = method_name(cfg.train.method);
  j["output_dir"] = cfg.output_dir;
  j["task"] = {{"seed", cfg.task.seed},
               {"n_train", cfg.task.n_train},
               {"n_eval_per_split", cfg.task.n_eval_per_split},
               {"n_ood_splits", cfg.task.n_ood_splits},
               {"cliff", cfg.task.cliff},
               {"misleading", cfg.task.misleading},
               {"nuisance_dim", cfg.task.nuisance_dim}};
  j["rollout"] = {{"group_size", cfg.train.rollout.group_size},
                  {"budget", cfg.train.rollout.budget},
                  {"injected", cfg.train.rollout.injected},
                  {"hint_enabled", cfg.train.rollout.hint_enabled}};
  j["objective"] = {
      {"estimator", estimator_name(cfg.train.objective.estimator)},
      {"clip_epsilon", cfg.train.objective.clip_epsilon},
      {"kl_beta", cfg.train.objective.kl_beta},
      {"distill_tau", cfg.train.objective.distill_tau},
      {"distill_alpha", cfg.train.objective.distill_alpha},
      {"gate_strict", cfg.train.objective.gate_strict},
      {"gkd_lambda", cfg.train.objective.gkd_lambda},
      {"inner_epochs", cfg.train.objective.inner_epochs},
      {"mixed_pool_advantages", cfg.train.objective.mixed_pool_advantages},
      {"naive_injected_ratio", cfg.train.objective.naive_injected_ratio}};
  j["train"] = {{"seed", cfg.train.seed},
                {"steps", cfg.train.schedule.steps},
                {"epochs", cfg.train.schedule.epochs},
                {"groups_per_step", cfg.train.schedule.groups_per_step},
                {"learning_rate", cfg.train.learning_rate},
                {"eval_every", cfg.train.eval_every},
                {"eval_episodes_per_context", cfg.train.eval_episodes_per_context},
                {"teacher_strength", cfg.train.teacher_strength},
                {"offline_dataset_size", cfg.train.offline_dataset_size},
                {"init_format_prior", cfg.train.init.format_prior},
                {"init_hint_letter_prior", cfg.train.init.hint_letter_prior},
                {"init_hint_tag_prior", cfg.train.init.hint_tag_prior},
                {"trace_rollouts", cfg.train.trace_rollouts}};
  return j;
}

TaskSet task_set_from_params(const TaskParams& p) {
  TaskSetOptions opt;
  opt.nuisance_dim = p.nuisance_dim;
  opt.misleading = p.misleading;
  return make_task_set(p.seed, p.n_train, p.n_eval_per_split, p.n_ood_splits,
                       p.cliff, opt);
}

namespace {

json step_record_json(const StepRecord& r) {
  return json{{"kind", "step"},
              {"step", r.step},
              {"group_count", r.group_count},
              {"mean_reward", r.mean_reward},
              {"reward_positive_group_fraction", r.reward_positive_group_fraction},
              {"triggered_fraction", r.triggered_fraction},
              {"discarded_fraction", r.discarded_fraction},
              {"distilled_count", r.distilled_count},
              {"pg_term", r.pg_term},
              {"distill_term", r.distill_term},
              {"ref_kl_term", r.ref_kl_term},
              {"injected_leak_fraction", r.injected_leak_fraction}};
}

json checkpoint_record_json(const CheckpointRecord& r) {
  json ood = json::object();
  for (const auto& [tag, a] : r.ood_accuracy) ood[tag] = a;
  return json{{"kind", "checkpoint"},
              {"step", r.step},
              {"id_accuracy", r.id_accuracy},
              {"ood_accuracy", ood},
              {"ood_accuracy_mean", r.ood_accuracy_mean}};
}

json trace_record_json(const GroupTraceRecord& r) {
  return json{{"kind", "group"},
              {"step", r.step},
              {"group", r.group},
              {"context_index", r.context_index},
              {"rewards", r.rewards},
              {"triggered", r.triggered},
              {"attempts_used", r.attempts_used},
              {"injected_count", r.injected_count},
              {"discarded", r.discarded},
              {"provenance", r.provenance}};
}

void write_metrics(const RunMetrics& m, const fs::path& path) {
  AtomicFile file(path);
  // Chronological stream: the checkpoint after k updates precedes the
  // records of steps k, k+1, ...
  std::size_t ci = 0;
  auto flush_checkpoints = [&](int upto) {
    while (ci < m.checkpoints.size() && m.checkpoints[ci].step <= upto)
      file.stream() << checkpoint_record_json(m.checkpoints[ci++]).dump() << "\n";
  };
  for (const StepRecord& r : m.steps) {
    flush_checkpoints(r.step);
    file.stream() << step_record_json(r).dump() << "\n";
  }
  flush_checkpoints(std::numeric_limits<int>::max());
  file.commit();
}

void write_checkpoint_csv(const RunMetrics& m, const fs::path& path) {
  AtomicFile file(path);
  std::vector<std::string> ood_tags;
  if (!m.checkpoints.empty())
    for (const auto& [tag, a] : m.checkpoints.front().ood_accuracy)
      ood_tags.push_back(tag);
  file.stream() << "step,id_accuracy,ood_accuracy_mean";
  for (const auto& tag : ood_tags) file.stream() << "," << tag;
  file.stream() << "\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const CheckpointRecord& r : m.checkpoints) {
    file.stream() << r.step << "," << fmt(r.id_accuracy) << ","
                  << fmt(r.ood_accuracy_mean);
    for (const auto& tag : ood_tags)
      file.stream() << "," << fmt(r.ood_accuracy.at(tag));
    file.stream() << "\n";
  }
  file.commit();
}

void write_trace(const RunMetrics& m, const fs::path& path) {
  AtomicFile file(path);
  for (const GroupTraceRecord& r : m.trace)
    file.stream() << trace_record_json(r).dump() << "\n";
  file.commit();
}

}  // namespace

TrainResult run_experiment(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  const fs::path dir(cfg.output_dir);

  const TaskSet ts = task_set_from_params(cfg.task);
  {
    AtomicFile file(dir / "resolved_config.json");
    file.stream() << resolved_config_json(cfg).dump(2) << "\n";
    file.commit();
  }

  TrainResult res = train_run(ts, cfg.train);

  write_metrics(res.metrics, dir / "metrics.jsonl");
  write_checkpoint_csv(res.metrics, dir / "checkpoints.csv");
  if (cfg.train.trace_rollouts) write_trace(res.metrics, dir / "rollout_trace.jsonl");
  save_task_set(ts, (dir / "tasks.jsonl").string());
  save_snapshot(res.final_policy, (dir / "weights.json").string());
  return res;
}

namespace {

json strip_method_fields(json j) {
  j.erase("method");
  j.erase("output_dir");
  if (j.contains("objective")) {
    j["objective"].erase("distill_tau");
    j["objective"].erase("distill_alpha");
    j["objective"].erase("gate_strict");
    j["objective"].erase("gkd_lambda");
  }
  if (j.contains("rollout")) j["rollout"].erase("hint_enabled");
  if (j.contains("train")) j["train"].erase("seed");
  return j;
}

std::string first_difference(const json& a, const json& b,
                             const std::string& path) {
  if (a.is_object() && b.is_object()) {
    for (const auto& item : a.items()) {
      const std::string sub = path + "." + item.key();
      if (!b.contains(item.key())) return sub;
      const std::string d = first_difference(item.value(), b.at(item.key()), sub);
      if (!d.empty()) return d;
    }
    for (const auto& item : b.items())
      if (!a.contains(item.key())) return path + "." + item.key();
    return "";
  }
  return a == b ? "" : path;
}

}  // namespace

int compare_experiments(const CompareOptions& opts) {
  if (opts.config_paths.size() < 2)
    throw ConfigError("compare needs at least two configs");
  if (opts.seeds.empty()) throw ConfigError("compare needs at least one seed");

  std::vector<ExperimentConfig> configs;
  for (const auto& path : opts.config_paths)
    configs.push_back(load_experiment_config(path));

  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].task.seed != configs.front().task.seed)
      throw ConfigError(
          "task seeds differ across configs (" +
          std::to_string(configs.front().task.seed) + " vs " +
          std::to_string(configs[i].task.seed) +
          "); the comparison would be confounded");
    if (!(configs[i].task == configs.front().task))
      throw ConfigError("task blocks differ across configs; the comparison "
                        "would be confounded");
    const json a = strip_method_fields(resolved_config_json(configs.front()));
    const json b = strip_method_fields(resolved_config_json(configs[i]));
    const std::string diff = first_difference(a, b, "config");
    if (!diff.empty())
      throw ConfigError("configs may differ only in method and gating fields; "
                        "first difference at " + diff);
  }

  fs::create_directories(opts.output_dir);
  const fs::path dir(opts.output_dir);

  struct Row {
    std::string method;
    std::uint64_t seed;
    int step;
    double id_accuracy, ood_mean, triggered, positive;
  };
  std::vector<Row> rows;

  for (const ExperimentConfig& base : configs) {
    const std::string mname = method_name(base.train.method);
    for (std::uint64_t seed : opts.seeds) {
      ExperimentConfig cfg = base;
      cfg.train.seed = seed;
      cfg.output_dir =
          (dir / (mname + "-seed" + std::to_string(seed))).string();
      const TrainResult res = run_experiment(cfg);
      const int cadence = cfg.train.eval_every;
      for (const CheckpointRecord& ck : res.metrics.checkpoints) {
        // Window averages of the per-step diagnostics since the previous
        // checkpoint.
        double trig = 0.0, pos = 0.0;
        int n = 0;
        for (const StepRecord& st : res.metrics.steps)
          if (st.step >= ck.step - cadence && st.step < ck.step) {
            trig += st.triggered_fraction;
            pos += st.reward_positive_group_fraction;
            ++n;
          }
        rows.push_back(Row{mname, seed, ck.step, ck.id_accuracy,
                           ck.ood_accuracy_mean, n ? trig / n : 0.0,
                           n ? pos / n : 0.0});
      }
    }
  }

  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  {
    AtomicFile file(dir / "summary.csv");
    file.stream() << "method,seed,step,id_accuracy,ood_mean,triggered_fraction,"
                     "reward_positive_group_fraction\n";
    for (const Row& r : rows)
      file.stream() << r.method << "," << r.seed << "," << r.step << ","
                    << fmt(r.id_accuracy) << "," << fmt(r.ood_mean) << ","
                    << fmt(r.triggered) << "," << fmt(r.positive) << "\n";
    file.commit();
  }
  {
    // Per-method mean curves over seeds.
    std::map<std::pair<std::string, int>, std::vector<const Row*>> buckets;
    for (const Row& r : rows) buckets[{r.method, r.step}].push_back(&r);
    AtomicFile file(dir / "summary_mean.csv");
    file.stream() << "method,step,id_accuracy,ood_mean,triggered_fraction,"
                     "reward_positive_group_fraction\n";
    for (const auto& [key, group] : buckets) {
      double id = 0, ood = 0, trig = 0, pos = 0;
      for (const Row* r : group) {
        id += r->id_accuracy;
        ood += r->ood_mean;
        trig += r->triggered;
        pos += r->positive;
      }
      const double n = static_cast<double>(group.size());
      file.stream() << key.first << "," << key.second << "," << fmt(id / n)
                    << "," << fmt(ood / n) << "," << fmt(trig / n) << ","
                    << fmt(pos / n) << "\n";
    }
    file.commit();
  }
  return 0;
}

int evaluate_weights(const std::string& weights_path,
                     const std::string& taskset_path,
                     int episodes_per_context) {
  const PolicySnapshot snap = load_snapshot(weights_path);
  const TaskSet ts = load_task_set(taskset_path);
  RngStream rng(0);
  const auto acc = evaluate(snap, ts.eval_splits, episodes_per_context, rng);
  std::printf("split,accuracy\n");
  for (const auto& [tag, a] : acc) std::printf("%s,%.10g\n", tag.c_str(), a);
  return 0;
}

}  // namespace kepo
