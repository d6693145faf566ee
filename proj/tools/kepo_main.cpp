#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kepo/experiment.hpp"
#include "kepo/selftest.hpp"

namespace {

int cmd_run(const std::string& config_path) {
  const kepo::ExperimentConfig cfg = kepo::load_experiment_config(config_path);
  kepo::run_experiment(cfg);
  return 0;
}

int cmd_compare(const std::vector<std::string>& configs,
                const std::vector<std::uint64_t>& seeds,
                const std::string& out_dir) {
  kepo::CompareOptions opts;
  opts.config_paths = configs;
  opts.seeds = seeds;
  opts.output_dir = out_dir;
  return kepo::compare_experiments(opts);
}

int cmd_selftest() {
  const auto results = kepo::run_selftests();
  bool all_ok = true;
  for (const auto& r : results) {
    std::printf("[%s] %s%s%s\n", r.ok ? "PASS" : "FAIL", r.name.c_str(),
                r.detail.empty() ? "" : " — ", r.detail.c_str());
    all_ok = all_ok && r.ok;
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-based policy optimization on synthetic sparse-reward "
               "reasoning tasks"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Execute one training run from a config");
  run->add_option("config", config_path, "JSON config file")->required();

  std::vector<std::string> compare_configs;
  std::vector<std::uint64_t> seeds;
  std::string compare_out = "compare_out";
  auto* compare = app.add_subcommand(
      "compare", "Run several configs over shared seeds and merge the curves");
  compare->add_option("configs", compare_configs, "JSON config files")
      ->required()
      ->expected(-2);
  compare->add_option("--seeds", seeds, "training seeds")
      ->required()
      ->delimiter(',');
  compare->add_option("--out", compare_out, "output directory");

  std::string weights_path, taskset_path;
  int eval_episodes = 1;
  auto* eval = app.add_subcommand("eval", "Evaluate a weight file on a task set");
  eval->add_option("weights", weights_path, "weight file")->required();
  eval->add_option("taskset", taskset_path, "task-set file")->required();
  eval->add_option("--episodes", eval_episodes, "episodes per context");

  auto* selftest =
      app.add_subcommand("selftest", "Run the built-in invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (compare->parsed()) return cmd_compare(compare_configs, seeds, compare_out);
    if (eval->parsed())
      return kepo::evaluate_weights(weights_path, taskset_path, eval_episodes);
    if (selftest->parsed()) return cmd_selftest();
  } catch (const kepo::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const kepo::DivergenceError& e) {
    std::fprintf(stderr, "training diverged at step %d: %s\n", e.step(),
                 e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
