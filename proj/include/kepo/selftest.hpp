#pragma once

#include <string>
#include <vector>

namespace kepo {

struct CheckResult {
  std::string name;
  bool ok = false;
  std::string detail;
};

// Compact invariant suite runnable from the CLI: estimator identities,
// softmax normalization, gradient finite-difference spot checks, KL
// properties, rollout structure and reward bounds.
std::vector<CheckResult> run_selftests();

}  // namespace kepo
