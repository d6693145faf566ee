#pragma once

#include <Eigen/Core>
#include <span>

#include "kepo/env.hpp"
#include "kepo/tokens.hpp"

namespace kepo {

enum class FeatureKind { kStandard, kCompact };

// Deterministic featurization of (context, prefix, step). All features are
// bounded in [-1, 1] and the same descriptor always produces the same
// vector for the same inputs.
//
// The standard layout is
//   [ bias | cue-config one-hot (4) | nuisance (n) |
//     hint-present | hint one-hot (4) | revealed-present | revealed one-hot (4) |
//     previous-token one-hot (V) | step one-hot (max_len) ]
//
// The compact layout ([ bias | previous-token one-hot | step one-hot ],
// truncated to `dim`) has no task content and exists for small numerical
// testbeds such as finite-difference checks.
struct FeatureMap {
  FeatureKind kind = FeatureKind::kStandard;
  int vocab_size = Vocab::kSize;
  int end_token = Vocab::kEnd;
  int max_len = Vocab::kMaxLen;
  int nuisance_dim = 4;
  int dim = 0;

  static FeatureMap standard(int nuisance_dim);
  static FeatureMap compact(int vocab_size, int dim, int max_len);

  void features(const Context& ctx, std::span<const int> prefix, int step,
                Eigen::VectorXd& out) const;
  Eigen::VectorXd features(const Context& ctx, std::span<const int> prefix,
                           int step) const;

  // Feature indices of the standard layout, used by the snapshot builders.
  int f_bias() const { return 0; }
  int f_cue(int config) const { return 1 + config; }
  int f_nuisance(int j) const { return 5 + j; }
  int f_hint_present() const { return 5 + nuisance_dim; }
  int f_hint(int k) const { return 6 + nuisance_dim + k; }
  int f_revealed_present() const { return 10 + nuisance_dim; }
  int f_revealed(int k) const { return 11 + nuisance_dim + k; }
  int f_prev(int token) const { return 15 + nuisance_dim + token; }
  int f_step(int s) const { return 15 + nuisance_dim + vocab_size + s; }

  bool operator==(const FeatureMap&) const = default;
};

}  // namespace kepo
