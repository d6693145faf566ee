#pragma once

#include <Eigen/Core>
#include <vector>

#include "kepo/policy.hpp"
#include "kepo/rng.hpp"

namespace kepo::test {

inline PolicySnapshot random_snapshot(const FeatureMap& fm, RngStream& rng,
                                      double scale = 1.0,
                                      SnapshotLabel label = SnapshotLabel::kCurrent) {
  Eigen::MatrixXd w(fm.vocab_size, fm.dim);
  for (int r = 0; r < fm.vocab_size; ++r)
    for (int c = 0; c < fm.dim; ++c) w(r, c) = rng.uniform(-scale, scale);
  return PolicySnapshot(std::move(w), fm, label);
}

inline PolicySnapshot zero_snapshot(const FeatureMap& fm,
                                    SnapshotLabel label = SnapshotLabel::kCurrent) {
  return PolicySnapshot(Eigen::MatrixXd::Zero(fm.vocab_size, fm.dim), fm, label);
}

inline std::vector<int> random_tokens(int vocab, int len, RngStream& rng) {
  std::vector<int> t(len);
  for (int& x : t) x = static_cast<int>(rng.below(vocab));
  return t;
}

// Largest relative deviation between two matrices, measured against the
// bigger of the reference's largest magnitude and 1.
inline double rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double scale = std::max(want.cwiseAbs().maxCoeff(), 1.0);
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

}  // namespace kepo::test
