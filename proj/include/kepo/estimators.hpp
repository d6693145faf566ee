#pragma once

#include <span>
#include <vector>

#include "kepo/policy.hpp"

namespace kepo {

// exp(logp_new - logp_old). Throws std::domain_error on non-finite inputs
// (degenerate support) and std::overflow_error when the ratio is not a
// positive finite number.
double importance_weight(double logp_new, double logp_old);

// min(ratio, clamp(ratio, 1-eps, 1+eps)); never exceeds 1+eps or the ratio.
double clipped_weight(double ratio, double epsilon);

// Leave-one-out advantages: r_i - mean of the others. Computed as
// (r_i - mean) * G/(G-1) so that at G=2 they are exactly twice the
// group-mean advantages. Requires G >= 2.
std::vector<double> rloo_advantages(std::span<const double> rewards);

// Group-mean advantages: r_i - mean(r).
std::vector<double> grpo_advantages(std::span<const double> rewards);

// Exact KL between two step distributions given as log-probs over the full
// vocabulary. Returns +inf when q has zero mass where p does not.
double step_kl(const Eigen::VectorXd& logp_p, const Eigen::VectorXd& logp_q);

// Sum over the trajectory's visited prefixes of the exact per-step
// KL(current || ref), each over the full vocabulary. +inf sentinel when the
// reference loses support.
double reference_kl(const PolicySnapshot& current, const PolicySnapshot& ref,
                    const Context& ctx, std::span<const int> tokens);

// Length-normalized forward KL(teacher || student) along the trajectory's
// prefixes, in nats per token. +inf sentinel when the student loses support
// where the teacher has mass; training must fail loudly on that.
double distill_divergence(const PolicySnapshot& teacher,
                          const PolicySnapshot& student, const Context& ctx,
                          std::span<const int> tokens);

}  // namespace kepo
