#include "kepo/estimators.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace kepo {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double importance_weight(double logp_new, double logp_old) {
  if (!std::isfinite(logp_new) || !std::isfinite(logp_old))
    throw std::domain_error(
        "importance weight over degenerate support (non-finite log-prob)");
  const double w = std::exp(logp_new - logp_old);
  if (!std::isfinite(w) || w <= 0.0)
    throw std::overflow_error("importance weight left (0, inf): exp(" +
                              std::to_string(logp_new - logp_old) + ")");
  return w;
}

double clipped_weight(double ratio, double epsilon) {
  if (!(ratio > 0.0) || !std::isfinite(ratio))
    throw std::invalid_argument("ratio must be positive and finite");
  if (!(epsilon > 0.0) || !(epsilon < 1.0))
    throw std::invalid_argument("clip epsilon must lie in (0, 1)");
  const double clamped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio, clamped);
}

std::vector<double> grpo_advantages(std::span<const double> rewards) {
  if (rewards.empty())
    throw std::invalid_argument("advantages need at least one reward");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  return adv;
}

std::vector<double> rloo_advantages(std::span<const double> rewards) {
  const std::size_t g = rewards.size();
  if (g < 2)
    throw std::invalid_argument("leave-one-out baseline needs G >= 2");
  // (r_i - mean) * G/(G-1) equals r_i - mean(others) and keeps the exact
  // factor-two relation to the group-mean advantages at G=2.
  const double scale = static_cast<double>(g) / static_cast<double>(g - 1);
  std::vector<double> adv = grpo_advantages(rewards);
  for (double& a : adv) a *= scale;
  return adv;
}

double step_kl(const Eigen::VectorXd& logp_p, const Eigen::VectorXd& logp_q) {
  if (logp_p.size() != logp_q.size())
    throw std::invalid_argument("KL over mismatched vocabularies");
  double kl = 0.0;
  for (Eigen::Index v = 0; v < logp_p.size(); ++v) {
    const double p = std::exp(logp_p[v]);
    if (p == 0.0) continue;  // lim p->0 of p log p/q
    if (std::exp(logp_q[v]) == 0.0) return kInf;
    kl += p * (logp_p[v] - logp_q[v]);
  }
  return kl;
}

namespace {

void check_pair(const PolicySnapshot& a, const PolicySnapshot& b,
                std::span<const int> tokens) {
  if (!(a.feature_map() == b.feature_map()))
    throw std::invalid_argument("snapshots use different feature maps");
  if (tokens.empty()) throw std::invalid_argument("empty trajectory");
  if (tokens.size() > static_cast<std::size_t>(a.feature_map().max_len))
    throw std::invalid_argument("trajectory exceeds maximum length");
}

}  // namespace

double reference_kl(const PolicySnapshot& current, const PolicySnapshot& ref,
                    const Context& ctx, std::span<const int> tokens) {
  check_pair(current, ref, tokens);
  double total = 0.0;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const auto prefix = tokens.subspan(0, s);
    const int step = static_cast<int>(s);
    const double kl = step_kl(token_log_distribution(current, ctx, prefix, step),
                              token_log_distribution(ref, ctx, prefix, step));
    if (!std::isfinite(kl)) return kInf;
    total += kl;
  }
  return total;
}

double distill_divergence(const PolicySnapshot& teacher,
                          const PolicySnapshot& student, const Context& ctx,
                          std::span<const int> tokens) {
  check_pair(teacher, student, tokens);
  double total = 0.0;
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    const auto prefix = tokens.subspan(0, s);
    const int step = static_cast<int>(s);
    const double kl = step_kl(token_log_distribution(teacher, ctx, prefix, step),
                              token_log_distribution(student, ctx, prefix, step));
    if (!std::isfinite(kl)) return kInf;
    total += kl;
  }
  return total / static_cast<double>(tokens.size());
}

}  // namespace kepo
