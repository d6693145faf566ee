#include "kepo/features.hpp"

#include <stdexcept>
#include <string>

namespace kepo {

FeatureMap FeatureMap::standard(int nuisance_dim) {
  if (nuisance_dim < 0 || nuisance_dim > 16)
    throw std::invalid_argument("nuisance_dim must be in [0, 16]");
  FeatureMap fm;
  fm.kind = FeatureKind::kStandard;
  fm.vocab_size = Vocab::kSize;
  fm.end_token = Vocab::kEnd;
  fm.max_len = Vocab::kMaxLen;
  fm.nuisance_dim = nuisance_dim;
  fm.dim = 15 + nuisance_dim + Vocab::kSize + Vocab::kMaxLen;
  return fm;
}

FeatureMap FeatureMap::compact(int vocab_size, int dim, int max_len) {
  if (vocab_size < 2) throw std::invalid_argument("vocab_size must be >= 2");
  if (dim < 1) throw std::invalid_argument("dim must be >= 1");
  if (dim > 128) throw std::invalid_argument("dim must be <= 128");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  FeatureMap fm;
  fm.kind = FeatureKind::kCompact;
  fm.vocab_size = vocab_size;
  fm.end_token = vocab_size - 1;
  fm.max_len = max_len;
  fm.nuisance_dim = 0;
  fm.dim = dim;
  return fm;
}

void FeatureMap::features(const Context& ctx, std::span<const int> prefix,
                          int step, Eigen::VectorXd& out) const {
  if (step < 0 || step >= max_len)
    throw std::invalid_argument("step " + std::to_string(step) +
                                " outside [0, " + std::to_string(max_len) + ")");
  out.setZero(dim);
  if (kind == FeatureKind::kCompact) {
    out[0] = 1.0;
    if (!prefix.empty()) {
      const int idx = 1 + prefix.back();
      if (idx < dim) out[idx] = 1.0;
    }
    const int sidx = 1 + vocab_size + step;
    if (sidx < dim) out[sidx] = 1.0;
    return;
  }
  if (ctx.nuisance.size() != nuisance_dim)
    throw std::invalid_argument("context nuisance dimension " +
                                std::to_string(ctx.nuisance.size()) +
                                " does not match feature map (" +
                                std::to_string(nuisance_dim) + ")");
  out[f_bias()] = 1.0;
  out[f_cue(ctx.cue_config())] = 1.0;
  for (int j = 0; j < nuisance_dim; ++j) out[f_nuisance(j)] = ctx.nuisance[j];
  if (ctx.hint) {
    out[f_hint_present()] = 1.0;
    out[f_hint(Vocab::hint_index(*ctx.hint))] = 1.0;
  }
  if (ctx.revealed) {
    out[f_revealed_present()] = 1.0;
    out[f_revealed(*ctx.revealed)] = 1.0;
  }
  if (!prefix.empty()) out[f_prev(prefix.back())] = 1.0;
  out[f_step(step)] = 1.0;
}

Eigen::VectorXd FeatureMap::features(const Context& ctx,
                                     std::span<const int> prefix,
                                     int step) const {
  Eigen::VectorXd out(dim);
  features(ctx, prefix, step, out);
  return out;
}

}  // namespace kepo
