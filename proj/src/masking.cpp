#include "maskspec/masking.hpp"

#include <algorithm>
#include <cmath>

namespace maskspec::masking {

void MaskConfig::validate() const {
  if (p < 0 || p > 1) throw ConfigError("masking: p must be in [0,1]");
  if (p_prime < 0 || p_prime > 1) throw ConfigError("masking: p' must be in [0,1]");
  if (patch_ratio < 0 || patch_ratio > 1) throw ConfigError("masking: patch_ratio must be in [0,1]");
}

MaskPlan sample_segment_mask(int n_segments, const MaskConfig& config, Rng& rng, int max_retries) {
  config.validate();
  if (config.mode != MaskMode::kSegment) throw ConfigError("sample_segment_mask: mode must be segment");
  if (n_segments < 1) throw ConfigError("sample_segment_mask: need at least one segment");

  for (int attempt = 0; attempt < max_retries; ++attempt) {
    std::vector<int> masked;
    bool prev_masked = false;
    for (int n = 0; n < n_segments; ++n) {
      bool hit = rng.bernoulli(config.p);
      if (!hit && prev_masked) hit = rng.bernoulli(config.p_prime);
      if (hit) masked.push_back(n);
      prev_masked = hit;
    }
    if (!masked.empty()) return MaskPlan{MaskMode::kSegment, std::move(masked), n_segments};
  }
  throw NumericError("sample_segment_mask: retry budget exhausted without a non-empty mask");
}

MaskPlan sample_patch_mask(int n_patches, const MaskConfig& config, Rng& rng) {
  config.validate();
  if (config.mode != MaskMode::kPatch) throw ConfigError("sample_patch_mask: mode must be patch");
  if (n_patches < 1) throw ConfigError("sample_patch_mask: need at least one patch");

  const int k = static_cast<int>(std::lround(config.patch_ratio * n_patches));
  if (k == 0) throw ConfigError("sample_patch_mask: ratio rounds to an empty mask");

  std::vector<int> masked = rng.sample_without_replacement(n_patches, k);
  std::sort(masked.begin(), masked.end());
  return MaskPlan{MaskMode::kPatch, std::move(masked), n_patches};
}

std::vector<int> masked_patch_indices(const MaskPlan& plan, const grid::GridConfig& grid) {
  if (plan.mode == MaskMode::kPatch) return plan.masked;
  const int r_s = grid.patches_per_segment();
  std::vector<int> out;
  out.reserve(plan.masked.size() * static_cast<size_t>(r_s));
  for (int n : plan.masked)
    for (int k = 0; k < r_s; ++k) out.push_back(n * r_s + k);
  return out;
}

std::vector<double> segment_mask_marginals(int n_segments, double p, double p_prime) {
  std::vector<double> q(static_cast<size_t>(n_segments));
  double prev = 0.0;
  for (int n = 0; n < n_segments; ++n) {
    double cur = p + (1.0 - p) * prev * p_prime;
    q[static_cast<size_t>(n)] = cur;
    prev = cur;
  }
  return q;
}

double segment_mask_fixed_point(double p, double p_prime) {
  return p / (1.0 - (1.0 - p) * p_prime);
}

}  // namespace maskspec::masking
