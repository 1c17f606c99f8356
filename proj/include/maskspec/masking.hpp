// Mask plan sampling for both pretraining phases: chained segment-level
// masking for the joint phase, fixed-ratio patch-level masking for
// initialization.
#pragma once

#include <vector>

#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"

namespace maskspec::masking {

enum class MaskMode { kSegment, kPatch };

struct MaskConfig {
  MaskMode mode = MaskMode::kSegment;
  double p = 0.6;          // base mask probability (segment mode)
  double p_prime = 0.2;    // propagation probability (segment mode)
  double patch_ratio = 0.6;
  uint64_t seed = 0;       // base seed; callers derive per-step streams

  void validate() const;
};

struct MaskPlan {
  MaskMode mode;
  std::vector<int> masked;  // sorted segment indices (segment mode) or global patch indices (patch mode)
  int n_total;              // population size
};

// Left-to-right pass: segment n is masked if Bernoulli(p) fires, or if
// segment n-1 is masked (by any cause) and Bernoulli(p') fires. An empty
// result is resampled with fresh randomness, up to max_retries.
MaskPlan sample_segment_mask(int n_segments, const MaskConfig& config, Rng& rng, int max_retries = 100);

// Exactly round(patch_ratio * n_patches) distinct indices, uniform without
// replacement.
MaskPlan sample_patch_mask(int n_patches, const MaskConfig& config, Rng& rng);

// Segment mode expands each masked segment to its R_s patch indices
// (segment-major order); patch mode returns the stored set unchanged.
std::vector<int> masked_patch_indices(const MaskPlan& plan, const grid::GridConfig& grid);

// Per-position marginal mask probability under the chained process:
// q_1 = p, q_n = p + (1 - p) * q_{n-1} * p'.
std::vector<double> segment_mask_marginals(int n_segments, double p, double p_prime);

// Fixed point of the recursion, p / (1 - (1-p) * p').
double segment_mask_fixed_point(double p, double p_prime);

}  // namespace maskspec::masking
