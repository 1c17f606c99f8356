// Finite-difference verification of the manual gradients, run in double
// precision on a tiny model: every parameter is perturbed by +/-h and the
// central difference is compared against the analytic gradient.
#pragma once

#include <cmath>
#include <string>

#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/model.hpp"
#include "maskspec/quant.hpp"

namespace maskspec::model {

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::string worst_tensor;
  Eigen::Index worst_index = 0;
  long long n_checked = 0;
  double h = 0.0;
};

inline ModelConfig gradcheck_tiny_model() {
  ModelConfig mc;
  mc.d_model = 8;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.mlp_ratio = 4;
  mc.k_s = 5;
  mc.k_t = 5;
  mc.r_s = 2;
  mc.r_t = 2;
  mc.n_max = 2;
  mc.patch_dim = 16;
  return mc;
}

inline grid::GridConfig gradcheck_tiny_grid() {
  grid::GridConfig gc;
  gc.segment_frames = 4;
  gc.frame_width = 2;
  gc.n_mels = 8;
  return gc;
}

inline GradcheckReport run_gradcheck(const ModelConfig& mc, const grid::GridConfig& gc,
                                     uint64_t seed, double lambda = 0.75, bool joint = true,
                                     double h = 1e-5) {
  mc.validate();
  gc.validate();
  if (gc.patches_per_segment() != mc.r_s || gc.frames_per_segment() != mc.r_t ||
      gc.patch_dim() != mc.patch_dim)
    throw GeometryError("gradcheck: grid and model geometry disagree");

  ModelState<double> state = init_model_state<double>(mc, seed);

  const int n_segments = mc.n_max;
  const int n_patches = n_segments * mc.r_s;
  Rng patch_rng = Rng::derive(seed, "gradcheck-patches");
  Mat<double> patches(n_patches, mc.patch_dim);
  for (Eigen::Index c = 0; c < patches.cols(); ++c)
    for (Eigen::Index r = 0; r < patches.rows(); ++r) patches(r, c) = patch_rng.normal();

  Rng target_rng = Rng::derive(seed, "gradcheck-targets");
  quant::TargetSet targets;
  targets.spectral.resize(n_segments, mc.r_s);
  targets.temporal.resize(n_segments, mc.r_t);
  for (int n = 0; n < n_segments; ++n) {
    for (int k = 0; k < mc.r_s; ++k)
      targets.spectral(n, k) = static_cast<int>(target_rng.uniform_below(static_cast<uint64_t>(mc.k_s)));
    for (int j = 0; j < mc.r_t; ++j)
      targets.temporal(n, j) = static_cast<int>(target_rng.uniform_below(static_cast<uint64_t>(mc.k_t)));
  }

  Rng mask_rng = Rng::derive(seed, "gradcheck-mask");
  masking::MaskConfig mask_cfg;
  masking::MaskPlan plan;
  if (joint) {
    mask_cfg.mode = masking::MaskMode::kSegment;
    plan = masking::sample_segment_mask(n_segments, mask_cfg, mask_rng);
  } else {
    mask_cfg.mode = masking::MaskMode::kPatch;
    plan = masking::sample_patch_mask(n_patches, mask_cfg, mask_rng);
  }
  const ClipExample<double> example{patches, plan, targets};

  ModelState<double> grads = zeros_like_state<double>(mc);
  clip_loss(mc, state, gc, example, lambda, joint, &grads);

  auto loss_value = [&]() {
    return clip_loss(mc, state, gc, example, lambda, joint,
                     static_cast<ModelState<double>*>(nullptr))
        .total;
  };

  GradcheckReport report;
  report.h = h;
  auto prefs = collect_tensor_refs(state);
  auto grefs = collect_tensor_refs(grads);
  for (size_t ti = 0; ti < prefs.size(); ++ti) {
    for (Eigen::Index i = 0; i < prefs[ti].size(); ++i) {
      const double saved = prefs[ti].data[i];
      prefs[ti].data[i] = saved + h;
      const double up = loss_value();
      prefs[ti].data[i] = saved - h;
      const double down = loss_value();
      prefs[ti].data[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = grefs[ti].data[i];
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
      const double rel = std::abs(fd - analytic) / denom;
      ++report.n_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_tensor = prefs[ti].name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace maskspec::model
