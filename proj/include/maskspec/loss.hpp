// Masked-prediction losses: cross-entropy over masked spectral patches,
// cross-entropy over temporal frames of masked segments, and their weighted
// combination.
#pragma once

#include <vector>

#include "maskspec/common.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/quant.hpp"

namespace maskspec::loss {

struct LossBreakdown {
  double spectral = 0.0;
  double temporal = 0.0;
  double total = 0.0;
  int n_masked_segments = 0;
  double lambda = 0.0;
};

// Log-sum-exp stabilized cross-entropy of one logit row against an integer
// target. Returns the loss; if probs_out is non-null it receives softmax(row).
template <typename T>
double cross_entropy(const Eigen::Ref<const Vec<T>>& logits, int target, Vec<T>* probs_out = nullptr) {
  if (target < 0 || target >= logits.size()) throw GeometryError("cross_entropy: target out of range");
  const T max_logit = logits.maxCoeff();
  double sum_exp = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    sum_exp += std::exp(static_cast<double>(logits[i] - max_logit));
  const double lse = static_cast<double>(max_logit) + std::log(sum_exp);
  if (probs_out) {
    probs_out->resize(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i)
      (*probs_out)[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - lse));
  }
  return lse - static_cast<double>(logits[target]);
}

// Mean cross-entropy over the masked patch positions. Segment mode averages
// over |M| * R_s terms; patch mode over the masked patch set directly.
// logits: (N * R_s) x K_s, one row per global patch index.
template <typename T>
double spectral_loss(const Mat<T>& logits, const quant::TargetSet& targets,
                     const masking::MaskPlan& plan, const grid::GridConfig& grid) {
  if (plan.masked.empty()) throw NumericError("spectral_loss: empty mask");
  const int r_s = grid.patches_per_segment();
  const std::vector<int> patches = masking::masked_patch_indices(plan, grid);
  double sum = 0.0;
  for (int g : patches) {
    const int n = g / r_s;
    const int k = g % r_s;
    sum += cross_entropy<T>(logits.row(g).transpose(), targets.spectral(n, k));
  }
  return sum / static_cast<double>(patches.size());
}

// Gradient of spectral_loss with respect to the logits, same shape as logits.
// Rows of unmasked patches stay zero.
template <typename T>
Mat<T> spectral_loss_grad(const Mat<T>& logits, const quant::TargetSet& targets,
                          const masking::MaskPlan& plan, const grid::GridConfig& grid) {
  if (plan.masked.empty()) throw NumericError("spectral_loss_grad: empty mask");
  const int r_s = grid.patches_per_segment();
  const std::vector<int> patches = masking::masked_patch_indices(plan, grid);
  const T inv = static_cast<T>(1.0 / static_cast<double>(patches.size()));
  Mat<T> grad = Mat<T>::Zero(logits.rows(), logits.cols());
  Vec<T> probs;
  for (int g : patches) {
    const int n = g / r_s;
    const int k = g % r_s;
    const int target = targets.spectral(n, k);
    cross_entropy<T>(logits.row(g).transpose(), target, &probs);
    probs[target] -= static_cast<T>(1);
    grad.row(g) = (probs * inv).transpose();
  }
  return grad;
}

// Mean cross-entropy over all R_t frames of each masked segment. Defined
// only for segment-mode plans. logits: one N x K_t matrix per frame
// position j.
template <typename T>
double temporal_loss(const std::vector<Mat<T>>& logits_per_frame, const quant::TargetSet& targets,
                     const masking::MaskPlan& plan, const grid::GridConfig& grid) {
  if (plan.mode != masking::MaskMode::kSegment)
    throw ConfigError("temporal_loss: defined only over whole masked segments");
  if (plan.masked.empty()) throw NumericError("temporal_loss: empty mask");
  const int r_t = grid.frames_per_segment();
  if (static_cast<int>(logits_per_frame.size()) != r_t)
    throw GeometryError("temporal_loss: expected one logit matrix per frame position");
  double sum = 0.0;
  for (int n : plan.masked)
    for (int j = 0; j < r_t; ++j)
      sum += cross_entropy<T>(logits_per_frame[static_cast<size_t>(j)].row(n).transpose(),
                              targets.temporal(n, j));
  return sum / static_cast<double>(plan.masked.size() * static_cast<size_t>(r_t));
}

template <typename T>
std::vector<Mat<T>> temporal_loss_grad(const std::vector<Mat<T>>& logits_per_frame,
                                       const quant::TargetSet& targets,
                                       const masking::MaskPlan& plan, const grid::GridConfig& grid) {
  if (plan.mode != masking::MaskMode::kSegment)
    throw ConfigError("temporal_loss_grad: defined only over whole masked segments");
  if (plan.masked.empty()) throw NumericError("temporal_loss_grad: empty mask");
  const int r_t = grid.frames_per_segment();
  const T inv = static_cast<T>(1.0 / (static_cast<double>(plan.masked.size()) * r_t));
  std::vector<Mat<T>> grads;
  grads.reserve(logits_per_frame.size());
  for (const auto& m : logits_per_frame) grads.push_back(Mat<T>::Zero(m.rows(), m.cols()));
  Vec<T> probs;
  for (int n : plan.masked)
    for (int j = 0; j < r_t; ++j) {
      const int target = targets.temporal(n, j);
      cross_entropy<T>(logits_per_frame[static_cast<size_t>(j)].row(n).transpose(), target, &probs);
      probs[target] -= static_cast<T>(1);
      grads[static_cast<size_t>(j)].row(n) = (probs * inv).transpose();
    }
  return grads;
}

inline double total_loss(double spectral, double temporal, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("total_loss: lambda must be in [0,1]");
  return lambda * temporal + (1.0 - lambda) * spectral;
}

}  // namespace maskspec::loss
