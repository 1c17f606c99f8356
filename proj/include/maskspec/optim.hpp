// Adaptive-moment optimizer with decoupled weight decay and optional global-
// norm gradient clipping. Per-element arithmetic runs in double and is cast
// back to the parameter scalar, so a reloaded f32 state resumes bit-exactly.
#pragma once

#include <cmath>

#include "maskspec/common.hpp"
#include "maskspec/model.hpp"

namespace maskspec::train {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;
  double clip_norm = 1.0;
  bool clip_enabled = true;

  void validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw ConfigError("optimizer: betas must be in [0, 1)");
    if (eps <= 0.0) throw ConfigError("optimizer: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
    if (clip_enabled && clip_norm <= 0.0)
      throw ConfigError("optimizer: clip_norm must be positive");
  }
};

// Fixed-order double-precision reduction over all gradient tensors.
template <typename T>
double global_grad_norm(model::ModelState<T>& grads) {
  double sum = 0.0;
  for (auto& ref : model::collect_tensor_refs(grads))
    for (Eigen::Index i = 0; i < ref.size(); ++i) {
      const double g = static_cast<double>(ref.data[i]);
      sum += g * g;
    }
  return std::sqrt(sum);
}

template <typename T>
class AdamW {
 public:
  AdamW(const model::ModelConfig& mc, const OptimizerConfig& oc)
      : cfg_(oc), m_(model::zeros_like_state<T>(mc)), v_(model::zeros_like_state<T>(mc)) {
    cfg_.validate();
  }

  void reset_moments() {
    model::set_zero(m_);
    model::set_zero(v_);
    t_ = 0;
  }

  // One update. Normalization gains/biases and the mask token are exempt
  // from weight decay. Returns the pre-clip global gradient norm.
  double step(model::ModelState<T>& params, model::ModelState<T>& grads, double lr) {
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradients");
    double scale = 1.0;
    if (cfg_.clip_enabled && norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;

    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));

    auto prefs = model::collect_tensor_refs(params);
    auto grefs = model::collect_tensor_refs(grads);
    auto mrefs = model::collect_tensor_refs(m_);
    auto vrefs = model::collect_tensor_refs(v_);
    for (size_t i = 0; i < prefs.size(); ++i) {
      const double wd = model::weight_decay_exempt(prefs[i].name) ? 0.0 : cfg_.weight_decay;
      for (Eigen::Index j = 0; j < prefs[i].size(); ++j) {
        const double g = static_cast<double>(grefs[i].data[j]) * scale;
        const double m_new = cfg_.beta1 * static_cast<double>(mrefs[i].data[j]) + (1.0 - cfg_.beta1) * g;
        const double v_new = cfg_.beta2 * static_cast<double>(vrefs[i].data[j]) + (1.0 - cfg_.beta2) * g * g;
        mrefs[i].data[j] = static_cast<T>(m_new);
        vrefs[i].data[j] = static_cast<T>(v_new);
        const double m_hat = m_new / bc1;
        const double v_hat = v_new / bc2;
        const double theta = static_cast<double>(prefs[i].data[j]);
        const double update = m_hat / (std::sqrt(v_hat) + cfg_.eps) + wd * theta;
        prefs[i].data[j] = static_cast<T>(theta - lr * update);
      }
    }
    return norm;
  }

  const OptimizerConfig& config() const { return cfg_; }
  long long updates() const { return t_; }
  model::ModelState<T>& first_moment() { return m_; }
  model::ModelState<T>& second_moment() { return v_; }
  void set_updates(long long t) { t_ = t; }

 private:
  OptimizerConfig cfg_;
  model::ModelState<T> m_, v_;
  long long t_ = 0;
};

}  // namespace maskspec::train
