// Piecewise-linear learning-rate schedule: warmup from lr_start to lr_peak
// over the first warmup_frac of the run, then linear decay to lr_end. The
// lerp form a*(1-u) + b*u makes the endpoint values exact.
#pragma once

#include <cmath>

#include "maskspec/common.hpp"

namespace maskspec::train {

struct LrScheduleConfig {
  double lr_start = 1e-6;
  double lr_peak = 1e-4;
  double lr_end = 1e-6;
  double warmup_frac = 0.1;
  long long total_steps = 0;

  long long warmup_steps() const { return std::llround(warmup_frac * static_cast<double>(total_steps)); }

  void validate() const {
    if (total_steps <= 0) throw ConfigError("schedule: total_steps must be positive");
    if (warmup_frac < 0.0 || warmup_frac > 1.0)
      throw ConfigError("schedule: warmup_frac must be in [0, 1]");
    if (lr_start <= 0.0 || lr_peak <= 0.0 || lr_end <= 0.0)
      throw ConfigError("schedule: learning rates must be positive");
  }
};

inline double lerp(double a, double b, double u) { return a * (1.0 - u) + b * u; }

// Defined on step in [0, total_steps]; both segments agree exactly at the
// warmup boundary.
inline double lr_at(const LrScheduleConfig& cfg, long long step) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps) throw ConfigError("lr_at: step outside schedule");
  const long long w = cfg.warmup_steps();
  if (step <= w) {
    if (w == 0) return cfg.lr_peak;
    return lerp(cfg.lr_start, cfg.lr_peak, static_cast<double>(step) / static_cast<double>(w));
  }
  return lerp(cfg.lr_peak, cfg.lr_end,
              static_cast<double>(step - w) / static_cast<double>(cfg.total_steps - w));
}

}  // namespace maskspec::train
