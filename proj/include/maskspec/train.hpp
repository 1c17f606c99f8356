// Two-phase pretraining loop. Phase A trains the spectral objective alone
// under fixed-ratio patch masking, its own warmup/decay schedule, and then
// hands its parameters to the joint phase, which adds the temporal objective
// under chained segment masking with freshly reset optimizer moments.
// Every random draw comes from a stream derived from (seed, purpose, step,
// id), so an interrupted run resumed from a checkpoint retraces the original
// step for step.
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "maskspec/audio.hpp"
#include "maskspec/checkpoint.hpp"
#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/model.hpp"
#include "maskspec/optim.hpp"
#include "maskspec/quant.hpp"
#include "maskspec/schedule.hpp"

namespace maskspec::train {

struct TrainPlan {
  long long phase_a_steps = 100000;
  long long joint_steps = 150000;
  int batch_size = 8;
  uint64_t seed = 0;
  double lambda = 0.75;

  long long total_steps() const { return phase_a_steps + joint_steps; }

  void validate() const {
    if (phase_a_steps < 0 || joint_steps < 0 || total_steps() <= 0)
      throw ConfigError("train plan: step counts must be non-negative and total positive");
    if (batch_size <= 0) throw ConfigError("train plan: batch_size must be positive");
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("train plan: lambda must be in [0, 1]");
  }
};

struct TrainerConfig {
  TrainPlan plan;
  LrScheduleConfig lr;  // shape only; each phase gets its own total_steps
  OptimizerConfig opt;
  masking::MaskConfig mask;  // rates; the mode is forced per phase
  long long log_every = 1;
  long long checkpoint_every = 0;  // 0: checkpoints at phase ends only
};

// Precomputed features and quantized targets for one training clip.
struct TrainClip {
  std::string id;
  MatF patch_vecs;  // (N * R_s) x P^2, grid order
  quant::TargetSet targets;
};

TrainClip prepare_clip(const std::string& id, const audio::MelSpectrogram& mel,
                       const grid::GridConfig& gc, const quant::Codebook& cb_s,
                       const quant::Codebook& cb_t,
                       const std::vector<int>* external_labels = nullptr);

enum class Phase { kA, kJoint };

inline std::string phase_name(Phase p) { return p == Phase::kA ? "A" : "joint"; }

class Trainer {
 public:
  Trainer(const model::ModelConfig& mc, const grid::GridConfig& gc, const TrainerConfig& tc,
          std::vector<TrainClip> corpus, const ArtifactHashes& hashes = {});

  void init_params(uint64_t init_seed);
  void resume(const std::filesystem::path& checkpoint_dir);

  // Runs until the plan completes or max_steps have executed here (negative:
  // no cap). Writes one log row per log_every steps and checkpoints into
  // checkpoint_dir (subdirectories ckpt-<step>) at the configured interval
  // and at both phase ends. Returns the number of steps executed.
  long long run(const std::filesystem::path& checkpoint_dir, std::ostream* log,
                long long max_steps = -1);

  // Executes exactly one step, including any phase-boundary action.
  loss::LossBreakdown train_step();

  Phase phase_at(long long step) const {
    return step < cfg_.plan.phase_a_steps ? Phase::kA : Phase::kJoint;
  }
  double lr_for(long long step) const;

  long long global_step() const { return global_step_; }
  model::ModelState<float>& params() { return params_; }
  const model::ModelState<float>& last_grads() const { return grads_; }
  AdamW<float>& optimizer() { return opt_; }
  double last_grad_norm() const { return last_grad_norm_; }
  double last_lr() const { return last_lr_; }
  // Parameter hash captured when the joint phase took over, for verifying
  // that the boundary carries parameters unchanged.
  std::optional<uint64_t> boundary_params_hash() const { return boundary_hash_; }
  const std::vector<TrainClip>& corpus() const { return corpus_; }

 private:
  loss::LossBreakdown execute_step(long long step);
  void write_checkpoint(const std::filesystem::path& dir) ;

  model::ModelConfig mcfg_;
  grid::GridConfig gcfg_;
  TrainerConfig cfg_;
  std::vector<TrainClip> corpus_;
  ArtifactHashes hashes_;
  model::ModelState<float> params_;
  model::ModelState<float> grads_;
  AdamW<float> opt_;
  LrScheduleConfig sched_a_, sched_joint_;
  long long global_step_ = 0;
  bool initialized_ = false;
  std::optional<uint64_t> boundary_hash_;
  double last_grad_norm_ = 0.0;
  double last_lr_ = 0.0;
};

// Shortest round-trip decimal form, used for log rows so that equal doubles
// give equal text.
std::string format_double(double v);

}  // namespace maskspec::train
