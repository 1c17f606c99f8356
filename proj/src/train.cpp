#include "maskspec/train.hpp"

#include <charconv>
#include <chrono>
#include <cmath>

namespace maskspec::train {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

TrainClip prepare_clip(const std::string& id, const audio::MelSpectrogram& mel,
                       const grid::GridConfig& gc, const quant::Codebook& cb_s,
                       const quant::Codebook& cb_t, const std::vector<int>* external_labels) {
  TrainClip clip;
  clip.id = id;
  grid::SegmentGrid g = grid::segment(mel, gc);
  clip.patch_vecs = grid::patch_vectors(g);
  clip.targets = quant::build_targets(mel, gc, cb_s, cb_t, external_labels);
  return clip;
}

Trainer::Trainer(const model::ModelConfig& mc, const grid::GridConfig& gc,
                 const TrainerConfig& tc, std::vector<TrainClip> corpus,
                 const ArtifactHashes& hashes)
    : mcfg_(mc),
      gcfg_(gc),
      cfg_(tc),
      corpus_(std::move(corpus)),
      hashes_(hashes),
      params_(model::zeros_like_state<float>(mc)),
      grads_(model::zeros_like_state<float>(mc)),
      opt_(mc, tc.opt) {
  mcfg_.validate();
  gcfg_.validate();
  cfg_.plan.validate();
  if (corpus_.empty()) throw ConfigError("trainer: empty corpus");
  const Eigen::Index rows = corpus_.front().patch_vecs.rows();
  for (const auto& c : corpus_)
    if (c.patch_vecs.rows() != rows || c.patch_vecs.cols() != mcfg_.patch_dim)
      throw GeometryError("trainer: inconsistent clip geometry in corpus");
  if (rows % gcfg_.patches_per_segment() != 0)
    throw GeometryError("trainer: patch count not a multiple of R_s");

  sched_a_ = cfg_.lr;
  sched_a_.total_steps = std::max<long long>(cfg_.plan.phase_a_steps, 1);
  sched_joint_ = cfg_.lr;
  sched_joint_.total_steps = std::max<long long>(cfg_.plan.joint_steps, 1);
  sched_a_.validate();
  sched_joint_.validate();
}

void Trainer::init_params(uint64_t init_seed) {
  params_ = model::init_model_state<float>(mcfg_, init_seed);
  opt_.reset_moments();
  global_step_ = 0;
  boundary_hash_.reset();
  initialized_ = true;
}

void Trainer::resume(const fs::path& checkpoint_dir) {
  CheckpointMeta meta =
      load_checkpoint(checkpoint_dir, params_, &opt_.first_moment(), &opt_.second_moment());
  if (meta.hashes.model != hashes_.model)
    throw ConfigError("resume: checkpoint was produced under a different model configuration");
  if (meta.hashes.feature != hashes_.feature)
    throw ConfigError("resume: checkpoint was produced under a different feature configuration");
  if (meta.hashes.trainer != hashes_.trainer)
    throw ConfigError("resume: checkpoint was produced under a different trainer configuration");
  if (meta.seed != cfg_.plan.seed)
    throw ConfigError("resume: checkpoint seed differs from the configured seed");
  if (meta.step > cfg_.plan.total_steps())
    throw ConfigError("resume: checkpoint is past the end of the plan");
  opt_.set_updates(meta.adam_updates);
  global_step_ = meta.step;
  boundary_hash_.reset();
  initialized_ = true;
}

double Trainer::lr_for(long long step) const {
  if (phase_at(step) == Phase::kA) return lr_at(sched_a_, step);
  return lr_at(sched_joint_, step - cfg_.plan.phase_a_steps);
}

loss::LossBreakdown Trainer::train_step() {
  if (!initialized_) throw ConfigError("trainer: parameters not initialized");
  if (global_step_ >= cfg_.plan.total_steps()) throw ConfigError("trainer: plan already complete");
  const long long step = global_step_;
  if (step == cfg_.plan.phase_a_steps && cfg_.plan.joint_steps > 0) {
    boundary_hash_ = model::state_hash(params_);
    opt_.reset_moments();
  }
  loss::LossBreakdown bd = execute_step(step);
  ++global_step_;
  return bd;
}

loss::LossBreakdown Trainer::execute_step(long long step) {
  const Phase phase = phase_at(step);
  const bool joint = phase == Phase::kJoint;
  const double lr = lr_for(step);
  last_lr_ = lr;

  const int n_patches = static_cast<int>(corpus_.front().patch_vecs.rows());
  const int n_segments = n_patches / gcfg_.patches_per_segment();
  const int batch = cfg_.plan.batch_size;
  const auto n_clips = static_cast<uint64_t>(corpus_.size());

  model::set_zero(grads_);
  Rng pick = Rng::derive(cfg_.plan.seed, "batch", static_cast<uint64_t>(step));

  double sum_spectral = 0.0, sum_temporal = 0.0, sum_total = 0.0;
  int sum_masked = 0;
  for (int slot = 0; slot < batch; ++slot) {
    const auto idx = static_cast<size_t>(pick.uniform_below(n_clips));
    Rng mask_rng = Rng::derive(cfg_.plan.seed, "mask", static_cast<uint64_t>(step),
                               static_cast<uint64_t>(idx));
    masking::MaskConfig mc = cfg_.mask;
    masking::MaskPlan plan;
    if (joint) {
      mc.mode = masking::MaskMode::kSegment;
      plan = masking::sample_segment_mask(n_segments, mc, mask_rng);
    } else {
      mc.mode = masking::MaskMode::kPatch;
      plan = masking::sample_patch_mask(n_patches, mc, mask_rng);
    }

    const model::ClipExample<float> example{corpus_[idx].patch_vecs, plan, corpus_[idx].targets};
    Rng drop_rng = Rng::derive(cfg_.plan.seed, "dropout", static_cast<uint64_t>(step),
                               static_cast<uint64_t>(slot));
    loss::LossBreakdown bd =
        model::clip_loss(mcfg_, params_, gcfg_, example, cfg_.plan.lambda, joint, &grads_,
                         mcfg_.dropout_rate > 0.0 ? &drop_rng : nullptr);
    sum_spectral += bd.spectral;
    sum_temporal += bd.temporal;
    sum_total += bd.total;
    sum_masked += bd.n_masked_segments;
  }

  // The loss is the batch mean of per-clip losses; gradients follow by
  // linearity.
  model::scale_state(grads_, 1.0f / static_cast<float>(batch));
  last_grad_norm_ = opt_.step(params_, grads_, lr);

  loss::LossBreakdown mean;
  mean.spectral = sum_spectral / batch;
  mean.temporal = sum_temporal / batch;
  mean.total = sum_total / batch;
  mean.lambda = joint ? cfg_.plan.lambda : 0.0;
  mean.n_masked_segments = sum_masked;
  return mean;
}

void Trainer::write_checkpoint(const fs::path& dir) {
  CheckpointMeta meta;
  meta.step = global_step_;
  meta.phase = phase_name(global_step_ > 0 ? phase_at(global_step_ - 1) : Phase::kA);
  meta.seed = cfg_.plan.seed;
  meta.adam_updates = opt_.updates();
  meta.hashes = hashes_;
  save_checkpoint(dir / ("ckpt-" + std::to_string(global_step_)), meta, params_,
                  &opt_.first_moment(), &opt_.second_moment());
}

long long Trainer::run(const fs::path& checkpoint_dir, std::ostream* log, long long max_steps) {
  if (!initialized_) throw ConfigError("trainer: parameters not initialized");
  using clock = std::chrono::steady_clock;
  if (log && global_step_ == 0) *log << "step,lr,spectral,temporal,total,wall_ms\n";

  long long executed = 0;
  while (global_step_ < cfg_.plan.total_steps() && executed != max_steps) {
    const auto t0 = clock::now();
    loss::LossBreakdown bd = train_step();
    const auto wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - t0).count();
    ++executed;

    if (log && (global_step_ % cfg_.log_every == 0 || global_step_ == cfg_.plan.total_steps())) {
      *log << global_step_ << ',' << format_double(last_lr_) << ',' << format_double(bd.spectral)
           << ',' << format_double(bd.temporal) << ',' << format_double(bd.total) << ','
           << wall_ms << '\n';
      log->flush();
    }

    if (!checkpoint_dir.empty()) {
      const bool interval = cfg_.checkpoint_every > 0 && global_step_ % cfg_.checkpoint_every == 0;
      const bool phase_end = global_step_ == cfg_.plan.phase_a_steps ||
                             global_step_ == cfg_.plan.total_steps();
      if (interval || phase_end) write_checkpoint(checkpoint_dir);
    }
  }
  return executed;
}

}  // namespace maskspec::train
