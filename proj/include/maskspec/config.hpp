// One configuration tree for the whole pipeline, loadable from JSON, with
// two shipped presets: paper-scale (the published hyperparameters) and
// desk-scale (small enough to verify everything on a laptop). Artifact
// binding hashes are computed over canonical serializations of the relevant
// subtrees.
#pragma once

#include <filesystem>
#include <string>

#include "maskspec/audio.hpp"
#include "maskspec/checkpoint.hpp"
#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/model.hpp"
#include "maskspec/probe.hpp"
#include "maskspec/train.hpp"

namespace maskspec::config {

struct QuantConfig {
  int k_s = 100;
  int k_t = 500;
  int max_iters = 200;
  double tol = 1e-4;
  std::string spectral_projection = "identity";  // identity | random-orthonormal
  int spectral_proj_dim = 0;                     // 0: keep the input dimension
  std::string temporal_source = "direct";        // direct | external

  void validate() const {
    if (k_s <= 0 || k_t <= 0) throw ConfigError("quantizer: codebook sizes must be positive");
    if (max_iters <= 0) throw ConfigError("quantizer: max_iters must be positive");
    if (tol < 0.0) throw ConfigError("quantizer: tol must be >= 0");
    if (spectral_projection != "identity" && spectral_projection != "random-orthonormal")
      throw ConfigError("quantizer: unknown spectral_projection " + spectral_projection);
    if (spectral_proj_dim < 0) throw ConfigError("quantizer: spectral_proj_dim must be >= 0");
    if (temporal_source != "direct" && temporal_source != "external")
      throw ConfigError("quantizer: unknown temporal_source " + temporal_source);
  }
};

struct ModelArch {
  int d_model = 768;
  int n_layers = 12;
  int n_heads = 12;
  int mlp_ratio = 4;
  double dropout_rate = 0.0;
};

struct RunConfig {
  std::string profile = "desk-scale";
  uint64_t seed = 0;
  audio::FrontendConfig frontend;
  grid::GridConfig grid;
  masking::MaskConfig mask;
  QuantConfig quantizer;
  ModelArch model;
  train::TrainPlan plan;
  train::LrScheduleConfig schedule;
  train::OptimizerConfig optimizer;
  probe::ProbeConfig probe;
};

RunConfig profile_defaults(const std::string& profile);

// Starts from the file's profile preset, then applies the file's overrides.
// Unknown keys are refused.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

// Cross-field validation (divisibility chain frontend -> grid -> model).
void validate(const RunConfig& cfg);

grid::GridConfig derived_grid_config(const RunConfig& cfg);
model::ModelConfig derived_model_config(const RunConfig& cfg);
train::TrainerConfig derived_trainer_config(const RunConfig& cfg);

// Content hashes over canonical serializations, for artifact binding.
uint64_t feature_hash(const RunConfig& cfg);  // frontend + grid + quantizer
uint64_t model_hash(const RunConfig& cfg);
uint64_t trainer_hash(const RunConfig& cfg);
train::ArtifactHashes artifact_hashes(const RunConfig& cfg);

}  // namespace maskspec::config
