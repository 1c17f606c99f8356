// Checkpoint container: a directory holding manifest.json (versioned
// metadata, artifact-binding hashes, tensor index) and tensors.bin (raw
// little-endian f32 payloads at the indexed offsets). Writes go to a
// temporary directory that is renamed into place.
#pragma once

#include <filesystem>
#include <string>

#include "maskspec/common.hpp"
#include "maskspec/model.hpp"

namespace maskspec::train {

// Binds artifacts to the configurations that produced them.
struct ArtifactHashes {
  uint64_t feature = 0;  // frontend + grid + quantizer settings
  uint64_t model = 0;    // model architecture settings
  uint64_t trainer = 0;  // plan + schedule + optimizer settings
};

struct CheckpointMeta {
  int format_version = 1;
  long long step = 0;  // completed global steps
  std::string phase;   // "A" or "joint"
  uint64_t seed = 0;
  long long adam_updates = 0;
  ArtifactHashes hashes;
};

// adam_m/adam_v may be null to save parameters only.
void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta,
                     model::ModelState<float>& params, model::ModelState<float>* adam_m,
                     model::ModelState<float>* adam_v);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

// Fills params (and the optimizer moments when requested) from the
// container. Tensor sets must match exactly in name and shape.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, model::ModelState<float>& params,
                               model::ModelState<float>* adam_m = nullptr,
                               model::ModelState<float>* adam_v = nullptr);

}  // namespace maskspec::train
