// Corpus manifests and a synthetic four-class audio generator. The classes
// occupy disjoint frequency bands and differ in temporal structure, so both
// the spectral and the temporal objective have something to learn:
//   tone     steady sine, 200-450 Hz
//   chirp    linear sweep inside 1000-2500 Hz
//   noise    broadband white noise
//   am-tone  amplitude-modulated carrier, 3000-4000 Hz, 2-8 Hz envelope
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "maskspec/audio.hpp"
#include "maskspec/common.hpp"

namespace maskspec::data {

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  int label = -1;    // -1: unlabeled
  int fold = -1;     // -1: unassigned
};

struct CorpusManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  void validate() const;
  std::filesystem::path resolve(const ManifestEntry& entry) const { return root / entry.path; }
};

// Tab-separated, one record per line: id, relative path, label, fold
// ("-" for absent label/fold).
void write_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest read_manifest(const std::filesystem::path& path);

inline const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names = {"tone", "chirp", "noise", "am-tone"};
  return names;
}

struct SynthSpec {
  int per_class = 50;
  double clip_seconds = 8.0;
  int sample_rate = 16000;
  uint64_t seed = 0;
  double tone_lo_hz = 200.0, tone_hi_hz = 450.0;
  double chirp_lo_hz = 1000.0, chirp_hi_hz = 2500.0;
  double am_lo_hz = 3000.0, am_hi_hz = 4000.0;
  double am_rate_lo_hz = 2.0, am_rate_hi_hz = 8.0;
  // Stationary classes (tone, noise, am-tone) repeat exactly with this
  // period: frequencies snap to multiples of its reciprocal and noise is
  // tiled from one period. Matching it to the downstream analysis span makes
  // equal within-period offsets see identical samples, so derived features
  // and quantized labels are stable across the clip.
  double texture_period_seconds = 0.16;
  // Chirps sweep as a monotone staircase of this many grid-snapped frequency
  // plateaus, each itself periodic, rather than a continuous glide whose
  // every analysis window is unique.
  int chirp_steps = 2;

  void validate() const;
};

// Writes per_class WAV clips per class plus manifest.tsv into out_dir.
// Deterministic from spec.seed.
CorpusManifest generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

// Uniform-with-replacement batch of manifest indices for one step, from the
// stream (seed, "batch", step) — the same stream the trainer consumes.
std::vector<size_t> iterate_batches(const CorpusManifest& manifest, int batch_size, uint64_t seed,
                                    long long step);

}  // namespace maskspec::data
