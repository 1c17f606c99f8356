// Partitioning of spectrograms into segments, spectral patches, and temporal
// frames, with exact reconstruction.
#pragma once

#include <vector>

#include "maskspec/audio.hpp"
#include "maskspec/common.hpp"

namespace maskspec::grid {

struct GridConfig {
  int segment_frames = 16;  // P
  int frame_width = 2;      // P'
  int n_mels = 128;         // D, mirrors the frontend

  int patches_per_segment() const { return n_mels / segment_frames; }       // R_s
  int frames_per_segment() const { return segment_frames / frame_width; }   // R_t
  int patch_dim() const { return segment_frames * segment_frames; }         // P*P
  int frame_dim() const { return n_mels * frame_width; }                    // D*P'

  void validate() const;
  // Additionally checks that a spectrogram with M frames divides evenly.
  void validate_for(int m_frames) const;
};

struct SegmentGrid {
  std::vector<MatF> segments;  // each D x P, temporal order
  GridConfig config;

  int n_segments() const { return static_cast<int>(segments.size()); }
};

struct SpectralPatch {
  int segment_index;  // n, 0-based
  int band_index;     // k, 0-based, low frequency first
  MatF values;        // P x P
};

struct TemporalFrame {
  int segment_index;  // n, 0-based
  int frame_index;    // j, 0-based
  MatF values;        // D x P'
};

SegmentGrid segment(const audio::MelSpectrogram& spec, const GridConfig& config);

// Patches in segment-major, band-minor order: global index g = n * R_s + k.
std::vector<SpectralPatch> patchify_spectral(const SegmentGrid& grid);
std::vector<TemporalFrame> frame_temporal(const SegmentGrid& grid);

// Row-major vectorizations stacked as matrix rows, in global-index order.
// patch_vectors: (N * R_s) x P^2, frame_vectors: (N * R_t) x (D * P').
MatF patch_vectors(const SegmentGrid& grid);
MatF frame_vectors(const SegmentGrid& grid);

// Inverse of segment(): concatenates segments back into a D x M matrix.
MatF concatenate(const SegmentGrid& grid);

}  // namespace maskspec::grid
