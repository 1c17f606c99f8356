#include "maskspec/grid.hpp"

namespace maskspec::grid {

void GridConfig::validate() const {
  if (segment_frames <= 0 || frame_width <= 0 || n_mels <= 0)
    throw ConfigError("grid: all dimensions must be positive");
  if (n_mels % segment_frames != 0)
    throw GeometryError("grid: D must be divisible by P (got D=" + std::to_string(n_mels) +
                        ", P=" + std::to_string(segment_frames) + ")");
  if (segment_frames % frame_width != 0)
    throw GeometryError("grid: P must be divisible by P' (got P=" + std::to_string(segment_frames) +
                        ", P'=" + std::to_string(frame_width) + ")");
}

void GridConfig::validate_for(int m_frames) const {
  validate();
  if (m_frames <= 0 || m_frames % segment_frames != 0)
    throw GeometryError("grid: M must be divisible by P (got M=" + std::to_string(m_frames) +
                        ", P=" + std::to_string(segment_frames) + ")");
}

SegmentGrid segment(const audio::MelSpectrogram& spec, const GridConfig& config) {
  const int m = spec.n_frames();
  config.validate_for(m);
  if (spec.n_mels() != config.n_mels)
    throw GeometryError("grid: spectrogram has D=" + std::to_string(spec.n_mels()) +
                        " but grid expects D=" + std::to_string(config.n_mels));

  const int p = config.segment_frames;
  const int n = m / p;
  SegmentGrid out;
  out.config = config;
  out.segments.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    out.segments.push_back(spec.values.middleCols(i * p, p));
  return out;
}

std::vector<SpectralPatch> patchify_spectral(const SegmentGrid& grid) {
  const int p = grid.config.segment_frames;
  const int r_s = grid.config.patches_per_segment();
  std::vector<SpectralPatch> patches;
  patches.reserve(static_cast<size_t>(grid.n_segments()) * static_cast<size_t>(r_s));
  for (int n = 0; n < grid.n_segments(); ++n)
    for (int k = 0; k < r_s; ++k)
      patches.push_back({n, k, grid.segments[static_cast<size_t>(n)].middleRows(k * p, p)});
  return patches;
}

std::vector<TemporalFrame> frame_temporal(const SegmentGrid& grid) {
  const int pp = grid.config.frame_width;
  const int r_t = grid.config.frames_per_segment();
  std::vector<TemporalFrame> frames;
  frames.reserve(static_cast<size_t>(grid.n_segments()) * static_cast<size_t>(r_t));
  for (int n = 0; n < grid.n_segments(); ++n)
    for (int j = 0; j < r_t; ++j)
      frames.push_back({n, j, grid.segments[static_cast<size_t>(n)].middleCols(j * pp, pp)});
  return frames;
}

MatF patch_vectors(const SegmentGrid& grid) {
  const auto patches = patchify_spectral(grid);
  MatF out(static_cast<Eigen::Index>(patches.size()), grid.config.patch_dim());
  for (size_t i = 0; i < patches.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = flatten_row_major(patches[i].values).transpose();
  return out;
}

MatF frame_vectors(const SegmentGrid& grid) {
  const auto frames = frame_temporal(grid);
  MatF out(static_cast<Eigen::Index>(frames.size()), grid.config.frame_dim());
  for (size_t i = 0; i < frames.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = flatten_row_major(frames[i].values).transpose();
  return out;
}

MatF concatenate(const SegmentGrid& grid) {
  const int p = grid.config.segment_frames;
  MatF out(grid.config.n_mels, grid.n_segments() * p);
  for (int n = 0; n < grid.n_segments(); ++n)
    out.middleCols(n * p, p) = grid.segments[static_cast<size_t>(n)];
  return out;
}

}  // namespace maskspec::grid
