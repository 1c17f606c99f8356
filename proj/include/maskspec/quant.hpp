// K-means codebooks for discrete spectral and temporal targets, plus import
// of externally computed frame embeddings or labels.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskspec/common.hpp"
#include "maskspec/grid.hpp"

namespace maskspec::quant {

enum class ProjectionKind { kIdentity, kFixedRandomOrthonormal };

// A frozen linear map applied to vectorized patches/frames before
// clustering and assignment. Serialized with the codebook.
struct ProjectionSpec {
  ProjectionKind kind = ProjectionKind::kIdentity;
  int in_dim = 0;
  int out_dim = 0;
  MatF matrix;  // out_dim x in_dim, empty for identity

  VecF apply(const VecF& v) const;

  static ProjectionSpec identity(int dim);
  // Gaussian matrix orthonormalized row-wise (Gram-Schmidt); requires
  // out_dim <= in_dim.
  static ProjectionSpec random_orthonormal(int in_dim, int out_dim, uint64_t seed);
};

enum class CodebookSource { kSpectralPatch, kTemporalFrame, kExternalEmbedding };

struct Codebook {
  int k = 0;
  MatF centroids;  // K x d, d == projection.out_dim
  ProjectionSpec projection;
  CodebookSource source = CodebookSource::kSpectralPatch;
  uint64_t feature_hash = 0;  // config binding; 0 = unbound
};

struct KmeansStats {
  int iterations = 0;
  double inertia = 0.0;           // final sum of squared distances
  std::vector<double> inertia_trace;  // after each update step
};

// Lloyd's algorithm with k-means++ initialization, Euclidean metric.
// vectors: n x in_dim raw (unprojected) rows. Terminates when the largest
// centroid shift drops below tol or after max_iters. Empty clusters are
// reseeded to the point farthest from its assigned centroid.
Codebook fit_kmeans(const MatF& vectors, int k, uint64_t seed, int max_iters, double tol,
                    const ProjectionSpec& projection, CodebookSource source,
                    KmeansStats* stats = nullptr);

// Index of the nearest centroid after projection; ties break to the lowest
// index.
int assign(const VecF& raw_vector, const Codebook& cb);

// Squared Euclidean distance used by assignment, exposed for oracles.
double squared_distance(const VecF& a, const VecF& b);

struct TargetSet {
  MatI spectral;  // N x R_s, labels in [0, K_s)
  MatI temporal;  // N x R_t, labels in [0, K_t)
};

// Labels for every patch and frame of one clip. When cb_t.source is
// kExternalEmbedding the temporal labels come from external_labels (one per
// 20 ms frame, length N * R_t) instead of direct quantization.
TargetSet build_targets(const audio::MelSpectrogram& spec, const grid::GridConfig& grid,
                        const Codebook& cb_s, const Codebook& cb_t,
                        const std::vector<int>* external_labels = nullptr);

void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

// External frame files: per-clip records of either f32 embeddings (quantized
// at import with the supplied codebook) or pre-quantized i32 labels, at a
// fixed frame rate.
struct ExternalFrameRecord {
  std::string clip_id;
  MatF embeddings;          // n_frames x dim (embedding files)
  std::vector<int> labels;  // n_frames      (label files)
};

void write_external_frames(const std::string& path, const std::vector<ExternalFrameRecord>& records,
                           int frame_rate_hz, bool as_labels);

// Returns clip_id -> per-frame labels. Files holding embeddings require a
// codebook to quantize with; label files ignore it.
std::map<std::string, std::vector<int>> import_external_frames(const std::string& path,
                                                               int expected_rate_hz,
                                                               const Codebook* cb = nullptr);

}  // namespace maskspec::quant
