#include "maskspec/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace maskspec::quant {

VecF ProjectionSpec::apply(const VecF& v) const {
  if (v.size() != in_dim)
    throw GeometryError("projection: input has dim " + std::to_string(v.size()) + ", expected " +
                        std::to_string(in_dim));
  if (kind == ProjectionKind::kIdentity) return v;
  return matrix * v;
}

ProjectionSpec ProjectionSpec::identity(int dim) {
  ProjectionSpec p;
  p.kind = ProjectionKind::kIdentity;
  p.in_dim = dim;
  p.out_dim = dim;
  return p;
}

ProjectionSpec ProjectionSpec::random_orthonormal(int in_dim, int out_dim, uint64_t seed) {
  if (out_dim > in_dim)
    throw ConfigError("projection: orthonormal rows need out_dim <= in_dim");
  Rng rng = Rng::derive(seed, "projection");
  MatD m(out_dim, in_dim);
  for (int r = 0; r < out_dim; ++r)
    for (int c = 0; c < in_dim; ++c) m(r, c) = rng.normal();
  // Modified Gram-Schmidt on rows.
  for (int r = 0; r < out_dim; ++r) {
    for (int prev = 0; prev < r; ++prev)
      m.row(r) -= m.row(r).dot(m.row(prev)) * m.row(prev);
    double norm = m.row(r).norm();
    if (norm < 1e-12) throw NumericError("projection: degenerate random matrix");
    m.row(r) /= norm;
  }
  ProjectionSpec p;
  p.kind = ProjectionKind::kFixedRandomOrthonormal;
  p.in_dim = in_dim;
  p.out_dim = out_dim;
  p.matrix = m.cast<float>();
  return p;
}

double squared_distance(const VecF& a, const VecF& b) {
  double d = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += diff * diff;
  }
  return d;
}

namespace {

// Nearest centroid of a projected vector, lowest index on ties.
int nearest_centroid(const MatF& centroids, const VecF& v, double* dist_out = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    double d = squared_distance(centroids.row(c).transpose(), v);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist_out) *dist_out = best_d;
  return best;
}

}  // namespace

Codebook fit_kmeans(const MatF& vectors, int k, uint64_t seed, int max_iters, double tol,
                    const ProjectionSpec& projection, CodebookSource source, KmeansStats* stats) {
  const auto n = vectors.rows();
  if (n < k) throw ConfigError("fit_kmeans: fewer vectors (" + std::to_string(n) + ") than clusters (" +
                               std::to_string(k) + ")");
  if (k < 1) throw ConfigError("fit_kmeans: k must be positive");
  if (vectors.cols() != projection.in_dim)
    throw GeometryError("fit_kmeans: vector dim does not match projection input dim");

  const int d = projection.out_dim;
  MatF pts(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    pts.row(i) = projection.apply(vectors.row(i).transpose()).transpose();

  Rng rng = Rng::derive(seed, "kmeans++");

  // k-means++ seeding.
  MatF centroids(k, d);
  std::vector<double> min_d(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index first = static_cast<Eigen::Index>(rng.uniform_below(static_cast<uint64_t>(n)));
  centroids.row(0) = pts.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dd = squared_distance(pts.row(i).transpose(), centroids.row(c - 1).transpose());
      if (dd < min_d[static_cast<size_t>(i)]) min_d[static_cast<size_t>(i)] = dd;
      total += min_d[static_cast<size_t>(i)];
    }
    Eigen::Index chosen = n - 1;
    if (total > 0.0) {
      double target = rng.uniform01() * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += min_d[static_cast<size_t>(i)];
        if (acc >= target) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Eigen::Index>(rng.uniform_below(static_cast<uint64_t>(n)));
    }
    centroids.row(c) = pts.row(chosen);
  }

  std::vector<int> labels(static_cast<size_t>(n), 0);
  KmeansStats local;
  for (int iter = 0; iter < max_iters; ++iter) {
    // Assignment. Pure per point; reduction below runs in index order so the
    // result is independent of any fan-out.
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double dd = 0.0;
      labels[static_cast<size_t>(i)] = nearest_centroid(centroids, pts.row(i).transpose(), &dd);
      inertia += dd;
    }
    local.inertia_trace.push_back(inertia);
    local.inertia = inertia;
    local.iterations = iter + 1;

    // Update: means accumulated in double, index order.
    MatD sums = MatD::Zero(k, d);
    std::vector<Eigen::Index> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[static_cast<size_t>(i)]) += pts.row(i).cast<double>();
      counts[static_cast<size_t>(labels[static_cast<size_t>(i)])]++;
    }

    MatF next(k, d);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        next.row(c) = (sums.row(c) / static_cast<double>(counts[static_cast<size_t>(c)])).cast<float>();
      } else {
        // Reseed to the point farthest from its assigned centroid.
        Eigen::Index far_idx = 0;
        double far_d = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          double dd = squared_distance(pts.row(i).transpose(),
                                       centroids.row(labels[static_cast<size_t>(i)]).transpose());
          if (dd > far_d) {
            far_d = dd;
            far_idx = i;
          }
        }
        next.row(c) = pts.row(far_idx);
        labels[static_cast<size_t>(far_idx)] = c;
      }
    }

    double max_shift = 0.0;
    for (int c = 0; c < k; ++c)
      max_shift = std::max(max_shift, squared_distance(next.row(c).transpose(), centroids.row(c).transpose()));
    centroids = next;
    if (std::sqrt(max_shift) < tol) break;
  }

  if (stats) *stats = local;

  Codebook cb;
  cb.k = k;
  cb.centroids = centroids;
  cb.projection = projection;
  cb.source = source;
  return cb;
}

int assign(const VecF& raw_vector, const Codebook& cb) {
  VecF v = cb.projection.apply(raw_vector);
  if (v.size() != cb.centroids.cols())
    throw GeometryError("assign: projected dim does not match centroid dim");
  return nearest_centroid(cb.centroids, v);
}

TargetSet build_targets(const audio::MelSpectrogram& spec, const grid::GridConfig& gc,
                        const Codebook& cb_s, const Codebook& cb_t,
                        const std::vector<int>* external_labels) {
  if (cb_s.source != CodebookSource::kSpectralPatch)
    throw ConfigError("build_targets: cb_s must have spectral_patch source");
  if (cb_t.source == CodebookSource::kExternalEmbedding && external_labels == nullptr)
    throw ConfigError("build_targets: external temporal codebook requires external labels");

  const grid::SegmentGrid g = grid::segment(spec, gc);
  const int n = g.n_segments();
  const int r_s = gc.patches_per_segment();
  const int r_t = gc.frames_per_segment();

  TargetSet out;
  out.spectral.resize(n, r_s);
  out.temporal.resize(n, r_t);

  const MatF patches = grid::patch_vectors(g);
  for (int seg = 0; seg < n; ++seg)
    for (int k = 0; k < r_s; ++k)
      out.spectral(seg, k) = assign(patches.row(seg * r_s + k).transpose(), cb_s);

  if (cb_t.source == CodebookSource::kExternalEmbedding) {
    if (static_cast<int>(external_labels->size()) != n * r_t)
      throw GeometryError("build_targets: need " + std::to_string(n * r_t) +
                          " external labels, got " + std::to_string(external_labels->size()));
    for (int seg = 0; seg < n; ++seg)
      for (int j = 0; j < r_t; ++j) {
        int label = (*external_labels)[static_cast<size_t>(seg * r_t + j)];
        if (label < 0 || label >= cb_t.k)
          throw FormatError("build_targets: external label out of range");
        out.temporal(seg, j) = label;
      }
  } else {
    const MatF frames = grid::frame_vectors(g);
    for (int seg = 0; seg < n; ++seg)
      for (int j = 0; j < r_t; ++j)
        out.temporal(seg, j) = assign(frames.row(seg * r_t + j).transpose(), cb_t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Codebook serialization.

namespace {
constexpr uint32_t kCodebookMagic = 0x4243534dU;  // "MSCB"
constexpr uint32_t kCodebookVersion = 1;
}  // namespace

void save_codebook(const Codebook& cb, const std::string& path) {
  BlobWriter out(path);
  out.write_u32(kCodebookMagic);
  out.write_u32(kCodebookVersion);
  out.write_u64(cb.feature_hash);
  out.write_u32(static_cast<uint32_t>(cb.source));
  out.write_u32(static_cast<uint32_t>(cb.k));
  out.write_u32(static_cast<uint32_t>(cb.centroids.cols()));
  out.write_u32(static_cast<uint32_t>(cb.projection.kind));
  out.write_u32(static_cast<uint32_t>(cb.projection.in_dim));
  out.write_u32(static_cast<uint32_t>(cb.projection.out_dim));
  out.write_f32_array(cb.centroids.data(), static_cast<size_t>(cb.centroids.size()));
  if (cb.projection.kind == ProjectionKind::kFixedRandomOrthonormal)
    out.write_f32_array(cb.projection.matrix.data(), static_cast<size_t>(cb.projection.matrix.size()));
  out.close();
}

Codebook load_codebook(const std::string& path) {
  BlobReader in(path);
  if (in.read_u32() != kCodebookMagic) throw FormatError("not a codebook file: " + path);
  if (in.read_u32() != kCodebookVersion) throw FormatError("codebook version mismatch: " + path);
  Codebook cb;
  cb.feature_hash = in.read_u64();
  uint32_t source = in.read_u32();
  if (source > 2) throw FormatError("codebook: bad source tag: " + path);
  cb.source = static_cast<CodebookSource>(source);
  cb.k = static_cast<int>(in.read_u32());
  const int d = static_cast<int>(in.read_u32());
  uint32_t kind = in.read_u32();
  if (kind > 1) throw FormatError("codebook: bad projection kind: " + path);
  cb.projection.kind = static_cast<ProjectionKind>(kind);
  cb.projection.in_dim = static_cast<int>(in.read_u32());
  cb.projection.out_dim = static_cast<int>(in.read_u32());
  if (cb.k < 1 || d < 1 || cb.projection.out_dim != d)
    throw FormatError("codebook: inconsistent dimensions: " + path);
  cb.centroids.resize(cb.k, d);
  in.read_f32_array(cb.centroids.data(), static_cast<size_t>(cb.centroids.size()));
  if (cb.projection.kind == ProjectionKind::kFixedRandomOrthonormal) {
    cb.projection.matrix.resize(cb.projection.out_dim, cb.projection.in_dim);
    in.read_f32_array(cb.projection.matrix.data(), static_cast<size_t>(cb.projection.matrix.size()));
  }
  in.expect_eof();
  return cb;
}

// ---------------------------------------------------------------------------
// External frame files.

namespace {
constexpr uint32_t kExternalMagic = 0x4658534dU;  // "MSXF"
constexpr uint32_t kExternalVersion = 1;
}  // namespace

void write_external_frames(const std::string& path, const std::vector<ExternalFrameRecord>& records,
                           int frame_rate_hz, bool as_labels) {
  BlobWriter out(path);
  out.write_u32(kExternalMagic);
  out.write_u32(kExternalVersion);
  out.write_u32(as_labels ? 1u : 0u);
  out.write_u32(static_cast<uint32_t>(frame_rate_hz));
  uint32_t dim = 0;
  if (!as_labels) {
    if (records.empty()) throw ConfigError("write_external_frames: embedding file needs records");
    dim = static_cast<uint32_t>(records.front().embeddings.cols());
  }
  out.write_u32(dim);
  out.write_u32(static_cast<uint32_t>(records.size()));
  for (const auto& rec : records) {
    out.write_string(rec.clip_id);
    if (as_labels) {
      out.write_u32(static_cast<uint32_t>(rec.labels.size()));
      std::vector<int32_t> tmp(rec.labels.begin(), rec.labels.end());
      out.write_i32_array(tmp.data(), tmp.size());
    } else {
      if (static_cast<uint32_t>(rec.embeddings.cols()) != dim)
        throw GeometryError("write_external_frames: inconsistent embedding dim");
      out.write_u32(static_cast<uint32_t>(rec.embeddings.rows()));
      // Rows written frame-major.
      for (Eigen::Index r = 0; r < rec.embeddings.rows(); ++r) {
        VecF row = rec.embeddings.row(r).transpose();
        out.write_f32_array(row.data(), static_cast<size_t>(row.size()));
      }
    }
  }
  out.close();
}

std::map<std::string, std::vector<int>> import_external_frames(const std::string& path,
                                                               int expected_rate_hz,
                                                               const Codebook* cb) {
  BlobReader in(path);
  if (in.read_u32() != kExternalMagic) throw FormatError("not an external frame file: " + path);
  if (in.read_u32() != kExternalVersion) throw FormatError("external frame file version mismatch: " + path);
  const bool as_labels = in.read_u32() != 0;
  const int rate = static_cast<int>(in.read_u32());
  if (rate != expected_rate_hz)
    throw FormatError("external frame rate is " + std::to_string(rate) + " Hz, expected " +
                      std::to_string(expected_rate_hz) + " Hz: " + path);
  const int dim = static_cast<int>(in.read_u32());
  const uint32_t n_records = in.read_u32();

  if (!as_labels) {
    if (cb == nullptr)
      throw ConfigError("import_external_frames: embedding file requires a codebook");
    if (cb->projection.in_dim != dim)
      throw GeometryError("import_external_frames: embedding dim does not match codebook");
  }

  std::map<std::string, std::vector<int>> out;
  for (uint32_t r = 0; r < n_records; ++r) {
    std::string id = in.read_string();
    const uint32_t n_frames = in.read_u32();
    std::vector<int> labels(n_frames);
    if (as_labels) {
      std::vector<int32_t> tmp(n_frames);
      in.read_i32_array(tmp.data(), tmp.size());
      for (uint32_t i = 0; i < n_frames; ++i) labels[i] = tmp[i];
    } else {
      VecF row(dim);
      for (uint32_t i = 0; i < n_frames; ++i) {
        in.read_f32_array(row.data(), static_cast<size_t>(dim));
        labels[i] = assign(row, *cb);
      }
    }
    if (!out.emplace(std::move(id), std::move(labels)).second)
      throw FormatError("import_external_frames: duplicate clip id in " + path);
  }
  in.expect_eof();
  return out;
}

}  // namespace maskspec::quant
