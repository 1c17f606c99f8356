// Shared primitives: error types, deterministic RNG streams, hashing,
// little-endian binary IO.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskspec {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;
using VecF = Vec<float>;
using VecD = Vec<double>;
using MatI = Mat<int>;

// ---------------------------------------------------------------------------
// Errors. The CLI maps each class to a distinct exit code.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or version-mismatched artifact files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Geometry violations: non-divisible grids, shape mismatches.
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures: non-finite values, exhausted retry budgets.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// FNV-1a 64-bit. Used for config/content hashing and RNG stream derivation.

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. All distributions are implemented here so that streams
// are bit-reproducible across platforms and standard-library versions.

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // SplitMix64 warm-up decorrelates small seeds.
    for (int i = 0; i < 2; ++i) next_u64();
  }

  // Derives an independent stream from (seed, purpose, a, b). Streams with
  // different coordinates never share state, so parallel callers stay
  // deterministic.
  static Rng derive(uint64_t seed, std::string_view purpose, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = fnv1a64(&seed, sizeof(seed));
    h = fnv1a64(purpose, h);
    h = fnv1a64(&a, sizeof(a), h);
    h = fnv1a64(&b, sizeof(b), h);
    return Rng(h);
  }

  uint64_t next_u64() {
    // SplitMix64 step (Steele et al.), fully specified.
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), unbiased.
  uint64_t uniform_below(uint64_t n) {
    if (n == 0) throw NumericError("uniform_below: n must be positive");
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Partial Fisher-Yates: k distinct values from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + static_cast<int>(uniform_below(static_cast<uint64_t>(n - i)));
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    idx.resize(static_cast<size_t>(k));
    return idx;
  }

 private:
  uint64_t state_;
};

// ---------------------------------------------------------------------------
// Little-endian binary IO for artifact files.

class BlobWriter {
 public:
  explicit BlobWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  void write_bytes(const void* data, size_t len) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    if (!out_) throw IoError("write failed: " + path_);
  }

  void write_u32(uint32_t v) { write_bytes(&v, sizeof(v)); }
  void write_u64(uint64_t v) { write_bytes(&v, sizeof(v)); }
  void write_i32(int32_t v) { write_bytes(&v, sizeof(v)); }
  void write_f32(float v) { write_bytes(&v, sizeof(v)); }

  void write_string(const std::string& s) {
    write_u32(static_cast<uint32_t>(s.size()));
    write_bytes(s.data(), s.size());
  }

  void write_f32_array(const float* data, size_t count) { write_bytes(data, count * sizeof(float)); }
  void write_i32_array(const int32_t* data, size_t count) { write_bytes(data, count * sizeof(int32_t)); }

  size_t tell() { return static_cast<size_t>(out_.tellp()); }

  void close() {
    out_.close();
    if (out_.fail()) throw IoError("close failed: " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  void read_bytes(void* data, size_t len) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
    if (static_cast<size_t>(in_.gcount()) != len)
      throw FormatError("truncated file: " + path_);
  }

  uint32_t read_u32() { uint32_t v; read_bytes(&v, sizeof(v)); return v; }
  uint64_t read_u64() { uint64_t v; read_bytes(&v, sizeof(v)); return v; }
  int32_t read_i32() { int32_t v; read_bytes(&v, sizeof(v)); return v; }
  float read_f32() { float v; read_bytes(&v, sizeof(v)); return v; }

  std::string read_string(uint32_t max_len = 1u << 20) {
    uint32_t n = read_u32();
    if (n > max_len) throw FormatError("oversized string field: " + path_);
    std::string s(n, '\0');
    read_bytes(s.data(), n);
    return s;
  }

  void read_f32_array(float* data, size_t count) { read_bytes(data, count * sizeof(float)); }
  void read_i32_array(int32_t* data, size_t count) { read_bytes(data, count * sizeof(int32_t)); }

  bool at_eof() { return in_.peek() == std::ifstream::traits_type::eof(); }

  void expect_eof() {
    if (!at_eof()) throw FormatError("trailing bytes: " + path_);
  }

 private:
  std::string path_;
  std::ifstream in_;
};

// Hash of a file's contents, for cache keys and artifact binding.
inline uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for hashing: " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
  return h;
}

// Row-major flatten / reshape. Eigen stores column-major; patch and frame
// vectorization is defined row-major, so the loops are explicit.
template <typename T>
Vec<T> flatten_row_major(const Mat<T>& m) {
  Vec<T> v(m.size());
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[idx++] = m(r, c);
  return v;
}

template <typename T>
Mat<T> reshape_row_major(const Vec<T>& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw GeometryError("reshape_row_major: size mismatch");
  Mat<T> m(rows, cols);
  Eigen::Index idx = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[idx++];
  return m;
}

}  // namespace maskspec
