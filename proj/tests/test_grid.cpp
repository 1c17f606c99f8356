// Segment / patch / frame partitioning and its exact inverse.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskspec/grid.hpp"

using namespace maskspec;

namespace {

// Distinct value per cell so any index slip is caught.
audio::MelSpectrogram tagged_spec(int d, int m) {
  audio::MelSpectrogram spec;
  spec.values = MatF(d, m);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < m; ++c) spec.values(r, c) = static_cast<float>(r * 10000 + c);
  spec.config.n_mels = d;
  return spec;
}

grid::GridConfig default_grid() {
  grid::GridConfig gc;
  gc.validate();
  return gc;
}

}  // namespace

TEST_CASE("default geometry: 50 segments, 8 patches and 8 frames each") {
  grid::GridConfig gc = default_grid();
  CHECK(gc.patches_per_segment() == 8);
  CHECK(gc.frames_per_segment() == 8);
  CHECK(gc.patch_dim() == 256);
  CHECK(gc.frame_dim() == 256);
  auto sg = grid::segment(tagged_spec(128, 800), gc);
  CHECK(sg.n_segments() == 50);
  CHECK(grid::patchify_spectral(sg).size() == 400);
  CHECK(grid::frame_temporal(sg).size() == 400);
}

TEST_CASE("segments slice consecutive frame blocks") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  auto sg = grid::segment(spec, gc);
  for (int n : {0, 7, 49}) {
    REQUIRE(sg.segments[static_cast<size_t>(n)].rows() == 128);
    REQUIRE(sg.segments[static_cast<size_t>(n)].cols() == 16);
    for (int r = 0; r < 128; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(sg.segments[static_cast<size_t>(n)](r, c) == spec.values(r, n * 16 + c));
  }
}

TEST_CASE("patch (n, k) covers bands [k*P, (k+1)*P) of segment n") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  auto patches = grid::patchify_spectral(grid::segment(spec, gc));
  for (size_t g : {size_t{0}, size_t{9}, size_t{237}, size_t{399}}) {
    const auto& p = patches[g];
    CHECK(g == static_cast<size_t>(p.segment_index * 8 + p.band_index));
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c)
        CHECK(p.values(r, c) == spec.values(p.band_index * 16 + r, p.segment_index * 16 + c));
  }
}

TEST_CASE("frame (n, j) covers columns [j*P', (j+1)*P') of segment n") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  auto frames = grid::frame_temporal(grid::segment(spec, gc));
  for (size_t g : {size_t{0}, size_t{15}, size_t{311}, size_t{399}}) {
    const auto& f = frames[g];
    CHECK(g == static_cast<size_t>(f.segment_index * 8 + f.frame_index));
    REQUIRE(f.values.rows() == 128);
    REQUIRE(f.values.cols() == 2);
    for (int r = 0; r < 128; ++r)
      for (int c = 0; c < 2; ++c)
        CHECK(f.values(r, c) == spec.values(r, f.segment_index * 16 + f.frame_index * 2 + c));
  }
}

TEST_CASE("patch_vectors flattens row-major at row n*R_s + k") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  MatF pv = grid::patch_vectors(grid::segment(spec, gc));
  REQUIRE(pv.rows() == 400);
  REQUIRE(pv.cols() == 256);
  for (int n : {0, 21, 49}) {
    for (int k : {0, 3, 7}) {
      const int g = n * 8 + k;
      for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
          CHECK(pv(g, r * 16 + c) == spec.values(k * 16 + r, n * 16 + c));
    }
  }
}

TEST_CASE("frame_vectors flattens row-major at row n*R_t + j") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  MatF fv = grid::frame_vectors(grid::segment(spec, gc));
  REQUIRE(fv.rows() == 400);
  REQUIRE(fv.cols() == 256);
  for (int n : {0, 34, 49}) {
    for (int j : {0, 5, 7}) {
      const int g = n * 8 + j;
      for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 2; ++c)
          CHECK(fv(g, r * 2 + c) == spec.values(r, n * 16 + j * 2 + c));
    }
  }
}

TEST_CASE("concatenate inverts segment bitwise") {
  grid::GridConfig gc = default_grid();
  auto spec = tagged_spec(128, 800);
  auto sg = grid::segment(spec, gc);
  MatF back = grid::concatenate(sg);
  CHECK(back == spec.values);
}

TEST_CASE("round trip holds on a non-default grid too") {
  grid::GridConfig gc;
  gc.segment_frames = 4;
  gc.frame_width = 2;
  gc.n_mels = 8;
  gc.validate();
  auto spec = tagged_spec(8, 24);
  auto sg = grid::segment(spec, gc);
  CHECK(sg.n_segments() == 6);
  CHECK(grid::concatenate(sg) == spec.values);
  CHECK(grid::patch_vectors(sg).rows() == 6 * 2);
  CHECK(grid::frame_vectors(sg).rows() == 6 * 2);
}

TEST_CASE("non-divisible geometry is rejected") {
  grid::GridConfig gc = default_grid();
  // M not a multiple of P.
  CHECK_THROWS_AS(grid::segment(tagged_spec(128, 801), gc), GeometryError);
  CHECK_THROWS_AS(gc.validate_for(801), GeometryError);

  // D not a multiple of P breaks patching.
  grid::GridConfig bad = gc;
  bad.n_mels = 120;
  CHECK_THROWS_AS(bad.validate(), GeometryError);

  // P not a multiple of P' breaks framing.
  grid::GridConfig bad2 = gc;
  bad2.frame_width = 3;
  CHECK_THROWS_AS(bad2.validate(), GeometryError);

  grid::GridConfig bad3 = gc;
  bad3.segment_frames = 0;
  CHECK_THROWS_AS(bad3.validate(), ConfigError);
}

TEST_CASE("segment rejects a spectrogram whose height disagrees") {
  grid::GridConfig gc = default_grid();
  CHECK_THROWS_AS(grid::segment(tagged_spec(64, 800), gc), GeometryError);
}
