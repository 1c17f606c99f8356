// Python bindings for the main operations: feature extraction, gridding,
// masking, quantization, schedule, losses, and model bookkeeping.
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "maskspec/audio.hpp"
#include "maskspec/common.hpp"
#include "maskspec/gradcheck.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/loss.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/model.hpp"
#include "maskspec/quant.hpp"
#include "maskspec/schedule.hpp"

namespace py = pybind11;
using namespace maskspec;

namespace {

audio::FrontendConfig frontend_config(int n_mels, double win_ms, double hop_ms,
                                      double clip_seconds, int sample_rate) {
  audio::FrontendConfig cfg;
  cfg.n_mels = n_mels;
  cfg.win_ms = win_ms;
  cfg.hop_ms = hop_ms;
  cfg.clip_seconds = clip_seconds;
  cfg.sample_rate = sample_rate;
  cfg.validate();
  return cfg;
}

grid::GridConfig grid_config(int n_mels, int segment_frames, int frame_width) {
  grid::GridConfig gc;
  gc.segment_frames = segment_frames;
  gc.frame_width = frame_width;
  gc.n_mels = n_mels;
  gc.validate();
  return gc;
}

grid::SegmentGrid grid_from_mel(const MatF& mel, int segment_frames, int frame_width) {
  audio::MelSpectrogram spec;
  spec.values = mel;
  spec.config.n_mels = static_cast<int>(mel.rows());
  return grid::segment(spec, grid_config(static_cast<int>(mel.rows()), segment_frames, frame_width));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "masked spectro-temporal pretraining: core operations";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<IoError>(m, "IoError");
  py::register_exception<FormatError>(m, "FormatError");
  py::register_exception<GeometryError>(m, "GeometryError");
  py::register_exception<NumericError>(m, "NumericError");

  m.def(
      "logmel",
      [](const std::vector<float>& samples, int sample_rate, int n_mels, double win_ms,
         double hop_ms, double clip_seconds) {
        const audio::FrontendConfig cfg =
            frontend_config(n_mels, win_ms, hop_ms, clip_seconds, sample_rate);
        const audio::WaveformClip clip = audio::fit_to_length(samples, sample_rate, cfg);
        return audio::compute_logmel(clip, cfg).values;
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("n_mels") = 128,
      py::arg("win_ms") = 25.0, py::arg("hop_ms") = 10.0, py::arg("clip_seconds") = 8.0,
      "Log-mel spectrogram (n_mels x frames) of a waveform, padded/truncated to clip length");

  m.def(
      "patch_vectors",
      [](const MatF& mel, int segment_frames, int frame_width) {
        return grid::patch_vectors(grid_from_mel(mel, segment_frames, frame_width));
      },
      py::arg("mel"), py::arg("segment_frames") = 16, py::arg("frame_width") = 2,
      "Flattened spectral patches, one per row, segment-major band-minor order");

  m.def(
      "frame_vectors",
      [](const MatF& mel, int segment_frames, int frame_width) {
        return grid::frame_vectors(grid_from_mel(mel, segment_frames, frame_width));
      },
      py::arg("mel"), py::arg("segment_frames") = 16, py::arg("frame_width") = 2,
      "Flattened temporal frames, one per row, segment-major order");

  m.def(
      "sample_segment_mask",
      [](int n_segments, double p, double p_prime, uint64_t seed) {
        masking::MaskConfig cfg;
        cfg.mode = masking::MaskMode::kSegment;
        cfg.p = p;
        cfg.p_prime = p_prime;
        Rng rng = Rng::derive(seed, "py-mask");
        return masking::sample_segment_mask(n_segments, cfg, rng).masked;
      },
      py::arg("n_segments"), py::arg("p") = 0.6, py::arg("p_prime") = 0.2, py::arg("seed") = 0,
      "Chained segment mask: sorted masked segment indices");

  m.def(
      "sample_patch_mask",
      [](int n_patches, double ratio, uint64_t seed) {
        masking::MaskConfig cfg;
        cfg.mode = masking::MaskMode::kPatch;
        cfg.patch_ratio = ratio;
        Rng rng = Rng::derive(seed, "py-mask");
        return masking::sample_patch_mask(n_patches, cfg, rng).masked;
      },
      py::arg("n_patches"), py::arg("ratio") = 0.6, py::arg("seed") = 0,
      "Fixed-ratio patch mask: sorted masked patch indices");

  m.def("segment_mask_marginals", &masking::segment_mask_marginals, py::arg("n_segments"),
        py::arg("p") = 0.6, py::arg("p_prime") = 0.2,
        "Analytic per-position mask probability of the chained process");

  m.def("segment_mask_fixed_point", &masking::segment_mask_fixed_point, py::arg("p") = 0.6,
        py::arg("p_prime") = 0.2, "Limit of the marginal recursion: p / (1 - (1-p) p')");

  m.def(
      "fit_kmeans",
      [](const MatF& vectors, int k, uint64_t seed, int max_iters, double tol) {
        const quant::Codebook cb = quant::fit_kmeans(
            vectors, k, seed, max_iters, tol,
            quant::ProjectionSpec::identity(static_cast<int>(vectors.cols())),
            quant::CodebookSource::kSpectralPatch);
        return cb.centroids;
      },
      py::arg("vectors"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iters") = 200,
      py::arg("tol") = 1e-4, "K-means centroids (k x dim), k-means++ init, Lloyd refinement");

  m.def(
      "assign",
      [](const VecF& vector, const MatF& centroids) {
        quant::Codebook cb;
        cb.k = static_cast<int>(centroids.rows());
        cb.centroids = centroids;
        cb.projection = quant::ProjectionSpec::identity(static_cast<int>(centroids.cols()));
        return quant::assign(vector, cb);
      },
      py::arg("vector"), py::arg("centroids"),
      "Nearest-centroid index, ties broken to the lowest index");

  m.def(
      "lr_at",
      [](long long step, long long total_steps, double lr_start, double lr_peak, double lr_end,
         double warmup_frac) {
        train::LrScheduleConfig cfg;
        cfg.lr_start = lr_start;
        cfg.lr_peak = lr_peak;
        cfg.lr_end = lr_end;
        cfg.warmup_frac = warmup_frac;
        cfg.total_steps = total_steps;
        return train::lr_at(cfg, step);
      },
      py::arg("step"), py::arg("total_steps"), py::arg("lr_start") = 1e-6,
      py::arg("lr_peak") = 1e-4, py::arg("lr_end") = 1e-6, py::arg("warmup_frac") = 0.1,
      "Piecewise-linear warmup/decay learning rate");

  m.def(
      "cross_entropy",
      [](const VecD& logits, int target) { return loss::cross_entropy<double>(logits, target); },
      py::arg("logits"), py::arg("target"), "Cross-entropy of one logit row against a label");

  m.def(
      "total_loss",
      [](double spectral, double temporal, double lam) {
        return loss::total_loss(spectral, temporal, lam);
      },
      py::arg("spectral"), py::arg("temporal"), py::arg("lam") = 0.75,
      "Convex mixture lam * temporal + (1 - lam) * spectral");

  m.def(
      "parameter_count",
      [](int d_model, int n_layers, int n_heads, int mlp_ratio, int k_s, int k_t, int r_s,
         int r_t, int n_max, int patch_dim) {
        model::ModelConfig mc;
        mc.d_model = d_model;
        mc.n_layers = n_layers;
        mc.n_heads = n_heads;
        mc.mlp_ratio = mlp_ratio;
        mc.k_s = k_s;
        mc.k_t = k_t;
        mc.r_s = r_s;
        mc.r_t = r_t;
        mc.n_max = n_max;
        mc.patch_dim = patch_dim;
        mc.validate();
        return model::parameter_count(mc);
      },
      py::arg("d_model") = 768, py::arg("n_layers") = 12, py::arg("n_heads") = 12,
      py::arg("mlp_ratio") = 4, py::arg("k_s") = 100, py::arg("k_t") = 500, py::arg("r_s") = 8,
      py::arg("r_t") = 8, py::arg("n_max") = 50, py::arg("patch_dim") = 256,
      "Total learnable parameter count for a model configuration");

  m.def(
      "encoder_parameter_count",
      [](int d_model, int n_layers, int n_heads, int mlp_ratio) {
        model::ModelConfig mc;
        mc.d_model = d_model;
        mc.n_layers = n_layers;
        mc.n_heads = n_heads;
        mc.mlp_ratio = mlp_ratio;
        mc.validate();
        return model::parameter_breakdown(mc).encoder;
      },
      py::arg("d_model") = 768, py::arg("n_layers") = 12, py::arg("n_heads") = 12,
      py::arg("mlp_ratio") = 4, "Transformer-stack parameter count alone");

  m.def(
      "gradcheck_max_rel_err",
      [](uint64_t seed, double lam) {
        return model::run_gradcheck(model::gradcheck_tiny_model(), model::gradcheck_tiny_grid(),
                                    seed, lam, true)
            .max_rel_err;
      },
      py::arg("seed") = 0, py::arg("lam") = 0.75,
      "Finite-difference check of the analytic gradients on a tiny model");
}
