// Command-line entry point: synth, featurize, fit-codebooks, pretrain,
// probe, gradcheck, maskstats. Every command is deterministic given the
// configuration file and --seed.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "maskspec/audio.hpp"
#include "maskspec/checkpoint.hpp"
#include "maskspec/common.hpp"
#include "maskspec/config.hpp"
#include "maskspec/data.hpp"
#include "maskspec/gradcheck.hpp"
#include "maskspec/grid.hpp"
#include "maskspec/masking.hpp"
#include "maskspec/model.hpp"
#include "maskspec/probe.hpp"
#include "maskspec/quant.hpp"
#include "maskspec/train.hpp"

namespace fs = std::filesystem;
using namespace maskspec;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitFormat = 5;

struct CommonFlags {
  std::string config_path;
  std::string profile = "desk-scale";
  std::optional<uint64_t> seed;
  int workers = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "configuration file (JSON)");
  cmd->add_option("--profile", flags.profile, "preset when no --config: paper-scale | desk-scale");
  cmd->add_option("--seed", flags.seed, "seed overriding the configuration");
  cmd->add_option("--workers", flags.workers, "parallelism bound (processing is sequential)")
      ->check(CLI::PositiveNumber);
}

config::RunConfig resolve_config(const CommonFlags& flags) {
  config::RunConfig cfg = flags.config_path.empty()
                              ? config::profile_defaults(flags.profile)
                              : config::load_run_config(flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  config::validate(cfg);
  return cfg;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

audio::MelSpectrogram load_cached_spectrogram(const fs::path& features_dir,
                                              const data::ManifestEntry& entry,
                                              const config::RunConfig& cfg) {
  const fs::path path = features_dir / (entry.id + ".spec");
  if (!fs::exists(path))
    throw IoError("missing cached spectrogram " + path.string() +
                  " (run featurize first)");
  return audio::load_spectrogram(path.string(), cfg.frontend, config::feature_hash(cfg));
}

std::vector<train::TrainClip> load_train_corpus(const fs::path& features_dir,
                                                const data::CorpusManifest& manifest,
                                                const config::RunConfig& cfg,
                                                const quant::Codebook& cb_s,
                                                const quant::Codebook& cb_t) {
  const grid::GridConfig gc = config::derived_grid_config(cfg);
  std::vector<train::TrainClip> corpus;
  corpus.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    const audio::MelSpectrogram mel = load_cached_spectrogram(features_dir, entry, cfg);
    corpus.push_back(train::prepare_clip(entry.id, mel, gc, cb_s, cb_t));
  }
  return corpus;
}

int cmd_synth(const CommonFlags& flags, const std::string& out_dir, int per_class) {
  config::RunConfig cfg = resolve_config(flags);
  data::SynthSpec spec;
  spec.per_class = per_class;
  spec.seed = cfg.seed;
  spec.clip_seconds = cfg.frontend.clip_seconds;
  spec.sample_rate = cfg.frontend.sample_rate;
  const data::CorpusManifest manifest = data::generate_synthetic(spec, out_dir);
  std::cout << "wrote " << manifest.entries.size() << " clips + manifest.tsv to " << out_dir
            << "\n";
  return 0;
}

int cmd_featurize(const CommonFlags& flags, const std::string& manifest_path,
                  const std::string& out_dir) {
  config::RunConfig cfg = resolve_config(flags);
  const data::CorpusManifest manifest = data::read_manifest(manifest_path);
  fs::create_directories(out_dir);
  const uint64_t fhash = config::feature_hash(cfg);
  for (const auto& entry : manifest.entries) {
    const audio::WaveformClip clip =
        audio::load_clip(manifest.resolve(entry).string(), cfg.frontend);
    const audio::MelSpectrogram mel = audio::compute_logmel(clip, cfg.frontend);
    audio::save_spectrogram((fs::path(out_dir) / (entry.id + ".spec")).string(), mel, fhash);
  }
  std::cout << "featurized " << manifest.entries.size() << " clips to " << out_dir
            << " (feature hash " << hex64(fhash) << ")\n";
  return 0;
}

int cmd_fit_codebooks(const CommonFlags& flags, const std::string& manifest_path,
                      const std::string& features_dir, const std::string& out_dir,
                      std::optional<int> ks_override, std::optional<int> kt_override) {
  config::RunConfig cfg = resolve_config(flags);
  if (ks_override) cfg.quantizer.k_s = *ks_override;
  if (kt_override) cfg.quantizer.k_t = *kt_override;
  config::validate(cfg);

  const data::CorpusManifest manifest = data::read_manifest(manifest_path);
  if (manifest.entries.empty()) throw ConfigError("fit-codebooks: empty manifest");
  const grid::GridConfig gc = config::derived_grid_config(cfg);

  Eigen::Index patch_rows = 0, frame_rows = 0;
  std::vector<MatF> patch_blocks, frame_blocks;
  for (const auto& entry : manifest.entries) {
    const audio::MelSpectrogram mel = load_cached_spectrogram(features_dir, entry, cfg);
    const grid::SegmentGrid g = grid::segment(mel, gc);
    patch_blocks.push_back(grid::patch_vectors(g));
    frame_blocks.push_back(grid::frame_vectors(g));
    patch_rows += patch_blocks.back().rows();
    frame_rows += frame_blocks.back().rows();
  }
  MatF patches(patch_rows, patch_blocks.front().cols());
  MatF frames(frame_rows, frame_blocks.front().cols());
  Eigen::Index pr = 0, fr = 0;
  for (size_t i = 0; i < patch_blocks.size(); ++i) {
    patches.middleRows(pr, patch_blocks[i].rows()) = patch_blocks[i];
    pr += patch_blocks[i].rows();
    frames.middleRows(fr, frame_blocks[i].rows()) = frame_blocks[i];
    fr += frame_blocks[i].rows();
  }

  quant::ProjectionSpec spec_proj =
      cfg.quantizer.spectral_projection == "identity"
          ? quant::ProjectionSpec::identity(gc.patch_dim())
          : quant::ProjectionSpec::random_orthonormal(
                gc.patch_dim(),
                cfg.quantizer.spectral_proj_dim > 0 ? cfg.quantizer.spectral_proj_dim
                                                    : gc.patch_dim(),
                Rng::derive(cfg.seed, "projection").next_u64());

  const uint64_t fhash = config::feature_hash(cfg);
  quant::KmeansStats stats_s, stats_t;
  quant::Codebook cb_s =
      quant::fit_kmeans(patches, cfg.quantizer.k_s, Rng::derive(cfg.seed, "kmeans-spectral").next_u64(),
                        cfg.quantizer.max_iters, cfg.quantizer.tol, spec_proj,
                        quant::CodebookSource::kSpectralPatch, &stats_s);
  cb_s.feature_hash = fhash;
  quant::Codebook cb_t = quant::fit_kmeans(
      frames, cfg.quantizer.k_t, Rng::derive(cfg.seed, "kmeans-temporal").next_u64(),
      cfg.quantizer.max_iters, cfg.quantizer.tol, quant::ProjectionSpec::identity(gc.frame_dim()),
      quant::CodebookSource::kTemporalFrame, &stats_t);
  cb_t.feature_hash = fhash;

  fs::create_directories(out_dir);
  quant::save_codebook(cb_s, (fs::path(out_dir) / "spectral.cb").string());
  quant::save_codebook(cb_t, (fs::path(out_dir) / "temporal.cb").string());
  std::cout << "spectral codebook: K=" << cb_s.k << ", " << stats_s.iterations
            << " iterations, inertia " << stats_s.inertia << "\n"
            << "temporal codebook: K=" << cb_t.k << ", " << stats_t.iterations
            << " iterations, inertia " << stats_t.inertia << "\n";
  return 0;
}

int cmd_pretrain(const CommonFlags& flags, const std::string& manifest_path,
                 const std::string& features_dir, const std::string& codebooks_dir,
                 const std::string& out_dir, std::optional<long long> max_steps,
                 const std::string& resume_path, std::optional<double> lambda_override,
                 std::optional<double> p_override, std::optional<double> pprime_override) {
  config::RunConfig cfg = resolve_config(flags);
  if (lambda_override) cfg.plan.lambda = *lambda_override;
  if (p_override) cfg.mask.p = *p_override;
  if (pprime_override) cfg.mask.p_prime = *pprime_override;
  config::validate(cfg);

  const data::CorpusManifest manifest = data::read_manifest(manifest_path);
  quant::Codebook cb_s = quant::load_codebook((fs::path(codebooks_dir) / "spectral.cb").string());
  quant::Codebook cb_t = quant::load_codebook((fs::path(codebooks_dir) / "temporal.cb").string());
  const uint64_t fhash = config::feature_hash(cfg);
  if (cb_s.feature_hash != fhash || cb_t.feature_hash != fhash)
    throw ConfigError("pretrain: codebooks were fitted under a different feature configuration");

  std::vector<train::TrainClip> corpus =
      load_train_corpus(features_dir, manifest, cfg, cb_s, cb_t);

  fs::create_directories(out_dir);
  train::TrainerConfig tc = config::derived_trainer_config(cfg);
  tc.checkpoint_every = 0;
  train::Trainer trainer(config::derived_model_config(cfg), config::derived_grid_config(cfg), tc,
                         std::move(corpus), config::artifact_hashes(cfg));
  if (resume_path.empty())
    trainer.init_params(cfg.seed);
  else
    trainer.resume(resume_path);

  std::ofstream log(fs::path(out_dir) / "train.log");
  if (!log) throw IoError("pretrain: cannot open training log for writing");
  const long long executed = trainer.run(out_dir, &log, max_steps.value_or(-1));
  std::cout << "executed " << executed << " steps; now at step " << trainer.global_step() << "/"
            << tc.plan.total_steps() << "\n";
  return 0;
}

int cmd_probe(const CommonFlags& flags, const std::string& manifest_path,
              const std::string& features_dir, const std::string& checkpoint_path,
              const std::string& out_path) {
  config::RunConfig cfg = resolve_config(flags);
  const data::CorpusManifest manifest = data::read_manifest(manifest_path);
  const grid::GridConfig gc = config::derived_grid_config(cfg);
  const model::ModelConfig mc = config::derived_model_config(cfg);

  model::ModelState<float> state = model::zeros_like_state<float>(mc);
  const train::CheckpointMeta meta = train::load_checkpoint(checkpoint_path, state);
  const train::ArtifactHashes hashes = config::artifact_hashes(cfg);
  if (meta.hashes.model != hashes.model)
    throw ConfigError("probe: checkpoint was trained under a different model configuration");
  if (meta.hashes.feature != hashes.feature)
    throw ConfigError("probe: checkpoint was trained under a different feature configuration");

  std::vector<probe::ProbeClip> clips;
  for (const auto& entry : manifest.entries) {
    if (entry.label < 0)
      throw ConfigError("probe: clip " + entry.id + " has no label");
    const audio::MelSpectrogram mel = load_cached_spectrogram(features_dir, entry, cfg);
    const grid::SegmentGrid g = grid::segment(mel, gc);
    clips.push_back({entry.id, grid::patch_vectors(g), entry.label});
  }

  probe::ProbeConfig pc = cfg.probe;
  pc.seed = cfg.seed;
  const probe::ProbeReport report = probe::run_probe(mc, state, clips, pc);

  nlohmann::json folds = nlohmann::json::array();
  for (double a : report.fold_accuracy) folds.push_back(a);
  nlohmann::json j{{"fold_accuracy", folds},
                   {"mean_accuracy", report.mean_accuracy},
                   {"encoder_hash", hex64(report.encoder_hash_before)},
                   {"checkpoint_step", meta.step},
                   {"config_hashes",
                    {{"feature", hex64(hashes.feature)},
                     {"model", hex64(hashes.model)},
                     {"trainer", hex64(hashes.trainer)}}}};
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw IoError("probe: cannot open " + out_path + " for writing");
    out << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const CommonFlags& flags, std::optional<double> lambda_override) {
  uint64_t seed = flags.seed.value_or(0);
  const model::ModelConfig mc = model::gradcheck_tiny_model();
  const grid::GridConfig gc = model::gradcheck_tiny_grid();
  const double lambda = lambda_override.value_or(0.75);
  const model::GradcheckReport joint = model::run_gradcheck(mc, gc, seed, lambda, true);
  const model::GradcheckReport phase_a = model::run_gradcheck(mc, gc, seed, lambda, false);
  const double worst = std::max(joint.max_rel_err, phase_a.max_rel_err);
  std::cout << "joint objective:    max rel err " << joint.max_rel_err << " over "
            << joint.n_checked << " parameters (worst: " << joint.worst_tensor << "["
            << joint.worst_index << "])\n"
            << "spectral-only:      max rel err " << phase_a.max_rel_err << " over "
            << phase_a.n_checked << " parameters (worst: " << phase_a.worst_tensor << "["
            << phase_a.worst_index << "])\n"
            << "threshold 1e-4:     " << (worst < 1e-4 ? "PASS" : "FAIL") << "\n";
  return worst < 1e-4 ? 0 : kExitNumeric;
}

int cmd_maskstats(const CommonFlags& flags, double p, double p_prime, int n_segments,
                  long long draws) {
  masking::MaskConfig mc;
  mc.mode = masking::MaskMode::kSegment;
  mc.p = p;
  mc.p_prime = p_prime;
  mc.validate();
  const std::vector<double> analytic = masking::segment_mask_marginals(n_segments, p, p_prime);

  std::vector<long long> hits(static_cast<size_t>(n_segments), 0);
  const uint64_t seed = flags.seed.value_or(0);
  for (long long d = 0; d < draws; ++d) {
    Rng rng = Rng::derive(seed, "maskstats", static_cast<uint64_t>(d));
    const masking::MaskPlan plan = masking::sample_segment_mask(n_segments, mc, rng);
    for (int idx : plan.masked) ++hits[static_cast<size_t>(idx)];
  }

  std::cout << "position,analytic,empirical,sigma_distance\n";
  double worst_sigma = 0.0;
  for (int i = 0; i < n_segments; ++i) {
    const double q = analytic[static_cast<size_t>(i)];
    const double emp = static_cast<double>(hits[static_cast<size_t>(i)]) / static_cast<double>(draws);
    const double sigma = std::sqrt(q * (1.0 - q) / static_cast<double>(draws));
    const double dist = sigma > 0.0 ? std::abs(emp - q) / sigma : 0.0;
    worst_sigma = std::max(worst_sigma, dist);
    std::cout << i << ',' << q << ',' << emp << ',' << dist << "\n";
  }
  std::cout << "fixed_point," << masking::segment_mask_fixed_point(p, p_prime) << ",,\n";
  std::cout << "(worst deviation " << worst_sigma << " sigma over " << draws << " draws)\n";
  return worst_sigma <= 4.0 ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked spectro-temporal pretraining toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;

  auto* synth = app.add_subcommand("synth", "generate the synthetic labeled corpus");
  std::string synth_out = "synth-data";
  int per_class = 50;
  add_common(synth, flags);
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--per-class", per_class, "clips per class")->check(CLI::PositiveNumber);

  auto* feat = app.add_subcommand("featurize", "cache log-mel spectrograms for a manifest");
  std::string feat_manifest, feat_out = "features";
  add_common(feat, flags);
  feat->add_option("--manifest", feat_manifest, "corpus manifest (TSV)")->required();
  feat->add_option("--out", feat_out, "output directory");

  auto* fitcb = app.add_subcommand("fit-codebooks", "fit spectral + temporal codebooks");
  std::string cb_manifest, cb_features = "features", cb_out = "codebooks";
  std::optional<int> ks_flag, kt_flag;
  add_common(fitcb, flags);
  fitcb->add_option("--manifest", cb_manifest, "corpus manifest (TSV)")->required();
  fitcb->add_option("--features", cb_features, "cached spectrogram directory");
  fitcb->add_option("--out", cb_out, "output directory");
  fitcb->add_option("--ks", ks_flag, "spectral codebook size override");
  fitcb->add_option("--kt", kt_flag, "temporal codebook size override");

  auto* pre = app.add_subcommand("pretrain", "run the two-phase pretraining loop");
  std::string pre_manifest, pre_features = "features", pre_codebooks = "codebooks",
              pre_out = "pretrain-out", pre_resume;
  std::optional<long long> steps_flag;
  std::optional<double> lambda_flag, p_flag, pprime_flag;
  add_common(pre, flags);
  pre->add_option("--manifest", pre_manifest, "corpus manifest (TSV)")->required();
  pre->add_option("--features", pre_features, "cached spectrogram directory");
  pre->add_option("--codebooks", pre_codebooks, "codebook directory");
  pre->add_option("--out", pre_out, "output directory (log + checkpoints)");
  pre->add_option("--steps", steps_flag, "max steps to execute in this invocation");
  pre->add_option("--resume", pre_resume, "checkpoint directory to resume from");
  pre->add_option("--lambda", lambda_flag, "temporal loss weight override");
  pre->add_option("--p", p_flag, "segment mask probability override");
  pre->add_option("--pprime", pprime_flag, "mask propagation probability override");

  auto* prb = app.add_subcommand("probe", "frozen-encoder downstream evaluation");
  std::string probe_manifest, probe_features = "features", probe_ckpt, probe_out;
  add_common(prb, flags);
  prb->add_option("--manifest", probe_manifest, "labeled manifest (TSV)")->required();
  prb->add_option("--features", probe_features, "cached spectrogram directory");
  prb->add_option("--checkpoint", probe_ckpt, "checkpoint directory")->required();
  prb->add_option("--out", probe_out, "metrics report file (JSON)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::optional<double> gc_lambda;
  add_common(gc, flags);
  gc->add_option("--lambda", gc_lambda, "temporal loss weight");

  auto* ms = app.add_subcommand("maskstats", "empirical vs analytic mask coverage");
  double ms_p = 0.6, ms_pprime = 0.2;
  int ms_n = 50;
  long long ms_draws = 100000;
  add_common(ms, flags);
  ms->add_option("--p", ms_p, "segment mask probability");
  ms->add_option("--pprime", ms_pprime, "mask propagation probability");
  ms->add_option("--segments", ms_n, "segments per clip")->check(CLI::PositiveNumber);
  ms->add_option("--draws", ms_draws, "Monte Carlo draws")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(flags, synth_out, per_class);
    if (feat->parsed()) return cmd_featurize(flags, feat_manifest, feat_out);
    if (fitcb->parsed())
      return cmd_fit_codebooks(flags, cb_manifest, cb_features, cb_out, ks_flag, kt_flag);
    if (pre->parsed())
      return cmd_pretrain(flags, pre_manifest, pre_features, pre_codebooks, pre_out, steps_flag,
                          pre_resume, lambda_flag, p_flag, pprime_flag);
    if (prb->parsed()) return cmd_probe(flags, probe_manifest, probe_features, probe_ckpt, probe_out);
    if (gc->parsed()) return cmd_gradcheck(flags, gc_lambda);
    if (ms->parsed()) return cmd_maskstats(flags, ms_p, ms_pprime, ms_n, ms_draws);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const GeometryError& e) {
    std::cerr << "geometry error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
