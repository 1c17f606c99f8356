#include "maskspec/data.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace maskspec::data {

namespace fs = std::filesystem;

void CorpusManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw FormatError("manifest: empty clip id");
    if (!ids.insert(e.id).second) throw FormatError("manifest: duplicate clip id " + e.id);
  }
}

void write_manifest(const CorpusManifest& manifest, const fs::path& path) {
  manifest.validate();
  std::ofstream out(path);
  if (!out) throw IoError("manifest: cannot open " + path.string() + " for writing");
  for (const auto& e : manifest.entries) {
    out << e.id << '\t' << e.path << '\t';
    if (e.label >= 0)
      out << e.label;
    else
      out << '-';
    out << '\t';
    if (e.fold >= 0)
      out << e.fold;
    else
      out << '-';
    out << '\n';
  }
  out.flush();
  if (!out) throw IoError("manifest: write failed for " + path.string());
}

CorpusManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path.string());
  CorpusManifest manifest;
  manifest.root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    ManifestEntry e;
    std::string label, fold;
    if (!std::getline(row, e.id, '\t') || !std::getline(row, e.path, '\t') ||
        !std::getline(row, label, '\t') || !std::getline(row, fold, '\t'))
      throw FormatError("manifest: malformed line " + std::to_string(line_no) + " in " +
                        path.string());
    e.label = label == "-" ? -1 : std::stoi(label);
    e.fold = fold == "-" ? -1 : std::stoi(fold);
    manifest.entries.push_back(std::move(e));
  }
  manifest.validate();
  return manifest;
}

void SynthSpec::validate() const {
  if (per_class <= 0) throw ConfigError("synth: per_class must be positive");
  if (clip_seconds <= 0.0 || sample_rate <= 0) throw ConfigError("synth: bad clip geometry");
  if (texture_period_seconds <= 0.0) throw ConfigError("synth: texture period must be positive");
  if (chirp_steps < 1) throw ConfigError("synth: chirp_steps must be at least 1");
  if (!(tone_lo_hz < tone_hi_hz && chirp_lo_hz < chirp_hi_hz && am_lo_hz < am_hi_hz &&
        am_rate_lo_hz < am_rate_hi_hz))
    throw ConfigError("synth: each frequency range needs lo < hi");
}

namespace {

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform01(); }

// Draw from the instance's stratum of [lo, hi], so same-class clips spread
// across the range instead of clustering by chance.
double stratified_in(Rng& rng, double lo, double hi, int instance, int per_class) {
  const double width = (hi - lo) / per_class;
  return lo + width * instance + width * rng.uniform01();
}

// Nearest multiple of grid_hz inside [lo, hi]; falls back to the raw draw if
// the range contains no multiple.
double snap_to_grid(double f, double grid_hz, double lo, double hi) {
  const double k_lo = std::ceil(lo / grid_hz);
  const double k_hi = std::floor(hi / grid_hz);
  if (k_lo > k_hi) return f;
  const double k = std::clamp(std::round(f / grid_hz), std::max(k_lo, 1.0), k_hi);
  return k * grid_hz;
}

std::vector<float> render_clip(int class_id, const SynthSpec& spec, Rng& rng, int instance) {
  const int n = static_cast<int>(std::lround(spec.clip_seconds * spec.sample_rate));
  const double dt = 1.0 / spec.sample_rate;
  // Stationary classes repeat exactly with this period, so every analysis
  // window at the same within-period offset sees identical samples.
  const double grid_hz = 1.0 / spec.texture_period_seconds;
  const double amp = uniform_in(rng, 0.4, 0.7);
  const double phase = uniform_in(rng, 0.0, 2.0 * M_PI);
  std::vector<float> out(static_cast<size_t>(n));
  switch (class_id) {
    case 0: {  // tone
      const double f =
          snap_to_grid(stratified_in(rng, spec.tone_lo_hz, spec.tone_hi_hz, instance,
                                     spec.per_class),
                       grid_hz, spec.tone_lo_hz, spec.tone_hi_hz);
      for (int i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] =
            static_cast<float>(amp * std::sin(2.0 * M_PI * f * i * dt + phase));
      break;
    }
    case 1: {  // chirp: a monotone staircase sweep, direction alternating by instance
      const double span = std::min(400.0, (spec.chirp_hi_hz - spec.chirp_lo_hz) / 2.0);
      const double start = snap_to_grid(
          stratified_in(rng, spec.chirp_lo_hz, spec.chirp_hi_hz - span, instance, spec.per_class),
          grid_hz, spec.chirp_lo_hz, spec.chirp_hi_hz - span);
      const double f0 = instance % 2 == 0 ? start : start + span;
      const double f1 = instance % 2 == 0 ? start + span : start;
      const int steps = spec.chirp_steps;
      for (int i = 0; i < n; ++i) {
        const int s = std::min<int>(steps - 1, static_cast<int>(steps * i / n));
        const double fraction = steps > 1 ? static_cast<double>(s) / (steps - 1) : 0.0;
        const double f = snap_to_grid(f0 + (f1 - f0) * fraction, grid_hz,
                                      std::min(f0, f1), std::max(f0, f1));
        out[static_cast<size_t>(i)] =
            static_cast<float>(amp * std::sin(2.0 * M_PI * f * i * dt + phase));
      }
      break;
    }
    case 2: {  // noise: tilted (one-pole low- or high-pass) white noise, one period tiled
      const int period = std::max(
          1, static_cast<int>(std::lround(spec.texture_period_seconds * spec.sample_rate)));
      const double cutoff_hz = std::exp(
          stratified_in(rng, std::log(400.0), std::log(5000.0), instance, spec.per_class));
      const double alpha = 1.0 - std::exp(-2.0 * M_PI * cutoff_hz * dt);
      // Filter two tiled periods and keep the second: by then the one-pole
      // state is periodic, so the kept period tiles seamlessly.
      std::vector<double> white(static_cast<size_t>(2 * period));
      for (auto& w : white) w = rng.normal();
      std::vector<double> tilted(static_cast<size_t>(2 * period));
      double lp = 0.0;
      for (int i = 0; i < 2 * period; ++i) {
        lp += alpha * (white[static_cast<size_t>(i)] - lp);
        tilted[static_cast<size_t>(i)] =
            instance % 2 == 0 ? lp : white[static_cast<size_t>(i)] - lp;
      }
      double peak = 0.0;
      for (int i = period; i < 2 * period; ++i) peak = std::max(peak, std::abs(tilted[static_cast<size_t>(i)]));
      const double gain = peak > 0.0 ? 0.8 * amp / peak : 0.0;
      for (int i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] =
            static_cast<float>(gain * tilted[static_cast<size_t>(period + i % period)]);
      break;
    }
    case 3: {  // am-tone
      const double fc =
          snap_to_grid(stratified_in(rng, spec.am_lo_hz, spec.am_hi_hz, instance, spec.per_class),
                       grid_hz, spec.am_lo_hz, spec.am_hi_hz);
      const double fm = snap_to_grid(uniform_in(rng, spec.am_rate_lo_hz, spec.am_rate_hi_hz),
                                     grid_hz, spec.am_rate_lo_hz, spec.am_rate_hi_hz);
      const double depth = 0.8;
      for (int i = 0; i < n; ++i) {
        const double t = i * dt;
        const double env = (1.0 + depth * std::sin(2.0 * M_PI * fm * t)) / (1.0 + depth);
        out[static_cast<size_t>(i)] =
            static_cast<float>(amp * env * std::sin(2.0 * M_PI * fc * t + phase));
      }
      break;
    }
    default:
      throw ConfigError("synth: unknown class id");
  }
  return out;
}

}  // namespace

CorpusManifest generate_synthetic(const SynthSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir))
    throw IoError("synth: cannot create output directory " + out_dir.string());

  CorpusManifest manifest;
  manifest.root = out_dir;
  const auto& names = synth_class_names();
  for (int c = 0; c < static_cast<int>(names.size()); ++c) {
    for (int i = 0; i < spec.per_class; ++i) {
      Rng rng = Rng::derive(spec.seed, "synth", static_cast<uint64_t>(c),
                            static_cast<uint64_t>(i));
      const std::vector<float> samples = render_clip(c, spec, rng, i);
      ManifestEntry e;
      e.id = names[static_cast<size_t>(c)] + "-" + std::to_string(i);
      e.path = e.id + ".wav";
      e.label = c;
      audio::write_wav((out_dir / e.path).string(), samples, spec.sample_rate);
      manifest.entries.push_back(std::move(e));
    }
  }
  write_manifest(manifest, out_dir / "manifest.tsv");
  return manifest;
}

std::vector<size_t> iterate_batches(const CorpusManifest& manifest, int batch_size, uint64_t seed,
                                    long long step) {
  if (manifest.entries.empty()) throw ConfigError("iterate_batches: empty manifest");
  if (batch_size <= 0) throw ConfigError("iterate_batches: batch_size must be positive");
  Rng rng = Rng::derive(seed, "batch", static_cast<uint64_t>(step));
  std::vector<size_t> batch(static_cast<size_t>(batch_size));
  for (auto& idx : batch) idx = static_cast<size_t>(rng.uniform_below(manifest.entries.size()));
  return batch;
}

}  // namespace maskspec::data
