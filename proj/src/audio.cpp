#include "maskspec/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>

namespace maskspec::audio {

void FrontendConfig::validate() const {
  if (n_mels <= 0) throw ConfigError("frontend: n_mels must be positive");
  if (win_ms <= 0 || hop_ms <= 0) throw ConfigError("frontend: window and hop must be positive");
  if (clip_seconds <= 0) throw ConfigError("frontend: clip_seconds must be positive");
  if (log_floor <= 0) throw ConfigError("frontend: log_floor must be positive");
  if (sample_rate <= 0) throw ConfigError("frontend: sample_rate must be positive");
  if (fmin_hz < 0 || fmax_hz <= fmin_hz) throw ConfigError("frontend: need 0 <= fmin < fmax");
  if (fmax_hz > sample_rate / 2.0) throw ConfigError("frontend: fmax above Nyquist");
  if (clip_samples() % hop_samples() != 0)
    throw ConfigError("frontend: clip length must be divisible by the hop");
  if (win_samples() % 2 != 0)
    throw ConfigError("frontend: window length must be even (reflect pad is win/2)");
}

// ---------------------------------------------------------------------------
// WAV IO (RIFF, 16-bit PCM only).

namespace {

constexpr uint32_t fourcc(const char* s) {
  return static_cast<uint32_t>(static_cast<unsigned char>(s[0])) |
         static_cast<uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
         static_cast<uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
         static_cast<uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

}  // namespace

WaveformClip read_wav(const std::string& path) {
  BlobReader in(path);
  if (in.read_u32() != fourcc("RIFF")) throw FormatError("not a RIFF file: " + path);
  in.read_u32();  // riff size, unused
  if (in.read_u32() != fourcc("WAVE")) throw FormatError("not a WAVE file: " + path);

  uint16_t format_type = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<int16_t> pcm;
  bool have_data = false;

  while (!in.at_eof()) {
    uint32_t chunk_id = in.read_u32();
    uint32_t chunk_size = in.read_u32();
    if (chunk_id == fourcc("fmt ")) {
      if (chunk_size < 16) throw FormatError("malformed fmt chunk: " + path);
      uint32_t v;
      v = in.read_u32();
      format_type = static_cast<uint16_t>(v & 0xffff);
      channels = static_cast<uint16_t>(v >> 16);
      rate = in.read_u32();
      in.read_u32();  // byte rate
      v = in.read_u32();
      bits = static_cast<uint16_t>(v >> 16);
      for (uint32_t i = 16; i < chunk_size + (chunk_size & 1); ++i) {
        char pad;
        in.read_bytes(&pad, 1);
      }
      have_fmt = true;
    } else if (chunk_id == fourcc("data")) {
      if (!have_fmt) throw FormatError("data chunk before fmt: " + path);
      if (chunk_size % 2 != 0) throw FormatError("odd data chunk size: " + path);
      pcm.resize(chunk_size / 2);
      in.read_bytes(pcm.data(), chunk_size);
      have_data = true;
    } else {
      // Skip unknown chunks (LIST, JUNK, ...).
      std::vector<char> skip(chunk_size + (chunk_size & 1));
      if (!skip.empty()) in.read_bytes(skip.data(), skip.size());
    }
    if (have_data) break;
  }

  if (!have_fmt || !have_data) throw FormatError("missing fmt or data chunk: " + path);
  if (format_type != 1 || bits != 16) throw FormatError("only 16-bit PCM supported: " + path);
  if (channels != 1) throw FormatError("only mono supported: " + path);

  WaveformClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    clip.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return clip;
}

void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  BlobWriter out(path);
  uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
  out.write_u32(fourcc("RIFF"));
  out.write_u32(36 + data_bytes);
  out.write_u32(fourcc("WAVE"));
  out.write_u32(fourcc("fmt "));
  out.write_u32(16);
  out.write_u32(1u | (1u << 16));  // PCM, mono
  out.write_u32(static_cast<uint32_t>(sample_rate));
  out.write_u32(static_cast<uint32_t>(sample_rate * 2));
  out.write_u32(2u | (16u << 16));  // block align, bits
  out.write_u32(fourcc("data"));
  out.write_u32(data_bytes);
  std::vector<int16_t> pcm(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    // Symmetric with the reader's 1/32768 scale, so read(write(x)) is exact
    // on the int16 grid.
    long q = std::lrint(std::clamp(samples[i], -1.0f, 1.0f) * 32768.0f);
    pcm[i] = static_cast<int16_t>(std::clamp(q, -32768L, 32767L));
  }
  out.write_bytes(pcm.data(), data_bytes);
  out.close();
}

WaveformClip fit_to_length(std::vector<float> samples, int sample_rate, const FrontendConfig& config) {
  if (sample_rate != config.sample_rate)
    throw FormatError("sample rate mismatch: got " + std::to_string(sample_rate) + ", expected " +
                      std::to_string(config.sample_rate) + " (no resampling)");
  samples.resize(static_cast<size_t>(config.clip_samples()), 0.0f);
  return WaveformClip{std::move(samples), sample_rate};
}

WaveformClip load_clip(const std::string& path, const FrontendConfig& config) {
  WaveformClip raw = read_wav(path);
  return fit_to_length(std::move(raw.samples), raw.sample_rate, config);
}

// ---------------------------------------------------------------------------
// Mel filterbank.

double hz_to_mel(double hz) {
  constexpr double kBreak = 1000.0;
  constexpr double kLinStep = 200.0 / 3.0;
  if (hz < kBreak) return hz / kLinStep;
  const double log_step = std::log(6.4) / 27.0;
  return kBreak / kLinStep + std::log(hz / kBreak) / log_step;
}

double mel_to_hz(double mel) {
  constexpr double kBreak = 1000.0;
  constexpr double kLinStep = 200.0 / 3.0;
  const double break_mel = kBreak / kLinStep;
  if (mel < break_mel) return mel * kLinStep;
  const double log_step = std::log(6.4) / 27.0;
  return kBreak * std::exp(log_step * (mel - break_mel));
}

MatD mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin_hz, double fmax_hz) {
  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(fmin_hz);
  const double mel_hi = hz_to_mel(fmax_hz);

  std::vector<double> edges(static_cast<size_t>(n_mels) + 2);
  for (int i = 0; i < n_mels + 2; ++i)
    edges[static_cast<size_t>(i)] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));

  MatD fb = MatD::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double f_lo = edges[static_cast<size_t>(m)];
    const double f_c = edges[static_cast<size_t>(m) + 1];
    const double f_hi = edges[static_cast<size_t>(m) + 2];
    const double norm = 2.0 / (f_hi - f_lo);  // area normalization
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      double w = 0.0;
      if (f > f_lo && f < f_c)
        w = (f - f_lo) / (f_c - f_lo);
      else if (f >= f_c && f < f_hi)
        w = (f_hi - f) / (f_hi - f_c);
      fb(m, k) = w * norm;
    }
  }
  return fb;
}

// ---------------------------------------------------------------------------
// Radix-2 FFT, double precision. Sizes are powers of two by construction.

namespace {

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace

MelSpectrogram compute_logmel(const WaveformClip& clip, const FrontendConfig& config) {
  config.validate();
  if (clip.sample_rate != config.sample_rate)
    throw FormatError("compute_logmel: clip sample rate mismatch");
  if (static_cast<int>(clip.samples.size()) != config.clip_samples())
    throw GeometryError("compute_logmel: clip length != clip_seconds * sample_rate");

  const int win = config.win_samples();
  const int hop = config.hop_samples();
  const int n_frames = config.n_frames();
  const int pad = win / 2;
  const int n_fft = next_pow2(win);
  const int n_bins = n_fft / 2 + 1;

  // Reflect-pad so that frame t is centered at sample t * hop.
  const int len = static_cast<int>(clip.samples.size());
  std::vector<double> padded(static_cast<size_t>(len + 2 * pad));
  for (int i = 0; i < len + 2 * pad; ++i) {
    int src = i - pad;
    if (src < 0) src = -src;
    if (src >= len) src = 2 * (len - 1) - src;
    padded[static_cast<size_t>(i)] = clip.samples[static_cast<size_t>(src)];
  }

  // Periodic Hann window.
  std::vector<double> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i)
    window[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / win));

  const MatD fb = mel_filterbank(config.n_mels, n_fft, config.sample_rate, config.fmin_hz, config.fmax_hz);

  MatF out(config.n_mels, n_frames);
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
  VecD power(n_bins);
  for (int t = 0; t < n_frames; ++t) {
    const int start = t * hop;
    for (int i = 0; i < win; ++i)
      buf[static_cast<size_t>(i)] = padded[static_cast<size_t>(start + i)] * window[static_cast<size_t>(i)];
    for (int i = win; i < n_fft; ++i) buf[static_cast<size_t>(i)] = 0.0;
    fft_inplace(buf);
    for (int k = 0; k < n_bins; ++k) power[k] = std::norm(buf[static_cast<size_t>(k)]);
    VecD mel = fb * power;
    for (int m = 0; m < config.n_mels; ++m)
      out(m, t) = static_cast<float>(std::log(mel[m] + config.log_floor));
  }

  MelSpectrogram spec;
  spec.values = std::move(out);
  spec.config = config;
  return spec;
}

// ---------------------------------------------------------------------------
// Spectrogram cache blobs.

namespace {
constexpr uint32_t kSpecMagic = 0x4350534dU;  // "MSPC"
constexpr uint32_t kSpecVersion = 1;
}  // namespace

void save_spectrogram(const std::string& path, const MelSpectrogram& spec, uint64_t feature_hash) {
  BlobWriter out(path);
  out.write_u32(kSpecMagic);
  out.write_u32(kSpecVersion);
  out.write_u64(feature_hash);
  out.write_u32(static_cast<uint32_t>(spec.values.rows()));
  out.write_u32(static_cast<uint32_t>(spec.values.cols()));
  MatF vals = spec.values;
  out.write_f32_array(vals.data(), static_cast<size_t>(vals.size()));
  out.close();
}

MelSpectrogram load_spectrogram(const std::string& path, const FrontendConfig& config, uint64_t feature_hash) {
  BlobReader in(path);
  if (in.read_u32() != kSpecMagic) throw FormatError("not a spectrogram blob: " + path);
  if (in.read_u32() != kSpecVersion) throw FormatError("spectrogram blob version mismatch: " + path);
  if (in.read_u64() != feature_hash)
    throw FormatError("spectrogram blob built under a different config: " + path);
  const auto rows = static_cast<Eigen::Index>(in.read_u32());
  const auto cols = static_cast<Eigen::Index>(in.read_u32());
  MelSpectrogram spec;
  spec.values.resize(rows, cols);
  in.read_f32_array(spec.values.data(), static_cast<size_t>(spec.values.size()));
  in.expect_eof();
  spec.config = config;
  return spec;
}

}  // namespace maskspec::audio
