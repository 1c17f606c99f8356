// Waveform loading and log-mel feature extraction.
#pragma once

#include <string>
#include <vector>

#include "maskspec/common.hpp"

namespace maskspec::audio {

struct FrontendConfig {
  int n_mels = 128;         // D
  double win_ms = 25.0;     // Hann window length
  double hop_ms = 10.0;
  double clip_seconds = 8.0;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double log_floor = 1e-10;  // added inside the logarithm
  int sample_rate = 16000;

  int win_samples() const { return static_cast<int>(win_ms * sample_rate / 1000.0 + 0.5); }
  int hop_samples() const { return static_cast<int>(hop_ms * sample_rate / 1000.0 + 0.5); }
  int clip_samples() const { return static_cast<int>(clip_seconds * sample_rate + 0.5); }
  // Frame count convention: the waveform is reflect-padded by win/2 on each
  // side and M = clip_samples / hop exactly.
  int n_frames() const { return clip_samples() / hop_samples(); }

  void validate() const;
};

struct WaveformClip {
  std::vector<float> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;
};

struct MelSpectrogram {
  MatF values;  // D x M log energies
  FrontendConfig config;

  int n_mels() const { return static_cast<int>(values.rows()); }
  int n_frames() const { return static_cast<int>(values.cols()); }
};

// 16-bit PCM mono WAV IO. The reader rejects anything else; there is no
// resampling.
WaveformClip read_wav(const std::string& path);
void write_wav(const std::string& path, const std::vector<float>& samples, int sample_rate);

// Reads a WAV and pads/truncates to exactly clip_seconds * sample_rate
// samples. Longer inputs are truncated from the end, shorter ones
// zero-padded at the end.
WaveformClip load_clip(const std::string& path, const FrontendConfig& config);

// Applies the pad/truncate rule to an in-memory waveform.
WaveformClip fit_to_length(std::vector<float> samples, int sample_rate, const FrontendConfig& config);

MelSpectrogram compute_logmel(const WaveformClip& clip, const FrontendConfig& config);

// Slaney mel scale (linear below 1 kHz, logarithmic above).
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Area-normalized triangular filterbank, n_mels x (n_fft/2 + 1).
MatD mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin_hz, double fmax_hz);

// Spectrogram cache blobs (binary f32 container keyed by content + config).
void save_spectrogram(const std::string& path, const MelSpectrogram& spec, uint64_t feature_hash);
MelSpectrogram load_spectrogram(const std::string& path, const FrontendConfig& config, uint64_t feature_hash);

}  // namespace maskspec::audio
