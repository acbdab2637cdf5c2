#pragma once

#include <complex>
#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace maskbench {

struct FeatureStack;

inline constexpr int kHarnessSampleRate = 16000;

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = kHarnessSampleRate;

  std::size_t size() const { return samples.size(); }
};

enum class WindowKind { hann, sqrt_hann, rect };
enum class WavCodec { pcm16, float32 };

struct StftConfig {
  std::size_t frame_size = 512;
  std::size_t hop = 160;
  std::size_t fft_size = 512;
  WindowKind window = WindowKind::sqrt_hann;

  std::size_t bins() const { return fft_size / 2 + 1; }
  /// Throws config error unless 0 < hop <= frame_size <= fft_size.
  void validate() const;
  bool operator==(const StftConfig&) const = default;
};

/// One-sided complex STFT, row-major T x F.
struct Spectrogram {
  std::vector<std::complex<double>> frames;
  std::size_t num_frames = 0;
  StftConfig config;
  std::size_t original_length = 0;

  std::size_t bins() const { return config.bins(); }
  std::complex<double>& at(std::size_t t, std::size_t f) { return frames[t * bins() + f]; }
  const std::complex<double>& at(std::size_t t, std::size_t f) const {
    return frames[t * bins() + f];
  }
};

AudioBuffer read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer, WavCodec codec);

/// Periodic window of length n.
std::vector<double> make_window(WindowKind kind, std::size_t n);

/// Number of centered frames for a signal of `length` samples: ceil(length / hop).
std::size_t frame_count(std::size_t length, std::size_t hop);

Spectrogram stft(const AudioBuffer& buffer, const StftConfig& config);
AudioBuffer istft(const Spectrogram& spec, int sample_rate = kHarnessSampleRate);

struct FbankOptions {
  int n_mels = 80;
  bool add_deltas = true;
  bool cmvn = true;
};

/// Log Mel filterbank over 400-sample frames with 160 hop, as a 1-layer stack.
FeatureStack fbank(const AudioBuffer& buffer, const FbankOptions& options = {});

namespace detail {
/// In-place forward DFT of arbitrary length (FFTW).
void fft(std::span<std::complex<double>> data);
void ifft(std::span<std::complex<double>> data);
}  // namespace detail

}  // namespace maskbench
