#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "maskbench/signal.hpp"

namespace maskbench {

inline constexpr double kPeakLimit = 0.99;

/// Integrated loudness (LUFS) of a mono buffer: K-weighting, 400 ms blocks with
/// 75% overlap, absolute gate at -70 LUFS and relative gate at -10 LU.
double measure_loudness(const AudioBuffer& buffer);

/// Linear gain that moves `buffer` to `target_lufs`.
double gain_to_loudness(const AudioBuffer& buffer, double target_lufs);

struct SnrMix {
  AudioBuffer mixture;
  AudioBuffer speech;  // after peak gain
  AudioBuffer noise;   // cropped, scaled, after peak gain
  double noise_gain = 0.0;
  double peak_gain = 1.0;
  std::size_t noise_offset = 0;
};

/// Scales noise so 10 log10(|speech|^2 / |noise|^2) == snr_db (+inf means no noise).
/// Longer noise is randomly cropped with `seed`; shorter noise is looped.
SnrMix mix_snr(const AudioBuffer& speech, const AudioBuffer& noise, double snr_db,
               std::uint64_t seed);

struct LufsRange {
  double lo = -33.0;
  double hi = -25.0;
};

inline constexpr LufsRange kSpeechLoudness{-33.0, -25.0};
inline constexpr LufsRange kNoiseLoudness{-38.0, -30.0};

struct LufsMix {
  AudioBuffer mixture;
  /// Leveled sources, then the leveled noise if present; all after peak gain.
  std::vector<AudioBuffer> components;
  std::vector<double> targets;
  std::vector<double> gains;
  double peak_gain = 1.0;
  std::size_t noise_offset = 0;
  std::size_t length = 0;
};

/// Levels each source (and the optional noise) to a uniformly drawn loudness and sums.
/// All signals are truncated to the shortest source.
LufsMix mix_librimix_style(const std::vector<AudioBuffer>& sources,
                           const std::optional<AudioBuffer>& noise,
                           LufsRange speech_range, LufsRange noise_range, std::uint64_t seed);

/// Rebuilds a mixture from raw signals and recorded gains in the same operation order
/// the mixers use, so recorded metadata reproduces files bit-for-bit.
std::vector<AudioBuffer> apply_gains(const std::vector<AudioBuffer>& raw,
                                     const std::vector<double>& gains, double peak_gain);
AudioBuffer sum_components(const std::vector<AudioBuffer>& components);

/// Crop (or loop) `signal` to `length` samples starting at `offset`.
AudioBuffer crop_or_loop(const AudioBuffer& signal, std::size_t length, std::size_t offset);

enum class SourceKind { speechlike, tonal, noise };

/// Deterministic synthetic stand-in for corpus audio, peak 0.5.
AudioBuffer synth_source(SourceKind kind, double duration_s, std::uint64_t seed,
                         int sample_rate = kHarnessSampleRate);

/// max over lags of |sum a[n] b[n+lag]| / (|a| |b|).
double max_normalized_xcorr(const AudioBuffer& a, const AudioBuffer& b);

}  // namespace maskbench
