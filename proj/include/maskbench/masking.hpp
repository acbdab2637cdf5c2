#pragma once

#include <cstddef>
#include <vector>

#include "maskbench/signal.hpp"

namespace maskbench {

inline constexpr double kDefaultMaskCeiling = 10.0;
inline constexpr double kMagnitudeFloor = 1e-8;

/// S sources x T frames x F bins of non-negative gains, source-major.
struct MaskSet {
  std::size_t sources = 0;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;

  MaskSet() = default;
  MaskSet(std::size_t s, std::size_t t, std::size_t f, double fill = 0.0)
      : sources(s), frames(t), bins(f), values(s * t * f, fill) {}

  std::size_t plane() const { return frames * bins; }
  double& at(std::size_t s, std::size_t t, std::size_t f) { return values[(s * frames + t) * bins + f]; }
  double at(std::size_t s, std::size_t t, std::size_t f) const {
    return values[(s * frames + t) * bins + f];
  }
  /// Copy of one source's T x F mask.
  std::vector<double> source(std::size_t s) const;
};

/// Ideal non-negative phase-sensitive mask per source:
/// max(0, |X_s| cos(theta_y - theta_s) / max(|Y|, eps)), clipped to `ceiling`.
MaskSet inpsm(const Spectrogram& mixture, const std::vector<Spectrogram>& sources,
              double ceiling = kDefaultMaskCeiling);

/// Scales each bin's magnitude by the mask; the mixture phase is untouched.
/// `mask` is T x F, row-major.
Spectrogram apply_mask(const Spectrogram& mixture, const std::vector<double>& mask);

/// istft(apply_mask(stft(mixture), mask)), truncated to the mixture length.
AudioBuffer reconstruct(const AudioBuffer& mixture, const std::vector<double>& mask,
                        const StftConfig& config);

/// Per-source reconstructions from a whole MaskSet, with masks clipped to `ceiling`.
std::vector<AudioBuffer> reconstruct_all(const AudioBuffer& mixture, const MaskSet& masks,
                                         const StftConfig& config,
                                         double ceiling = kDefaultMaskCeiling);

}  // namespace maskbench
