#include "maskbench/masking.hpp"

#include <algorithm>
#include <cmath>

#include "maskbench/error.hpp"

namespace maskbench {

std::vector<double> MaskSet::source(std::size_t s) const {
  const auto begin = values.begin() + static_cast<std::ptrdiff_t>(s * plane());
  return {begin, begin + static_cast<std::ptrdiff_t>(plane())};
}

MaskSet inpsm(const Spectrogram& mixture, const std::vector<Spectrogram>& sources,
              double ceiling) {
  require(!sources.empty(), ErrorKind::shape, "inpsm: no sources");
  require(ceiling > 0.0, ErrorKind::config, "inpsm: mask ceiling must be positive");
  for (const auto& src : sources) {
    require(src.config == mixture.config && src.num_frames == mixture.num_frames &&
                src.frames.size() == mixture.frames.size(),
            ErrorKind::shape, "inpsm: source spectrogram does not match the mixture");
  }
  const std::size_t frames = mixture.num_frames, bins = mixture.bins();
  MaskSet masks(sources.size(), frames, bins);
  for (std::size_t s = 0; s < sources.size(); ++s) {
    for (std::size_t i = 0; i < frames * bins; ++i) {
      const auto y = mixture.frames[i];
      const auto x = sources[s].frames[i];
      // |X| cos(theta_y - theta_x) / |Y| == Re(X conj(Y)) / |Y|^2
      const double mag_y = std::abs(y);
      const double power_y = mag_y >= kMagnitudeFloor ? std::norm(y) : mag_y * kMagnitudeFloor;
      double m = std::max(0.0, (x.real() * y.real() + x.imag() * y.imag()) / power_y);
      if (std::isnan(m)) m = 0.0;  // Y == 0 exactly
      masks.values[s * frames * bins + i] = std::min(m, ceiling);
    }
  }
  return masks;
}

Spectrogram apply_mask(const Spectrogram& mixture, const std::vector<double>& mask) {
  require(mask.size() == mixture.num_frames * mixture.bins(), ErrorKind::shape,
          "apply_mask: mask shape does not match the spectrogram");
  Spectrogram out = mixture;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    require(mask[i] >= 0.0 && std::isfinite(mask[i]), ErrorKind::precondition,
            "apply_mask: negative or non-finite mask entry at " + std::to_string(i));
    out.frames[i] *= mask[i];
  }
  return out;
}

AudioBuffer reconstruct(const AudioBuffer& mixture, const std::vector<double>& mask,
                        const StftConfig& config) {
  return istft(apply_mask(stft(mixture, config), mask), mixture.sample_rate);
}

std::vector<AudioBuffer> reconstruct_all(const AudioBuffer& mixture, const MaskSet& masks,
                                         const StftConfig& config, double ceiling) {
  const Spectrogram spec = stft(mixture, config);
  require(masks.frames == spec.num_frames && masks.bins == spec.bins(), ErrorKind::shape,
          "reconstruct_all: mask set does not match the mixture STFT grid");
  std::vector<AudioBuffer> out;
  out.reserve(masks.sources);
  for (std::size_t s = 0; s < masks.sources; ++s) {
    auto mask = masks.source(s);
    for (double& m : mask) m = std::min(m, ceiling);
    out.push_back(istft(apply_mask(spec, mask), mixture.sample_rate));
  }
  return out;
}

}  // namespace maskbench
