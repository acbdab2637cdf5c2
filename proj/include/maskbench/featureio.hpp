#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace maskbench {

/// K layers x T frames x D dims, stored layer-major ([layer][frame][dim]).
struct FeatureStack {
  std::size_t layers = 0;
  std::size_t frames = 0;
  std::size_t dims = 0;
  std::uint32_t stride_samples = 160;
  std::uint32_t sample_rate = 16000;
  std::vector<std::string> layer_names;
  std::vector<float> values;

  FeatureStack() = default;
  FeatureStack(std::size_t k, std::size_t t, std::size_t d, std::uint32_t stride,
               std::uint32_t rate = 16000)
      : layers(k), frames(t), dims(d), stride_samples(stride), sample_rate(rate),
        values(k * t * d, 0.0f) {}

  float& at(std::size_t k, std::size_t t, std::size_t d) {
    return values[(k * frames + t) * dims + d];
  }
  float at(std::size_t k, std::size_t t, std::size_t d) const {
    return values[(k * frames + t) * dims + d];
  }
  const float* frame(std::size_t k, std::size_t t) const {
    return values.data() + (k * frames + t) * dims;
  }

  /// Throws data/shape errors when the invariants do not hold.
  void validate() const;
};

enum class UpsampleMode { repeat, linear };

inline constexpr char kFeatureMagic[4] = {'S', 'S', 'L', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

std::vector<std::uint8_t> encode_features(const FeatureStack& stack);
FeatureStack decode_features(const std::vector<std::uint8_t>& bytes);

FeatureStack read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureStack& stack);

/// Upsamples to `target_stride`; stack.stride_samples must be an integer multiple of it.
FeatureStack adapt_stride(const FeatureStack& stack, std::uint32_t target_stride,
                          UpsampleMode mode = UpsampleMode::repeat);

/// Truncates or edge-replicates to exactly `target_frames` frames.
/// The deviation must be within max(4, 1% of target_frames).
FeatureStack align_to_frames(const FeatureStack& stack, std::size_t target_frames);

}  // namespace maskbench
