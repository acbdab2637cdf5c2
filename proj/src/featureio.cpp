#include "maskbench/featureio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "maskbench/error.hpp"

namespace maskbench {
namespace {

constexpr std::size_t kHeaderBytes = 4 + 6 * 4 + 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  require(v <= 0xFFFFFFFFu, ErrorKind::shape, std::string(what) + " exceeds u32");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void FeatureStack::validate() const {
  require(layers >= 1 && frames >= 1 && dims >= 1, ErrorKind::shape,
          "feature stack needs K, T, D >= 1");
  require(values.size() == layers * frames * dims, ErrorKind::shape,
          "feature stack payload does not match K*T*D");
  require(stride_samples > 0, ErrorKind::data, "feature stride must be positive");
  require(layer_names.empty() || layer_names.size() == layers, ErrorKind::shape,
          "layer_names must be empty or have K entries");
  for (std::size_t i = 0; i < values.size(); ++i)
    require(std::isfinite(values[i]), ErrorKind::data,
            "non-finite feature value at index " + std::to_string(i));
}

std::vector<std::uint8_t> encode_features(const FeatureStack& stack) {
  stack.validate();
  std::string names;
  for (std::size_t i = 0; i < stack.layer_names.size(); ++i) {
    if (i) names.push_back('\n');
    names += stack.layer_names[i];
  }
  require(names.size() <= 255, ErrorKind::data, "layer name block exceeds 255 bytes");

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + names.size() + stack.values.size() * 4);
  out.insert(out.end(), std::begin(kFeatureMagic), std::end(kFeatureMagic));
  put_u32(out, kFeatureVersion);
  put_u32(out, checked_u32(stack.layers, "K"));
  put_u32(out, checked_u32(stack.frames, "T"));
  put_u32(out, checked_u32(stack.dims, "D"));
  put_u32(out, stack.stride_samples);
  put_u32(out, stack.sample_rate);
  out.push_back(static_cast<std::uint8_t>(names.size()));
  out.insert(out.end(), names.begin(), names.end());
  for (float v : stack.values) {
    std::uint32_t raw;
    std::memcpy(&raw, &v, sizeof raw);
    put_u32(out, raw);
  }
  return out;
}

FeatureStack decode_features(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= kHeaderBytes, ErrorKind::format, "feature file shorter than header");
  require(std::memcmp(bytes.data(), kFeatureMagic, 4) == 0, ErrorKind::format,
          "bad feature file magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  require(version == kFeatureVersion, ErrorKind::format,
          "unsupported feature file version " + std::to_string(version));

  FeatureStack stack;
  stack.layers = get_u32(bytes.data() + 8);
  stack.frames = get_u32(bytes.data() + 12);
  stack.dims = get_u32(bytes.data() + 16);
  stack.stride_samples = get_u32(bytes.data() + 20);
  stack.sample_rate = get_u32(bytes.data() + 24);
  const std::size_t name_len = bytes[28];
  require(stack.layers >= 1 && stack.frames >= 1 && stack.dims >= 1, ErrorKind::format,
          "feature header has a zero dimension");

  const std::size_t payload_offset = kHeaderBytes + name_len;
  const std::size_t count = stack.layers * stack.frames * stack.dims;
  require(bytes.size() >= payload_offset && bytes.size() - payload_offset == count * 4,
          ErrorKind::corruption,
          "payload size mismatch: header declares " + std::to_string(count) +
              " floats, file has " +
              std::to_string(bytes.size() >= payload_offset ? bytes.size() - payload_offset : 0) +
              " payload bytes");

  if (name_len > 0) {
    std::string block(bytes.begin() + kHeaderBytes,
                      bytes.begin() + static_cast<std::ptrdiff_t>(payload_offset));
    std::istringstream lines(block);
    for (std::string line; std::getline(lines, line);) stack.layer_names.push_back(line);
    if (block.back() == '\n') stack.layer_names.emplace_back();
    require(stack.layer_names.size() == stack.layers, ErrorKind::format,
            "layer name count does not match K");
  }

  stack.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t raw = get_u32(bytes.data() + payload_offset + 4 * i);
    std::memcpy(&stack.values[i], &raw, sizeof raw);
  }
  stack.validate();
  return stack;
}

FeatureStack read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  try {
    return decode_features(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_features(const std::filesystem::path& path, const FeatureStack& stack) {
  const auto bytes = encode_features(stack);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed: " + path.string());
}

FeatureStack adapt_stride(const FeatureStack& stack, std::uint32_t target_stride,
                          UpsampleMode mode) {
  require(target_stride > 0, ErrorKind::config, "target stride must be positive");
  require(target_stride <= stack.stride_samples, ErrorKind::config,
          "adapt_stride only upsamples (stride " + std::to_string(stack.stride_samples) +
              " -> " + std::to_string(target_stride) + ")");
  require(stack.stride_samples % target_stride == 0, ErrorKind::config,
          "stride " + std::to_string(stack.stride_samples) + " is not a multiple of " +
              std::to_string(target_stride));
  const std::size_t ratio = stack.stride_samples / target_stride;
  if (ratio == 1) return stack;

  FeatureStack out(stack.layers, stack.frames * ratio, stack.dims, target_stride,
                   stack.sample_rate);
  out.layer_names = stack.layer_names;
  for (std::size_t k = 0; k < stack.layers; ++k) {
    for (std::size_t t = 0; t < stack.frames; ++t) {
      const float* cur = stack.frame(k, t);
      const float* next = stack.frame(k, std::min(t + 1, stack.frames - 1));
      for (std::size_t r = 0; r < ratio; ++r) {
        const double frac = static_cast<double>(r) / static_cast<double>(ratio);
        for (std::size_t d = 0; d < stack.dims; ++d) {
          out.at(k, t * ratio + r, d) =
              mode == UpsampleMode::repeat
                  ? cur[d]
                  : static_cast<float>((1.0 - frac) * cur[d] + frac * next[d]);
        }
      }
    }
  }
  return out;
}

FeatureStack align_to_frames(const FeatureStack& stack, std::size_t target_frames) {
  require(target_frames >= 1, ErrorKind::alignment, "target frame count must be positive");
  const std::size_t deviation = stack.frames > target_frames ? stack.frames - target_frames
                                                             : target_frames - stack.frames;
  const double tolerance = std::max(4.0, 0.01 * static_cast<double>(target_frames));
  require(static_cast<double>(deviation) <= tolerance, ErrorKind::alignment,
          "feature frames " + std::to_string(stack.frames) + " vs target " +
              std::to_string(target_frames) + " exceeds tolerance");
  if (deviation == 0) return stack;

  FeatureStack out(stack.layers, target_frames, stack.dims, stack.stride_samples,
                   stack.sample_rate);
  out.layer_names = stack.layer_names;
  for (std::size_t k = 0; k < stack.layers; ++k) {
    for (std::size_t t = 0; t < target_frames; ++t) {
      const float* src = stack.frame(k, std::min(t, stack.frames - 1));
      std::copy_n(src, stack.dims, &out.at(k, t, 0));
    }
  }
  return out;
}

}  // namespace maskbench
