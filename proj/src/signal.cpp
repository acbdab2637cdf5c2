#include "maskbench/signal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "maskbench/error.hpp"
#include "maskbench/featureio.hpp"

namespace maskbench {
namespace {

using cplx = std::complex<double>;

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t load_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

// Whole-sample symmetric reflection (no edge repeat), folded for any offset.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t length) {
  if (length == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (length - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  if (m >= static_cast<std::ptrdiff_t>(length)) m = period - m;
  return static_cast<std::size_t>(m);
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Windowed, centered frames of `x` transformed to one-sided spectra.
std::vector<cplx> analyze(const std::vector<double>& x, std::size_t frame_size,
                          std::size_t hop, std::size_t fft_size,
                          const std::vector<double>& window, std::size_t num_frames) {
  const std::size_t bins = fft_size / 2 + 1;
  const auto half = static_cast<std::ptrdiff_t>(frame_size / 2);
  std::vector<cplx> out(num_frames * bins);
  std::vector<cplx> buf(fft_size);
  for (std::size_t t = 0; t < num_frames; ++t) {
    std::fill(buf.begin(), buf.end(), cplx{});
    const auto start = static_cast<std::ptrdiff_t>(t * hop) - half;
    for (std::size_t n = 0; n < frame_size; ++n) {
      buf[n] = x[reflect_index(start + static_cast<std::ptrdiff_t>(n), x.size())] * window[n];
    }
    detail::fft(buf);
    std::copy_n(buf.begin(), bins, out.begin() + static_cast<std::ptrdiff_t>(t * bins));
  }
  return out;
}

}  // namespace

void StftConfig::validate() const {
  require(hop > 0 && hop <= frame_size && frame_size <= fft_size, ErrorKind::config,
          "STFT config requires 0 < hop <= frame_size <= fft_size (got hop=" +
              std::to_string(hop) + ", frame=" + std::to_string(frame_size) +
              ", fft=" + std::to_string(fft_size) + ")");
}

AudioBuffer read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  const auto fail = [&](const std::string& why) {
    throw Error(ErrorKind::format, path.string() + ": " + why);
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail("not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = load_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) fail("truncated fmt chunk");
      format = load_u16(bytes.data() + body);
      channels = load_u16(bytes.data() + body + 2);
      rate = load_u32(bytes.data() + body + 4);
      bits = load_u16(bytes.data() + body + 14);
      if (format == kFormatExtensible) {
        if (size < 26) fail("truncated extensible fmt chunk");
        format = load_u16(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + size > bytes.size()) fail("truncated data chunk");
      data = bytes.data() + body;
      data_size = size;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) fail("missing fmt chunk");
  if (data == nullptr) fail("missing data chunk");
  if (channels == 0 || rate == 0) fail("zero channels or sample rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw Error(ErrorKind::unsupported, path.string() + ": codec format=" +
                                            std::to_string(format) +
                                            " bits=" + std::to_string(bits));

  const std::size_t width = bits / 8;
  const std::size_t frame_bytes = width * channels;
  if (data_size % frame_bytes != 0) fail("data chunk is not a whole number of frames");
  const std::size_t n = data_size / frame_bytes;

  AudioBuffer out;
  out.sample_rate = static_cast<int>(rate);
  out.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + i * frame_bytes + c * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(load_u16(p)) / 32768.0;
      } else {
        float v;
        const std::uint32_t raw = load_u32(p);
        std::memcpy(&v, &raw, sizeof v);
        acc += v;
      }
    }
    out.samples[i] = acc / channels;
  }
  if (!all_finite(out.samples)) fail("non-finite samples");
  return out;
}

void write_wav(const std::filesystem::path& path, const AudioBuffer& buffer, WavCodec codec) {
  require(all_finite(buffer.samples), ErrorKind::precondition,
          "write_wav: buffer contains non-finite samples");
  require(buffer.sample_rate > 0, ErrorKind::precondition, "write_wav: bad sample rate");
  const bool pcm16 = codec == WavCodec::pcm16;
  const std::uint16_t bits = pcm16 ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(buffer.size() * (bits / 8));

  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, pcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(buffer.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_size);
  for (double s : buffer.samples) {
    if (pcm16) {
      const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
    } else {
      const float v = static_cast<float>(s);
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof raw);
      put_u32(out, raw);
    }
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(file), ErrorKind::io, "cannot open " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(file), ErrorKind::io, "write failed: " + path.string());
}

std::vector<double> make_window(WindowKind kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == WindowKind::rect) return w;
  for (std::size_t i = 0; i < n; ++i) {
    const double hann =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    w[i] = kind == WindowKind::hann ? hann : std::sqrt(hann);
  }
  return w;
}

std::size_t frame_count(std::size_t length, std::size_t hop) { return (length + hop - 1) / hop; }

Spectrogram stft(const AudioBuffer& buffer, const StftConfig& config) {
  config.validate();
  require(!buffer.samples.empty(), ErrorKind::precondition, "stft: empty buffer");
  Spectrogram spec;
  spec.config = config;
  spec.original_length = buffer.size();
  spec.num_frames = frame_count(buffer.size(), config.hop);
  spec.frames = analyze(buffer.samples, config.frame_size, config.hop, config.fft_size,
                        make_window(config.window, config.frame_size), spec.num_frames);
  return spec;
}

AudioBuffer istft(const Spectrogram& spec, int sample_rate) {
  const StftConfig& cfg = spec.config;
  cfg.validate();
  const std::size_t bins = cfg.bins();
  require(spec.frames.size() == spec.num_frames * bins, ErrorKind::shape,
          "istft: frame buffer does not match T x F");
  const std::vector<double> window = make_window(cfg.window, cfg.frame_size);
  const std::size_t length = spec.original_length;
  const auto half = static_cast<std::ptrdiff_t>(cfg.frame_size / 2);

  std::vector<double> out(length, 0.0), envelope(length, 0.0);
  std::vector<cplx> buf(cfg.fft_size);
  for (std::size_t t = 0; t < spec.num_frames; ++t) {
    for (std::size_t f = 0; f < bins; ++f) buf[f] = spec.at(t, f);
    for (std::size_t f = bins; f < cfg.fft_size; ++f) buf[f] = std::conj(buf[cfg.fft_size - f]);
    detail::ifft(buf);
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) - half;
    for (std::size_t n = 0; n < cfg.frame_size; ++n) {
      const std::ptrdiff_t idx = start + static_cast<std::ptrdiff_t>(n);
      if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(length)) continue;
      out[static_cast<std::size_t>(idx)] += buf[n].real() * window[n];
      envelope[static_cast<std::size_t>(idx)] += window[n] * window[n];
    }
  }
  for (std::size_t i = 0; i < length; ++i) {
    if (envelope[i] < 1e-10)
      throw Error(ErrorKind::config,
                  "istft: window/hop pair leaves a zero overlap-add envelope at sample " +
                      std::to_string(i));
    out[i] /= envelope[i];
  }
  return AudioBuffer{std::move(out), sample_rate};
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// HTK-style triangular filters over the one-sided power spectrum.
std::vector<std::vector<double>> mel_filters(int n_mels, std::size_t fft_size, int sample_rate) {
  const std::size_t bins = fft_size / 2 + 1;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(n_mels + 1));
  std::vector<std::vector<double>> filters(static_cast<std::size_t>(n_mels),
                                           std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < filters.size(); ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t f = 0; f < bins; ++f) {
      const double hz = static_cast<double>(f) * sample_rate / static_cast<double>(fft_size);
      if (hz > lo && hz <= mid)
        filters[m][f] = (hz - lo) / (mid - lo);
      else if (hz > mid && hz < hi)
        filters[m][f] = (hi - hz) / (hi - mid);
    }
  }
  return filters;
}

// Regression deltas over +-2 frames with edge replication.
std::vector<std::vector<double>> deltas(const std::vector<std::vector<double>>& feats) {
  const auto count = static_cast<std::ptrdiff_t>(feats.size());
  std::vector<std::vector<double>> out(feats.size(), std::vector<double>(feats[0].size(), 0.0));
  constexpr double denom = 2.0 * (1.0 + 4.0);
  for (std::ptrdiff_t t = 0; t < count; ++t) {
    for (std::ptrdiff_t n = 1; n <= 2; ++n) {
      const auto& next = feats[static_cast<std::size_t>(std::min(t + n, count - 1))];
      const auto& prev = feats[static_cast<std::size_t>(std::max(t - n, std::ptrdiff_t{0}))];
      for (std::size_t d = 0; d < next.size(); ++d)
        out[static_cast<std::size_t>(t)][d] += static_cast<double>(n) * (next[d] - prev[d]) / denom;
    }
  }
  return out;
}

}  // namespace

FeatureStack fbank(const AudioBuffer& buffer, const FbankOptions& options) {
  require(options.n_mels > 0, ErrorKind::config, "fbank: n_mels must be positive");
  require(buffer.sample_rate == kHarnessSampleRate, ErrorKind::precondition,
          "fbank: expects 16 kHz input");
  require(!buffer.samples.empty(), ErrorKind::precondition, "fbank: empty buffer");
  constexpr std::size_t frame = 400, hop = 160, nfft = 512;
  const std::size_t frames = frame_count(buffer.size(), hop);
  const auto spectra = analyze(buffer.samples, frame, hop, nfft,
                               make_window(WindowKind::hann, frame), frames);
  const auto filters = mel_filters(options.n_mels, nfft, buffer.sample_rate);
  const std::size_t bins = nfft / 2 + 1;

  std::vector<std::vector<double>> logmel(frames, std::vector<double>(filters.size()));
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t m = 0; m < filters.size(); ++m) {
      double energy = 0.0;
      for (std::size_t f = 0; f < bins; ++f)
        energy += filters[m][f] * std::norm(spectra[t * bins + f]);
      logmel[t][m] = std::log(std::max(energy, 1e-10));
    }
  }

  std::vector<std::vector<double>> feats = logmel;
  if (options.add_deltas) {
    const auto d1 = deltas(logmel);
    const auto d2 = deltas(d1);
    for (std::size_t t = 0; t < frames; ++t) {
      feats[t].insert(feats[t].end(), d1[t].begin(), d1[t].end());
      feats[t].insert(feats[t].end(), d2[t].begin(), d2[t].end());
    }
  }
  const std::size_t dims = feats[0].size();

  if (options.cmvn) {
    for (std::size_t d = 0; d < dims; ++d) {
      double mean = 0.0;
      for (const auto& row : feats) mean += row[d];
      mean /= static_cast<double>(frames);
      double var = 0.0;
      for (const auto& row : feats) var += (row[d] - mean) * (row[d] - mean);
      var /= static_cast<double>(frames);
      const double scale = var > 1e-20 ? 1.0 / std::sqrt(var) : 1.0;
      for (auto& row : feats) row[d] = (row[d] - mean) * scale;
    }
  }

  FeatureStack stack(1, frames, dims, hop, static_cast<std::uint32_t>(buffer.sample_rate));
  stack.layer_names = {"fbank"};
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t d = 0; d < dims; ++d) stack.at(0, t, d) = static_cast<float>(feats[t][d]);
  return stack;
}

}  // namespace maskbench
