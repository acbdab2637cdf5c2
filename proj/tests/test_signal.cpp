#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "maskbench/error.hpp"
#include "maskbench/featureio.hpp"
#include "maskbench/signal.hpp"
#include "test_helpers.hpp"

using namespace maskbench;
using maskbench::testing::random_buffer;
using maskbench::testing::relative_l2;
using maskbench::testing::temp_dir;

namespace {

// Minimal PCM16 writer independent of write_wav, for reader tests.
void write_raw_pcm16(const std::filesystem::path& path, const std::vector<std::int16_t>& data,
                     std::uint16_t channels, std::uint32_t declared_bytes) {
  std::ofstream out(path, std::ios::binary);
  auto u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  out.write("RIFF", 4);
  u32(36 + declared_bytes);
  out.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(channels);
  u32(16000);
  u32(16000 * 2 * channels);
  u16(static_cast<std::uint16_t>(2 * channels));
  u16(16);
  out.write("data", 4);
  u32(declared_bytes);
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * 2));
}

}  // namespace

TEST_CASE("read_wav decodes PCM16 silence and full-scale negative", "[signal][wav]") {
  const auto dir = temp_dir("signal_wav");
  write_raw_pcm16(dir / "silence.wav", std::vector<std::int16_t>(48000, 0), 1, 96000);
  const auto silence = read_wav(dir / "silence.wav");
  CHECK(silence.sample_rate == 16000);
  REQUIRE(silence.size() == 48000);
  CHECK(std::all_of(silence.samples.begin(), silence.samples.end(), [](double v) { return v == 0.0; }));

  write_raw_pcm16(dir / "min.wav", {-32768, 16384}, 1, 4);
  const auto min = read_wav(dir / "min.wav");
  CHECK(min.samples[0] == -1.0);
  CHECK(min.samples[1] == 0.5);
}

TEST_CASE("read_wav averages channels and rejects malformed files", "[signal][wav]") {
  const auto dir = temp_dir("signal_wav_bad");
  write_raw_pcm16(dir / "stereo.wav", {16384, 0, -16384, -16384}, 2, 8);
  const auto stereo = read_wav(dir / "stereo.wav");
  REQUIRE(stereo.size() == 2);
  CHECK(stereo.samples[0] == 0.25);
  CHECK(stereo.samples[1] == -0.5);

  write_raw_pcm16(dir / "truncated.wav", std::vector<std::int16_t>(10, 1), 1, 400);
  try {
    read_wav(dir / "truncated.wav");
    FAIL("expected format error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }

  std::ofstream(dir / "junk.wav") << "not a wav file at all";
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), Error);

  // 24-bit PCM is a valid RIFF file but not a supported codec.
  auto bytes = std::vector<char>();
  {
    write_raw_pcm16(dir / "p24.wav", {0, 0, 0}, 1, 6);
    std::ifstream in(dir / "p24.wav", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  bytes[34] = 24;
  bytes[32] = 3;
  std::ofstream(dir / "p24.wav", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  try {
    read_wav(dir / "p24.wav");
    FAIL("expected unsupported error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::unsupported);
  }
}

TEST_CASE("write_wav round trips", "[signal][wav]") {
  const auto dir = temp_dir("signal_wav_rt");
  auto buf = random_buffer(4000, 11, 1.0);
  for (double& v : buf.samples) v = static_cast<float>(v);  // float32-representable
  write_wav(dir / "f.wav", buf, WavCodec::float32);
  CHECK(read_wav(dir / "f.wav").samples == buf.samples);

  write_wav(dir / "p.wav", buf, WavCodec::pcm16);
  const auto pcm = read_wav(dir / "p.wav");
  double worst = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) worst = std::max(worst, std::abs(pcm.samples[i] - buf.samples[i]));
  CHECK(worst <= 1.0 / 32768.0);

  buf.samples[7] = std::nan("");
  try {
    write_wav(dir / "nan.wav", buf, WavCodec::float32);
    FAIL("expected precondition error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::precondition);
  }
}

TEST_CASE("stft frame count follows ceil(len / hop)", "[signal][stft]") {
  StftConfig cfg;
  CHECK(stft(AudioBuffer{std::vector<double>(48000, 0.0)}, cfg).num_frames == 300);
  for (std::size_t len = 1; len <= 10 * cfg.hop; ++len) {
    const auto spec = stft(random_buffer(len, len), cfg);
    REQUIRE(spec.num_frames == (len + cfg.hop - 1) / cfg.hop);
    REQUIRE(spec.bins() == 257);
  }
}

TEST_CASE("stft of zeros is zero and a bin-centred sinusoid stays in its bin", "[signal][stft]") {
  StftConfig cfg{512, 160, 512, WindowKind::rect};
  const auto zero = stft(AudioBuffer{std::vector<double>(3000, 0.0)}, cfg);
  CHECK(std::all_of(zero.frames.begin(), zero.frames.end(), [](auto c) { return c == std::complex<double>{}; }));

  const std::size_t k = 20;
  AudioBuffer tone{std::vector<double>(8000)};
  for (std::size_t n = 0; n < tone.size(); ++n)
    tone.samples[n] = std::cos(2.0 * std::numbers::pi * k * n / 512.0);
  const auto spec = stft(tone, cfg);
  // Interior frames only: the reflected edges break periodicity.
  for (std::size_t t = 2; t + 2 < spec.num_frames; ++t) {
    const double peak = std::abs(spec.at(t, k));
    CHECK(peak == Catch::Approx(256.0).epsilon(1e-9));
    for (std::size_t f = 0; f < spec.bins(); ++f)
      if (f != k) REQUIRE(std::abs(spec.at(t, f)) < 1e-10 * peak);
  }
}

TEST_CASE("stft is linear", "[signal][stft]") {
  StftConfig cfg;
  const auto x = random_buffer(5000, 1), y = random_buffer(5000, 2);
  AudioBuffer z{std::vector<double>(5000)};
  const double a = 0.7, b = -1.3;
  for (std::size_t i = 0; i < z.size(); ++i) z.samples[i] = a * x.samples[i] + b * y.samples[i];
  const auto sx = stft(x, cfg), sy = stft(y, cfg), sz = stft(z, cfg);
  for (std::size_t t = 0; t < sz.num_frames; ++t) {
    double num = 0.0, den = 0.0;
    for (std::size_t f = 0; f < sz.bins(); ++f) {
      num += std::norm(sz.at(t, f) - (a * sx.at(t, f) + b * sy.at(t, f)));
      den += std::norm(sz.at(t, f));
    }
    REQUIRE(std::sqrt(num / den) < 1e-6);
  }
}

TEST_CASE("istft inverts stft for COLA-satisfying configs", "[signal][istft]") {
  const std::vector<StftConfig> configs = {
      {512, 160, 512, WindowKind::sqrt_hann}, {512, 256, 512, WindowKind::sqrt_hann},
      {400, 160, 512, WindowKind::hann},      {640, 320, 640, WindowKind::sqrt_hann},
      {256, 128, 256, WindowKind::rect},      {300, 100, 300, WindowKind::sqrt_hann}};
  std::uint64_t seed = 100;
  for (const auto& cfg : configs) {
    for (std::size_t len : {1u, 7u, 159u, 161u, 16000u, 33333u}) {
      const auto x = random_buffer(len, seed++);
      const auto y = istft(stft(x, cfg));
      REQUIRE(y.size() == len);
      REQUIRE(relative_l2(x.samples, y.samples) < 1e-6);
    }
  }
}

TEST_CASE("istft edge cases", "[signal][istft]") {
  StftConfig cfg;
  auto spec = stft(random_buffer(4000, 5), cfg);
  for (auto& v : spec.frames) v = {};
  const auto silent = istft(spec);
  CHECK(std::all_of(silent.samples.begin(), silent.samples.end(), [](double v) { return v == 0.0; }));

  spec = stft(random_buffer(4000, 6), cfg);
  for (std::size_t t = 0; t < spec.num_frames; ++t)
    for (std::size_t f = 0; f < spec.bins(); f += 2) spec.at(t, f) = {};
  const auto masked = istft(spec);
  CHECK(masked.size() == 4000);
  CHECK(std::all_of(masked.samples.begin(), masked.samples.end(), [](double v) { return std::isfinite(v); }));

  // Hann analysis/synthesis with hop == frame leaves zeros in the overlap-add envelope.
  StftConfig gap{256, 256, 256, WindowKind::hann};
  try {
    istft(stft(random_buffer(2000, 7), gap));
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
  CHECK_THROWS_AS((StftConfig{256, 300, 512, WindowKind::hann}.validate()), Error);
}

TEST_CASE("fbank shapes, CMVN and time invariance", "[signal][fbank]") {
  const auto x = random_buffer(16000, 21);
  const auto feats = fbank(x);
  CHECK(feats.layers == 1);
  CHECK(feats.dims == 240);
  CHECK(feats.stride_samples == 160);
  CHECK(feats.frames == 100);
  for (std::size_t d = 0; d < feats.dims; ++d) {
    double mean = 0.0, var = 0.0;
    for (std::size_t t = 0; t < feats.frames; ++t) mean += feats.at(0, t, d);
    mean /= feats.frames;
    for (std::size_t t = 0; t < feats.frames; ++t) var += std::pow(feats.at(0, t, d) - mean, 2);
    var /= feats.frames;
    REQUIRE(std::abs(mean) < 1e-6);
    REQUIRE(std::abs(var - 1.0) < 1e-4);
  }

  const auto plain = fbank(x, {80, false, false});
  CHECK(plain.dims == 80);

  const auto constant = fbank(AudioBuffer{std::vector<double>(8000, 0.25)}, {80, true, false});
  for (std::size_t t = 3; t + 3 < constant.frames; ++t)
    for (std::size_t d = 0; d < constant.dims; ++d) REQUIRE(constant.at(0, t, d) == constant.at(0, 2, d));

  try {
    fbank(x, {0, true, true});
    FAIL("expected config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::config);
  }
}

TEST_CASE("centered frames leave the tail uncovered when hop exceeds half a frame", "[signal][istft]") {
  // ceil(len / hop) frames centred at t * hop reach only (T-1) * hop + frame/2 - 1.
  StftConfig cfg{512, 320, 512, WindowKind::sqrt_hann};
  CHECK_THROWS_AS(istft(stft(random_buffer(16000, 3), cfg)), Error);
}
