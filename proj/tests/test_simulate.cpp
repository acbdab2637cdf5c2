#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "maskbench/error.hpp"
#include "maskbench/simulate.hpp"
#include "test_helpers.hpp"

using namespace maskbench;

namespace {

double energy(const AudioBuffer& b) {
  double e = 0.0;
  for (double v : b.samples) e += v * v;
  return e;
}

// Power gain of the BS.1770 K-weighting cascade at `hz`, from the analog-matched
// biquad coefficients tabulated for 48 kHz re-derived at 16 kHz by bilinear transform.
double k_weighting_power_gain(double hz, double fs) {
  const double pi = std::numbers::pi;
  const std::complex<double> z = std::polar(1.0, 2.0 * pi * hz / fs);
  const auto biquad = [&](double b0, double b1, double b2, double a1, double a2) {
    const auto zi = 1.0 / z;
    return (b0 + b1 * zi + b2 * zi * zi) / (1.0 + a1 * zi + a2 * zi * zi);
  };
  double k = std::tan(pi * 1681.974450955533 / fs);
  const double q1 = 0.7071752369554196;
  const double vh = std::pow(10.0, 3.999843853973347 / 20.0);
  const double vb = std::pow(vh, 0.4996667741545416);
  double a0 = 1.0 + k / q1 + k * k;
  const auto shelf = biquad((vh + vb * k / q1 + k * k) / a0, 2.0 * (k * k - vh) / a0,
                            (vh - vb * k / q1 + k * k) / a0, 2.0 * (k * k - 1.0) / a0,
                            (1.0 - k / q1 + k * k) / a0);
  k = std::tan(pi * 38.13547087602444 / fs);
  const double q2 = 0.5003270373238773;
  a0 = 1.0 + k / q2 + k * k;
  const auto hp = biquad(1.0, -2.0, 1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q2 + k * k) / a0);
  return std::norm(shelf * hp);
}

AudioBuffer sine(double hz, double amp, double seconds) {
  AudioBuffer b{std::vector<double>(static_cast<std::size_t>(seconds * 16000))};
  for (std::size_t n = 0; n < b.size(); ++n)
    b.samples[n] = amp * std::sin(2.0 * std::numbers::pi * hz * n / 16000.0);
  return b;
}

}  // namespace

TEST_CASE("full-scale 997 Hz sine measures about -3.01 LUFS", "[simulate][loudness]") {
  const double oracle = -0.691 + 10.0 * std::log10(0.5 * k_weighting_power_gain(997.0, 16000.0));
  const double measured = measure_loudness(sine(997.0, 1.0, 5.0));
  CHECK(oracle == Catch::Approx(-3.01).margin(0.1));
  CHECK(measured == Catch::Approx(oracle).margin(0.02));
  CHECK(measured == Catch::Approx(-3.01).margin(0.1));
}

TEST_CASE("loudness gain behaviour", "[simulate][loudness]") {
  const auto x = synth_source(SourceKind::speechlike, 3.0, 4);
  auto half = x;
  for (double& v : half.samples) v *= 0.5;
  CHECK(measure_loudness(x) - measure_loudness(half) == Catch::Approx(20.0 * std::log10(2.0)).margin(1e-9));

  auto leveled = x;
  const double g = gain_to_loudness(x, -25.0);
  for (double& v : leveled.samples) v *= g;
  CHECK(measure_loudness(leveled) == Catch::Approx(-25.0).margin(0.2));

  try {
    measure_loudness(AudioBuffer{std::vector<double>(16000, 0.0)});
    FAIL("expected silence error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::silence);
  }
}

TEST_CASE("mix_snr hits the requested SNR", "[simulate][snr]") {
  const auto speech = synth_source(SourceKind::speechlike, 2.0, 1);
  const auto noise = synth_source(SourceKind::noise, 3.0, 2);
  for (double snr : {15.0, 10.0, 5.0, 0.0, -5.0}) {
    const auto mix = mix_snr(speech, noise, snr, 9);
    REQUIRE(std::abs(10.0 * std::log10(energy(mix.speech) / energy(mix.noise)) - snr) < 1e-6);
    for (std::size_t i = 0; i < mix.mixture.size(); ++i)
      REQUIRE(mix.mixture.samples[i] == mix.speech.samples[i] + mix.noise.samples[i]);
  }
  const auto zero = mix_snr(speech, noise, 0.0, 9);
  CHECK(energy(zero.speech) == Catch::Approx(energy(zero.noise)).epsilon(1e-9));

  const auto clean = mix_snr(speech, noise, INFINITY, 9);
  CHECK(clean.mixture.samples == speech.samples);

  // Loud inputs trigger joint peak normalisation, which keeps the SNR.
  auto loud = speech;
  for (double& v : loud.samples) v *= 3.0;
  const auto limited = mix_snr(loud, noise, 0.0, 3);
  CHECK(limited.peak_gain < 1.0);
  double peak = 0.0;
  for (double v : limited.mixture.samples) peak = std::max(peak, std::abs(v));
  CHECK(peak <= kPeakLimit + 1e-12);
  CHECK(std::abs(10.0 * std::log10(energy(limited.speech) / energy(limited.noise))) < 1e-6);

  // Short noise is looped.
  const auto short_noise = synth_source(SourceKind::noise, 0.5, 5);
  CHECK(mix_snr(speech, short_noise, 5.0, 1).mixture.size() == speech.size());

  CHECK_THROWS_AS(mix_snr(speech, AudioBuffer{std::vector<double>(100, 0.0)}, 0.0, 1), Error);
}

TEST_CASE("mix_librimix_style levels every component", "[simulate][lufs]") {
  const std::vector<AudioBuffer> srcs = {synth_source(SourceKind::speechlike, 3.0, 11),
                                         synth_source(SourceKind::speechlike, 3.5, 12)};
  const auto noise = synth_source(SourceKind::noise, 4.0, 13);
  const auto mix = mix_librimix_style(srcs, noise, kSpeechLoudness, kNoiseLoudness, 77);
  REQUIRE(mix.components.size() == 3);
  CHECK(mix.length == srcs[0].size());
  for (std::size_t i = 0; i < 3; ++i) {
    const LufsRange range = i < 2 ? kSpeechLoudness : kNoiseLoudness;
    CHECK(mix.targets[i] >= range.lo);
    CHECK(mix.targets[i] <= range.hi);
    auto pre_peak = mix.components[i];
    for (double& v : pre_peak.samples) v /= mix.peak_gain;
    CHECK(measure_loudness(pre_peak) == Catch::Approx(mix.targets[i]).margin(0.2));
  }
  const auto again = mix_librimix_style(srcs, noise, kSpeechLoudness, kNoiseLoudness, 77);
  CHECK(again.gains == mix.gains);
  CHECK(again.mixture.samples == mix.mixture.samples);

  // Recorded gains rebuild the mixture bit-for-bit.
  std::vector<AudioBuffer> raw = {crop_or_loop(srcs[0], mix.length, 0), crop_or_loop(srcs[1], mix.length, 0),
                                  crop_or_loop(noise, mix.length, mix.noise_offset)};
  CHECK(sum_components(apply_gains(raw, mix.gains, mix.peak_gain)).samples == mix.mixture.samples);

  const auto fixed = mix_librimix_style(srcs, std::nullopt, {-30, -30}, kNoiseLoudness, 5);
  CHECK(fixed.targets == std::vector<double>{-30.0, -30.0});

  CHECK_THROWS_AS(mix_librimix_style(srcs, std::nullopt, {-20, -30}, kNoiseLoudness, 5), Error);
}

TEST_CASE("synth_source is deterministic and decorrelated", "[simulate][synth]") {
  for (auto kind : {SourceKind::speechlike, SourceKind::tonal, SourceKind::noise}) {
    const auto a = synth_source(kind, 2.0, 5);
    CHECK(a.size() == 32000);
    CHECK(a.samples == synth_source(kind, 2.0, 5).samples);
  }
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto a = synth_source(SourceKind::speechlike, 2.0, seed);
    const auto b = synth_source(SourceKind::speechlike, 2.0, seed + 100);
    const double xc = max_normalized_xcorr(a, b);
    INFO("seeds " << seed << "," << seed + 100 << " xcorr " << xc);
    CHECK(xc < 0.2);
  }
  CHECK_THROWS_AS(synth_source(SourceKind::tonal, 0.2, 1), Error);
  CHECK_THROWS_AS(synth_source(SourceKind::tonal, 31.0, 1), Error);
}
