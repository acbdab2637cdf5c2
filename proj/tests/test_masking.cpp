#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "maskbench/error.hpp"
#include "maskbench/masking.hpp"
#include "maskbench/metrics.hpp"
#include "maskbench/simulate.hpp"
#include "test_helpers.hpp"

using namespace maskbench;
using maskbench::testing::random_buffer;
using maskbench::testing::relative_l2;

namespace {

Spectrogram random_spec(std::size_t frames, std::uint64_t seed) {
  Rng rng(seed);
  Spectrogram s;
  s.config = StftConfig{};
  s.num_frames = frames;
  s.original_length = frames * s.config.hop;
  s.frames.resize(frames * s.bins());
  for (auto& v : s.frames) v = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
  return s;
}

}  // namespace

TEST_CASE("inpsm analytic cases hold bin-exactly", "[masking]") {
  const auto mix = random_spec(4, 1);

  const auto same = inpsm(mix, {mix});
  for (double m : same.values) REQUIRE(m == 1.0);

  // Quadrature: X = i * Y / 2 (exact scaling), so Re(X conj Y) vanishes exactly.
  Spectrogram quad = mix, opposite = mix;
  for (std::size_t i = 0; i < mix.frames.size(); ++i) {
    const auto y = mix.frames[i];
    quad.frames[i] = {-y.imag() * 0.5, y.real() * 0.5};
    opposite.frames[i] = -1.7 * y;
  }
  for (double m : inpsm(mix, {quad}).values) REQUIRE(m == 0.0);
  for (double m : inpsm(mix, {opposite}).values) REQUIRE(m == 0.0);
}

TEST_CASE("inpsm respects the MaskSet invariants on arbitrary inputs", "[masking]") {
  auto mix = random_spec(6, 2);
  mix.frames[3] = {};
  mix.frames[4] = {1e-12, 0.0};
  auto a = random_spec(6, 3), b = random_spec(6, 4);
  a.frames[4] = {5.0, 0.0};
  const auto masks = inpsm(mix, {a, b});
  CHECK(masks.sources == 2);
  CHECK(masks.frames == 6);
  CHECK(masks.bins == 257);
  for (double m : masks.values) REQUIRE((m >= 0.0 && m <= kDefaultMaskCeiling && std::isfinite(m)));
  CHECK(masks.at(0, 0, 4) == kDefaultMaskCeiling);  // tiny |Y| floored, then clipped
  CHECK(masks.at(0, 0, 3) == 0.0);                   // |Y| == 0
  const auto low = inpsm(mix, {a, b}, 1.0);
  for (double m : low.values) REQUIRE(m <= 1.0);

  auto short_src = random_spec(5, 9);
  CHECK_THROWS_AS(inpsm(mix, {short_src}), Error);
}

TEST_CASE("doubling a source never lowers its unclipped phase-sensitive ratio", "[masking][property]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto mix = random_spec(3, 100 + seed);
    auto src = random_spec(3, 200 + seed);
    auto doubled = src;
    for (auto& v : doubled.frames) v *= 2.0;
    const auto m1 = inpsm(mix, {src}, 1e300);
    const auto m2 = inpsm(mix, {doubled}, 1e300);
    for (std::size_t i = 0; i < m1.values.size(); ++i) REQUIRE(m2.values[i] >= m1.values[i]);
  }
}

TEST_CASE("apply_mask scales magnitude and keeps phase", "[masking]") {
  const auto mix = random_spec(5, 7);
  const std::size_t n = mix.frames.size();
  CHECK(apply_mask(mix, std::vector<double>(n, 1.0)).frames == mix.frames);
  for (const auto& v : apply_mask(mix, std::vector<double>(n, 0.0)).frames) REQUIRE(std::abs(v) == 0.0);
  const auto half = apply_mask(mix, std::vector<double>(n, 0.5));
  for (std::size_t i = 0; i < n; ++i) {
    REQUIRE(std::abs(half.frames[i]) == Catch::Approx(0.5 * std::abs(mix.frames[i])).epsilon(1e-15));
    REQUIRE(std::arg(half.frames[i]) == std::arg(mix.frames[i]));
  }
  std::vector<double> bad(n, 1.0);
  bad[3] = -0.1;
  try {
    apply_mask(mix, bad);
    FAIL("expected precondition error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::precondition);
  }
  CHECK_THROWS_AS(apply_mask(mix, std::vector<double>(n - 1, 1.0)), Error);
}

TEST_CASE("reconstruct with identity, zero and oracle masks", "[masking]") {
  StftConfig cfg;
  const auto x = random_buffer(8000, 17);
  const std::size_t cells = frame_count(x.size(), cfg.hop) * cfg.bins();
  CHECK(relative_l2(x.samples, reconstruct(x, std::vector<double>(cells, 1.0), cfg).samples) < 1e-6);
  const auto silent = reconstruct(x, std::vector<double>(cells, 0.0), cfg);
  for (double v : silent.samples) REQUIRE(v == 0.0);

  // 0 dB two-source mixture: the oracle mask must beat the unprocessed mixture per source.
  const auto a = synth_source(SourceKind::speechlike, 2.0, 1);
  const auto b = synth_source(SourceKind::speechlike, 2.0, 2);
  const auto mixed = mix_librimix_style({a, b}, std::nullopt, {-25, -25}, {-30, -30}, 3);
  const auto masks = inpsm(stft(mixed.mixture, cfg), {stft(mixed.components[0], cfg), stft(mixed.components[1], cfg)});
  const auto est = reconstruct_all(mixed.mixture, masks, cfg);
  for (std::size_t s = 0; s < 2; ++s) {
    const double oracle = si_snr(mixed.components[s], est[s]);
    const double baseline = si_snr(mixed.components[s], mixed.mixture);
    INFO("source " << s << " oracle " << oracle << " mixture " << baseline);
    CHECK(oracle > baseline);
  }
}
