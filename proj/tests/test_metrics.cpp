#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "maskbench/error.hpp"
#include "maskbench/metrics.hpp"
#include "test_helpers.hpp"

using namespace maskbench;
using maskbench::testing::random_buffer;

namespace {
AudioBuffer buf(std::vector<double> v) { return AudioBuffer{std::move(v), 16000}; }
}  // namespace

TEST_CASE("si_snr hand-computed cases", "[metrics]") {
  CHECK(si_snr(buf({1, 0}), buf({1, 1})) == Catch::Approx(0.0).margin(1e-12));
  const auto s = random_buffer(100, 1);
  auto scaled = s;
  for (double& v : scaled.samples) v *= 3.7;
  CHECK(si_snr(s, scaled) == kSiSnrCapDb);
  CHECK(si_snr(buf({1, 0}), buf({0, 1})) == -kSiSnrCapDb);
}

TEST_CASE("si_snri hand-oracle case", "[metrics]") {
  // s = [1,0,0,0]; m = s + e1 -> s_target = s, e = [0,1,0,0]: 0 dB.
  // est = s + 0.5 e1 -> s_target = s, e = [0,0.5,0,0]: 10 log10(1 / 0.25).
  const double expected = 10.0 * std::log10(4.0) - 0.0;
  CHECK(expected == Catch::Approx(6.0206).margin(1e-4));
  const double got = si_snri(buf({1, 0, 0, 0}), buf({1, 0.5, 0, 0}), buf({1, 1, 0, 0}));
  CHECK(std::abs(got - expected) < 1e-12);
  const auto ref = random_buffer(200, 5);
  auto noisy = random_buffer(200, 6);
  for (std::size_t i = 0; i < 200; ++i) noisy.samples[i] += ref.samples[i];
  CHECK(si_snri(ref, noisy, noisy) == 0.0);
  CHECK(si_snri(ref, ref, noisy) > 100.0);
}

TEST_CASE("si_snr scale invariance including negative scale", "[metrics][property]") {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_buffer(64, 1000 + i);
    const auto e = random_buffer(64, 5000 + i);
    double alpha = rng.uniform(0.01, 100.0);
    if (i % 2) alpha = -alpha;
    auto scaled = e;
    for (double& v : scaled.samples) v *= alpha;
    REQUIRE(std::abs(si_snr(s, scaled) - si_snr(s, e)) < 1e-9);
  }
}

TEST_CASE("zero_mean removes DC sensitivity", "[metrics][property]") {
  const auto s = random_buffer(256, 8);
  auto e = random_buffer(256, 9);
  for (std::size_t i = 0; i < e.size(); ++i) e.samples[i] += s.samples[i];
  auto shifted = e;
  for (double& v : shifted.samples) v += 0.3;
  CHECK(std::abs(si_snr(s, shifted) - si_snr(s, e)) > 1e-3);
  CHECK(std::abs(si_snr(s, shifted, true) - si_snr(s, e, true)) < 1e-9);
}

TEST_CASE("si_snr output stays within the symmetric cap", "[metrics][property]") {
  for (int i = 0; i < 100; ++i) {
    const auto s = random_buffer(32, 10 + i, 1e-3 * (i + 1));
    const auto e = random_buffer(32, 500 + i, 1e3);
    const double v = si_snr(s, e);
    REQUIRE((v >= -kSiSnrCapDb && v <= kSiSnrCapDb));
  }
}

TEST_CASE("si_snr errors", "[metrics]") {
  try {
    si_snr(buf({0, 0}), buf({1, 1}));
    FAIL("expected undefined-reference error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::undefined_reference);
  }
  try {
    si_snr(buf({1, 0}), buf({1, 1, 1}));
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
}

TEST_CASE("pairwise_si_snr matches individual calls", "[metrics]") {
  const std::vector<AudioBuffer> refs = {random_buffer(50, 1), random_buffer(50, 2)};
  const std::vector<AudioBuffer> ests = {random_buffer(50, 3), random_buffer(50, 4)};
  const auto m = pairwise_si_snr(refs, ests);
  REQUIRE(m.size() == 4);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(m[i * 2 + j] == si_snr(refs[i], ests[j]));
  const auto diag = pairwise_si_snr(refs, refs);
  CHECK(diag[0] == kSiSnrCapDb);
  CHECK(diag[3] == kSiSnrCapDb);
  CHECK(pairwise_si_snr({refs[0]}, {ests[0]}) == std::vector<double>{si_snr(refs[0], ests[0])});
}

TEST_CASE("EvalReport aggregate is the mean of per-utterance means", "[metrics]") {
  EvalReport report;
  report.per_utterance.push_back({"b", {1.0, 3.0}, {2.0, 4.0}, {0, 1}});
  report.per_utterance.push_back({"a", {5.0, 5.0}, {-1.0, 0.0}, {1, 0}});
  report.finalize();
  CHECK(report.per_utterance.front().utt_id == "a");
  CHECK(report.count == 2);
  CHECK(std::abs(report.mean_si_snri - (3.0 + -0.5) / 2.0) < 1e-9);
  CHECK(std::abs(report.mean_si_snr - (2.0 + 5.0) / 2.0) < 1e-9);
}
