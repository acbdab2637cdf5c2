#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>
#include <iterator>

#include "maskbench/error.hpp"
#include "maskbench/featureio.hpp"
#include "test_helpers.hpp"

using namespace maskbench;
using maskbench::testing::temp_dir;

namespace {

FeatureStack random_stack(std::size_t k, std::size_t t, std::size_t d, std::uint32_t stride,
                          std::uint64_t seed) {
  Rng rng(seed);
  FeatureStack s(k, t, d, stride);
  for (float& v : s.values) v = static_cast<float>(rng.uniform(-3.0, 3.0));
  return s;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("feature files have the documented byte layout", "[featureio]") {
  FeatureStack s(1, 1, 1, 160);
  s.layer_names = {"L0"};
  const auto bytes = encode_features(s);
  REQUIRE(bytes.size() == 4 + 24 + 1 + 2 + 4);
  CHECK(std::memcmp(bytes.data(), "SSLF", 4) == 0);
  CHECK(bytes[4] == 1);   // version
  CHECK(bytes[20] == 160);  // stride
  CHECK(bytes[24] == 0x80);  // 16000 = 0x3E80
  CHECK(bytes[25] == 0x3E);
  CHECK(bytes[28] == 2);  // name block length
  CHECK(bytes[29] == 'L');
  for (std::size_t i = 31; i < 35; ++i) CHECK(bytes[i] == 0);

  const auto dir = temp_dir("featureio_min");
  write_features(dir / "min.sslf", FeatureStack(1, 1, 1, 160));
  const auto back = read_features(dir / "min.sslf");
  CHECK(back.layers == 1);
  CHECK(back.values == std::vector<float>{0.0f});
}

TEST_CASE("read after write is bitwise identity", "[featureio][property]") {
  const auto dir = temp_dir("featureio_rt");
  Rng shape(3);
  for (int i = 0; i < 20; ++i) {
    auto s = random_stack(1 + shape.below(4), 1 + shape.below(30), 1 + shape.below(9),
                          static_cast<std::uint32_t>(80 * (1 + shape.below(4))), 100 + i);
    if (i % 2)
      for (std::size_t k = 0; k < s.layers; ++k) s.layer_names.push_back("layer" + std::to_string(k));
    const auto path = dir / ("s" + std::to_string(i) + ".sslf");
    write_features(path, s);
    const auto back = read_features(path);
    REQUIRE(back.layers == s.layers);
    REQUIRE(back.frames == s.frames);
    REQUIRE(back.dims == s.dims);
    REQUIRE(back.stride_samples == s.stride_samples);
    REQUIRE(back.layer_names == s.layer_names);
    REQUIRE(std::memcmp(back.values.data(), s.values.data(), s.values.size() * 4) == 0);
    write_features(dir / "again.sslf", back);
    REQUIRE(file_bytes(path) == file_bytes(dir / "again.sslf"));
  }
}

TEST_CASE("read_features rejects malformed files", "[featureio]") {
  const auto dir = temp_dir("featureio_bad");
  auto bytes = encode_features(random_stack(2, 3, 4, 160, 1));

  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  CHECK(kind_of([&] { decode_features(truncated); }) == ErrorKind::corruption);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK(kind_of([&] { decode_features(magic); }) == ErrorKind::format);

  auto version = bytes;
  version[4] = 2;
  CHECK(kind_of([&] { decode_features(version); }) == ErrorKind::format);

  auto nan = bytes;
  const float bad = std::nanf("");
  std::memcpy(nan.data() + 29 + 8, &bad, 4);
  CHECK(kind_of([&] { decode_features(nan); }) == ErrorKind::data);

  CHECK(kind_of([&] { read_features(dir / "missing.sslf"); }) == ErrorKind::io);
}

TEST_CASE("adapt_stride repeat and linear", "[featureio]") {
  FeatureStack s(1, 2, 1, 320);
  s.values = {0.0f, 2.0f};
  const auto same = adapt_stride(s, 320);
  CHECK(same.values == s.values);

  const auto rep = adapt_stride(s, 160, UpsampleMode::repeat);
  CHECK(rep.stride_samples == 160);
  CHECK(rep.values == std::vector<float>{0.0f, 0.0f, 2.0f, 2.0f});

  const auto lin = adapt_stride(s, 160, UpsampleMode::linear);
  CHECK(lin.values == std::vector<float>{0.0f, 1.0f, 2.0f, 2.0f});

  CHECK(kind_of([&] { adapt_stride(s, 640); }) == ErrorKind::config);
  CHECK(kind_of([&] { adapt_stride(s, 150); }) == ErrorKind::config);
}

TEST_CASE("adapt_stride repeat preserves shape, means and decimates back", "[featureio][property]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = random_stack(3, 7, 5, 480, seed);
    for (std::uint32_t target : {240u, 160u, 120u}) {
      const std::size_t r = 480 / target;
      const auto up = adapt_stride(s, target);
      REQUIRE(up.layers == s.layers);
      REQUIRE(up.dims == s.dims);
      REQUIRE(up.frames == r * s.frames);
      for (std::size_t k = 0; k < s.layers; ++k) {
        double a = 0.0, b = 0.0;
        for (std::size_t t = 0; t < s.frames; ++t)
          for (std::size_t d = 0; d < s.dims; ++d) {
            a += s.at(k, t, d);
            REQUIRE(up.at(k, t * r, d) == s.at(k, t, d));
          }
        for (std::size_t t = 0; t < up.frames; ++t)
          for (std::size_t d = 0; d < s.dims; ++d) b += up.at(k, t, d);
        REQUIRE(b / up.frames == Catch::Approx(a / s.frames).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("align_to_frames truncates, replicates and enforces tolerance", "[featureio]") {
  auto s = random_stack(2, 10, 3, 160, 5);
  CHECK(align_to_frames(s, 10).values == s.values);
  const auto cut = align_to_frames(s, 8);
  CHECK(cut.frames == 8);
  CHECK(cut.at(1, 7, 2) == s.at(1, 7, 2));
  const auto pad = align_to_frames(s, 11);
  CHECK(pad.frames == 11);
  for (std::size_t d = 0; d < 3; ++d) CHECK(pad.at(1, 10, d) == s.at(1, 9, d));
  CHECK(kind_of([&] { align_to_frames(s, 15); }) == ErrorKind::alignment);
  // 1% of 1000 frames is 10 > 4.
  const auto big = random_stack(1, 1000, 1, 160, 6);
  CHECK(align_to_frames(big, 1010).frames == 1010);
  CHECK(kind_of([&] { align_to_frames(big, 1011); }) == ErrorKind::alignment);
}
