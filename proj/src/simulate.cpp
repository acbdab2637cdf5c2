#include "maskbench/simulate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>

#include "maskbench/error.hpp"
#include "maskbench/random.hpp"

namespace maskbench {
namespace {

constexpr double kPi = std::numbers::pi;

struct Biquad {
  double b0, b1, b2, a1, a2;
  double z1 = 0.0, z2 = 0.0;

  double process(double x) {
    const double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

// K-weighting: high-shelf pre-filter then RLB high-pass, designed for any rate.
std::array<Biquad, 2> k_weighting(double fs) {
  std::array<Biquad, 2> out{};
  {
    const double gain_db = 3.999843853973347;
    const double f0 = 1681.974450955533;
    const double q = 0.7071752369554196;
    const double k = std::tan(kPi * f0 / fs);
    const double vh = std::pow(10.0, gain_db / 20.0);
    const double vb = std::pow(vh, 0.4996667741545416);
    const double a0 = 1.0 + k / q + k * k;
    out[0] = {(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0,
              (vh - vb * k / q + k * k) / a0, 2.0 * (k * k - 1.0) / a0,
              (1.0 - k / q + k * k) / a0};
  }
  {
    const double f0 = 38.13547087602444;
    const double q = 0.5003270373238773;
    const double k = std::tan(kPi * f0 / fs);
    const double a0 = 1.0 + k / q + k * k;
    out[1] = {1.0, -2.0, 1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0};
  }
  return out;
}

double energy(const AudioBuffer& x) {
  double e = 0.0;
  for (double v : x.samples) e += v * v;
  return e;
}

double peak(const AudioBuffer& x) {
  double p = 0.0;
  for (double v : x.samples) p = std::max(p, std::abs(v));
  return p;
}

double block_loudness(double mean_square) { return -0.691 + 10.0 * std::log10(mean_square); }

// Two-pole resonator at `freq` Hz with bandwidth `bw` Hz, unity peak gain.
struct Resonator {
  double a1 = 0.0, a2 = 0.0, gain = 1.0;
  double y1 = 0.0, y2 = 0.0;

  void tune(double freq, double bw, double fs) {
    const double r = std::exp(-kPi * bw / fs);
    a1 = -2.0 * r * std::cos(2.0 * kPi * freq / fs);
    a2 = r * r;
    gain = 1.0 - r;
  }
  double process(double x) {
    const double y = gain * x - a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

void normalize_peak(std::vector<double>& x, double target) {
  double p = 0.0;
  for (double v : x) p = std::max(p, std::abs(v));
  if (p > 0.0)
    for (double& v : x) v *= target / p;
}

std::vector<double> synth_speechlike(std::size_t n, double fs, Rng& rng) {
  std::vector<double> out(n, 0.0);
  std::array<Resonator, 3> formants;
  double phase = 0.0;
  double wander = 0.0;
  double last = 0.0;
  const double base_f0 = rng.uniform(90.0, 240.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.0, 0.15) * fs);
  while (pos < n) {
    const auto len = static_cast<std::size_t>(rng.uniform(0.12, 0.32) * fs);
    const double voiced = rng.uniform() < 0.8 ? 1.0 : 0.15;
    const double amp = rng.uniform(0.4, 1.0);
    const std::array<double, 3> start = {rng.uniform(300, 900), rng.uniform(900, 2400),
                                         rng.uniform(2300, 3400)};
    const std::array<double, 3> end = {rng.uniform(300, 900), rng.uniform(900, 2400),
                                       rng.uniform(2300, 3400)};
    const double f0_start = base_f0 * rng.uniform(0.85, 1.2);
    const double f0_end = base_f0 * rng.uniform(0.85, 1.2);
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double frac = static_cast<double>(i) / static_cast<double>(len);
      if (i % 32 == 0) {
        for (std::size_t k = 0; k < 3; ++k)
          formants[k].tune(start[k] + (end[k] - start[k]) * frac, 80.0 + 40.0 * k, fs);
      }
      // Slow random pitch wander (jitter) keeps harmonics from staying phase-locked.
      wander = 0.999 * wander + 0.03 * rng.gaussian();
      const double f0 = (f0_start + (f0_end - f0_start) * frac) * (1.0 + 0.03 * std::tanh(wander));
      phase += f0 / fs;
      phase -= std::floor(phase);
      // Band-limited sawtooth excitation.
      double excitation = 0.0;
      const int harmonics = std::max(1, static_cast<int>(3800.0 / f0));
      for (int h = 1; h <= harmonics; ++h) excitation += std::sin(2.0 * kPi * h * phase) / h;
      const double noise = rng.gaussian();
      const double source = voiced * excitation + (1.0 - voiced) * 2.0 * noise + 0.05 * noise;
      double y = 0.0;
      for (auto& f : formants) y += f.process(source);
      // Lip-radiation first difference tilts energy away from the fundamental.
      const double radiated = y - 0.95 * last;
      last = y;
      out[pos + i] = radiated * amp * std::sin(kPi * frac);
    }
    pos += len;
    if (rng.uniform() < 0.35) pos += static_cast<std::size_t>(rng.uniform(0.05, 0.3) * fs);
  }
  return out;
}

std::vector<double> synth_tonal(std::size_t n, double fs, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double f0 = rng.uniform(150.0, 600.0);
  const double vibrato_rate = rng.uniform(4.0, 7.0);
  const double vibrato_depth = rng.uniform(0.01, 0.03);
  const double trem_rate = rng.uniform(0.5, 2.0);
  const double trem_phase = rng.uniform(0.0, 2.0 * kPi);
  std::array<double, 8> amps{}, phases{};
  for (std::size_t h = 0; h < amps.size(); ++h) {
    amps[h] = rng.uniform(0.2, 1.0) / static_cast<double>(h + 1);
    phases[h] = rng.uniform(0.0, 2.0 * kPi);
  }
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    phase += f0 * (1.0 + vibrato_depth * std::sin(2.0 * kPi * vibrato_rate * t)) / fs;
    double y = 0.0;
    for (std::size_t h = 0; h < amps.size(); ++h) {
      if (f0 * static_cast<double>(h + 1) >= 0.45 * fs) break;
      y += amps[h] * std::sin(2.0 * kPi * static_cast<double>(h + 1) * phase + phases[h]);
    }
    out[i] = y * (0.75 + 0.25 * std::sin(2.0 * kPi * trem_rate * t + trem_phase));
  }
  return out;
}

std::vector<double> synth_noise(std::size_t n, double fs, Rng& rng) {
  std::vector<double> out(n, 0.0);
  // White plus a one-pole lowpassed component, with a slow level drift.
  const double pole = rng.uniform(0.8, 0.98);
  const double low_mix = rng.uniform(0.3, 0.9);
  const double drift_rate = rng.uniform(0.2, 1.0);
  double low = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.gaussian();
    low = pole * low + (1.0 - pole) * w;
    const double t = static_cast<double>(i) / fs;
    out[i] = ((1.0 - low_mix) * w + low_mix * 6.0 * low) *
             (0.8 + 0.2 * std::sin(2.0 * kPi * drift_rate * t));
  }
  return out;
}

}  // namespace

double measure_loudness(const AudioBuffer& buffer) {
  require(!buffer.samples.empty(), ErrorKind::silence, "measure_loudness: empty buffer");
  require(buffer.sample_rate > 0, ErrorKind::precondition, "measure_loudness: bad sample rate");
  const double fs = buffer.sample_rate;
  auto filters = k_weighting(fs);
  std::vector<double> squared(buffer.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double y = filters[1].process(filters[0].process(buffer.samples[i]));
    squared[i] = y * y;
  }

  const auto block = static_cast<std::size_t>(std::lround(0.4 * fs));
  const auto step = static_cast<std::size_t>(std::lround(0.1 * fs));
  std::vector<double> blocks;
  if (squared.size() < block) {
    blocks.push_back(std::accumulate(squared.begin(), squared.end(), 0.0) /
                     static_cast<double>(squared.size()));
  } else {
    for (std::size_t start = 0; start + block <= squared.size(); start += step) {
      const auto first = squared.begin() + static_cast<std::ptrdiff_t>(start);
      blocks.push_back(std::accumulate(first, first + static_cast<std::ptrdiff_t>(block), 0.0) /
                       static_cast<double>(block));
    }
  }

  double sum = 0.0;
  std::size_t count = 0;
  for (double z : blocks) {
    if (z > 0.0 && block_loudness(z) > -70.0) {
      sum += z;
      ++count;
    }
  }
  require(count > 0, ErrorKind::silence, "measure_loudness: no block above the absolute gate");
  const double relative_gate = block_loudness(sum / static_cast<double>(count)) - 10.0;

  double gated_sum = 0.0;
  std::size_t gated = 0;
  for (double z : blocks) {
    if (z > 0.0 && block_loudness(z) > -70.0 && block_loudness(z) > relative_gate) {
      gated_sum += z;
      ++gated;
    }
  }
  return block_loudness(gated_sum / static_cast<double>(gated));
}

double gain_to_loudness(const AudioBuffer& buffer, double target_lufs) {
  return std::pow(10.0, (target_lufs - measure_loudness(buffer)) / 20.0);
}

AudioBuffer crop_or_loop(const AudioBuffer& signal, std::size_t length, std::size_t offset) {
  require(!signal.samples.empty(), ErrorKind::silence, "crop_or_loop: empty signal");
  AudioBuffer out{std::vector<double>(length), signal.sample_rate};
  for (std::size_t i = 0; i < length; ++i)
    out.samples[i] = signal.samples[(offset + i) % signal.size()];
  return out;
}

std::vector<AudioBuffer> apply_gains(const std::vector<AudioBuffer>& raw,
                                     const std::vector<double>& gains, double peak_gain) {
  require(raw.size() == gains.size(), ErrorKind::shape, "apply_gains: count mismatch");
  std::vector<AudioBuffer> out;
  out.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    AudioBuffer c = raw[i];
    for (double& v : c.samples) v = (gains[i] * v) * peak_gain;
    out.push_back(std::move(c));
  }
  return out;
}

AudioBuffer sum_components(const std::vector<AudioBuffer>& components) {
  require(!components.empty(), ErrorKind::shape, "sum_components: nothing to sum");
  AudioBuffer mix{std::vector<double>(components[0].size(), 0.0), components[0].sample_rate};
  for (const auto& c : components) {
    require(c.size() == mix.size(), ErrorKind::shape, "sum_components: length mismatch");
    for (std::size_t i = 0; i < c.size(); ++i) mix.samples[i] += c.samples[i];
  }
  return mix;
}

namespace {

double joint_peak_gain(const std::vector<AudioBuffer>& raw, const std::vector<double>& gains) {
  const double p = peak(sum_components(apply_gains(raw, gains, 1.0)));
  return p > kPeakLimit ? kPeakLimit / p : 1.0;
}

}  // namespace

SnrMix mix_snr(const AudioBuffer& speech, const AudioBuffer& noise, double snr_db,
               std::uint64_t seed) {
  require(!speech.samples.empty() && energy(speech) > 0.0, ErrorKind::silence,
          "mix_snr: silent speech");
  require(!noise.samples.empty() && energy(noise) > 0.0, ErrorKind::silence,
          "mix_snr: silent noise");
  Rng rng(seed);
  SnrMix out;
  out.noise_offset =
      noise.size() > speech.size() ? rng.below(noise.size() - speech.size() + 1) : 0;
  const AudioBuffer cropped = crop_or_loop(noise, speech.size(), out.noise_offset);
  const double noise_energy = energy(cropped);
  require(noise_energy > 0.0, ErrorKind::silence, "mix_snr: cropped noise is silent");
  out.noise_gain = std::isinf(snr_db) && snr_db > 0
                       ? 0.0
                       : std::sqrt(energy(speech) / (noise_energy * std::pow(10.0, snr_db / 10.0)));

  const std::vector<AudioBuffer> raw = {speech, cropped};
  const std::vector<double> gains = {1.0, out.noise_gain};
  out.peak_gain = joint_peak_gain(raw, gains);
  auto components = apply_gains(raw, gains, out.peak_gain);
  out.mixture = sum_components(components);
  out.speech = std::move(components[0]);
  out.noise = std::move(components[1]);
  return out;
}

LufsMix mix_librimix_style(const std::vector<AudioBuffer>& sources,
                           const std::optional<AudioBuffer>& noise,
                           LufsRange speech_range, LufsRange noise_range, std::uint64_t seed) {
  require(!sources.empty(), ErrorKind::config, "mix_librimix_style: no sources");
  require(speech_range.lo <= speech_range.hi && noise_range.lo <= noise_range.hi,
          ErrorKind::config, "mix_librimix_style: loudness range has lo > hi");
  Rng rng(seed);
  LufsMix out;
  out.length = std::numeric_limits<std::size_t>::max();
  for (const auto& s : sources) out.length = std::min(out.length, s.size());
  require(out.length > 0, ErrorKind::silence, "mix_librimix_style: empty source");

  std::vector<AudioBuffer> raw;
  for (const auto& s : sources) {
    AudioBuffer trimmed = crop_or_loop(s, out.length, 0);
    const double target = rng.uniform(speech_range.lo, speech_range.hi);
    out.targets.push_back(target);
    out.gains.push_back(gain_to_loudness(trimmed, target));
    raw.push_back(std::move(trimmed));
  }
  if (noise) {
    require(!noise->samples.empty(), ErrorKind::silence, "mix_librimix_style: empty noise");
    out.noise_offset =
        noise->size() > out.length ? rng.below(noise->size() - out.length + 1) : 0;
    AudioBuffer cropped = crop_or_loop(*noise, out.length, out.noise_offset);
    const double target = rng.uniform(noise_range.lo, noise_range.hi);
    out.targets.push_back(target);
    out.gains.push_back(gain_to_loudness(cropped, target));
    raw.push_back(std::move(cropped));
  }
  out.peak_gain = joint_peak_gain(raw, out.gains);
  out.components = apply_gains(raw, out.gains, out.peak_gain);
  out.mixture = sum_components(out.components);
  return out;
}

AudioBuffer synth_source(SourceKind kind, double duration_s, std::uint64_t seed,
                         int sample_rate) {
  require(duration_s >= 0.5 && duration_s <= 30.0, ErrorKind::config,
          "synth_source: duration must be in [0.5, 30] s");
  require(sample_rate > 0, ErrorKind::config, "synth_source: bad sample rate");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate));
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
  std::vector<double> samples;
  switch (kind) {
    case SourceKind::speechlike: samples = synth_speechlike(n, sample_rate, rng); break;
    case SourceKind::tonal: samples = synth_tonal(n, sample_rate, rng); break;
    case SourceKind::noise: samples = synth_noise(n, sample_rate, rng); break;
  }
  normalize_peak(samples, 0.5);
  return AudioBuffer{std::move(samples), sample_rate};
}

double max_normalized_xcorr(const AudioBuffer& a, const AudioBuffer& b) {
  const double norm = std::sqrt(energy(a) * energy(b));
  require(norm > 0.0, ErrorKind::silence, "max_normalized_xcorr: silent input");
  std::size_t n = 1;
  while (n < a.size() + b.size()) n <<= 1;
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a.samples[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b.samples[i];
  detail::fft(fa);
  detail::fft(fb);
  for (std::size_t i = 0; i < n; ++i) fa[i] = std::conj(fa[i]) * fb[i];
  detail::ifft(fa);
  double best = 0.0;
  for (const auto& v : fa) best = std::max(best, std::abs(v.real()));
  return best / norm;
}

}  // namespace maskbench
