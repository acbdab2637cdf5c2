#include "maskbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskbench/error.hpp"

namespace maskbench {
namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double si_snr(const AudioBuffer& reference, const AudioBuffer& estimate, bool zero_mean) {
  require(reference.size() == estimate.size(), ErrorKind::shape,
          "si_snr: length mismatch (" + std::to_string(reference.size()) + " vs " +
              std::to_string(estimate.size()) + ")");
  require(reference.size() >= 1, ErrorKind::shape, "si_snr: empty signals");
  const std::size_t n = reference.size();
  const double ref_mean = zero_mean ? mean_of(reference.samples) : 0.0;
  const double est_mean = zero_mean ? mean_of(estimate.samples) : 0.0;

  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = reference.samples[i] - ref_mean;
    dot += (estimate.samples[i] - est_mean) * s;
    ref_energy += s * s;
  }
  require(ref_energy > 0.0, ErrorKind::undefined_reference, "si_snr: reference is identically zero");

  const double scale = dot / ref_energy;
  double target_energy = 0.0, noise_energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = scale * (reference.samples[i] - ref_mean);
    const double noise = (estimate.samples[i] - est_mean) - target;
    target_energy += target * target;
    noise_energy += noise * noise;
  }
  if (noise_energy < 1e-12 * target_energy) return kSiSnrCapDb;
  if (target_energy == 0.0) return -kSiSnrCapDb;
  return std::clamp(10.0 * std::log10(target_energy / noise_energy), -kSiSnrCapDb, kSiSnrCapDb);
}

double si_snri(const AudioBuffer& reference, const AudioBuffer& estimate,
               const AudioBuffer& mixture, bool zero_mean) {
  return si_snr(reference, estimate, zero_mean) - si_snr(reference, mixture, zero_mean);
}

std::vector<double> pairwise_si_snr(const std::vector<AudioBuffer>& references,
                                    const std::vector<AudioBuffer>& estimates, bool zero_mean) {
  require(references.size() == estimates.size() && !references.empty(), ErrorKind::shape,
          "pairwise_si_snr: reference and estimate counts differ");
  const std::size_t s = references.size();
  std::vector<double> out(s * s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) out[i * s + j] = si_snr(references[i], estimates[j], zero_mean);
  return out;
}

double UtteranceResult::mean_si_snri() const { return mean_of(si_snri); }
double UtteranceResult::mean_si_snr() const { return mean_of(si_snr); }

void EvalReport::finalize() {
  std::sort(per_utterance.begin(), per_utterance.end(),
            [](const auto& a, const auto& b) { return a.utt_id < b.utt_id; });
  count = per_utterance.size();
  double snri = 0.0, snr = 0.0;
  for (const auto& u : per_utterance) {
    snri += u.mean_si_snri();
    snr += u.mean_si_snr();
  }
  mean_si_snri = count ? snri / static_cast<double>(count) : 0.0;
  mean_si_snr = count ? snr / static_cast<double>(count) : 0.0;
}

}  // namespace maskbench
