#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "maskbench/signal.hpp"

namespace maskbench {

inline constexpr double kSiSnrCapDb = 120.0;

/// Scale-invariant SNR in dB, clamped to [-120, +120].
/// With `zero_mean` both signals are mean-subtracted first.
double si_snr(const AudioBuffer& reference, const AudioBuffer& estimate, bool zero_mean = false);

/// si_snr(reference, estimate) - si_snr(reference, mixture).
double si_snri(const AudioBuffer& reference, const AudioBuffer& estimate,
               const AudioBuffer& mixture, bool zero_mean = false);

/// Entry (i, j) = si_snr(references[i], estimates[j]); row-major S x S.
std::vector<double> pairwise_si_snr(const std::vector<AudioBuffer>& references,
                                    const std::vector<AudioBuffer>& estimates,
                                    bool zero_mean = false);

struct UtteranceResult {
  std::string utt_id;
  std::vector<double> si_snr;
  std::vector<double> si_snri;
  /// permutation[i] = estimate index matched to reference i; empty for S = 1.
  std::vector<std::size_t> permutation;

  double mean_si_snri() const;
  double mean_si_snr() const;
};

struct EvalReport {
  std::vector<UtteranceResult> per_utterance;
  double mean_si_snri = 0.0;
  double mean_si_snr = 0.0;
  std::size_t count = 0;

  /// Sorts by utt_id and recomputes the aggregate.
  void finalize();
};

}  // namespace maskbench
