#pragma once

#include <cstddef>
#include <vector>

#include "maskbench/masking.hpp"
#include "maskbench/signal.hpp"

namespace maskbench {

enum class Objective { minimize, maximize };

/// permutation[i] = column assigned to row i.
struct Assignment {
  std::vector<std::size_t> permutation;
  double total = 0.0;
};

inline constexpr std::size_t kExhaustiveLimit = 6;

/// Optimal assignment over a row-major S x S cost matrix. Exhaustive for S <= 6
/// (lexicographically smallest permutation wins ties), Hungarian above that.
Assignment pit_assign(const std::vector<double>& cost, std::size_t size, Objective objective);

/// O(S^3) Hungarian assignment, exposed so it can be checked against enumeration.
Assignment hungarian_assign(const std::vector<double>& cost, std::size_t size,
                            Objective objective);

/// Mean-squared error between two equally sized masks.
double mask_mse(const MaskSet& a, std::size_t source_a, const MaskSet& b, std::size_t source_b);

struct PitLoss {
  double loss = 0.0;
  /// permutation[i] = target source matched to predicted source i.
  std::vector<std::size_t> permutation;
};

/// Utterance-level PIT: min over permutations of the mean per-source MSE.
PitLoss pit_mask_loss(const MaskSet& predicted, const MaskSet& target);

struct PitEval {
  /// scores[i] = SI-SNR of references[i] against its matched estimate.
  std::vector<double> scores;
  /// permutation[i] = estimate index matched to reference i.
  std::vector<std::size_t> permutation;
};

PitEval pit_eval(const std::vector<AudioBuffer>& references,
                 const std::vector<AudioBuffer>& estimates, bool zero_mean = false);

}  // namespace maskbench
