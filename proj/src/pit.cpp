#include "maskbench/pit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "maskbench/error.hpp"
#include "maskbench/metrics.hpp"

namespace maskbench {
namespace {

void check_cost(const std::vector<double>& cost, std::size_t size) {
  require(size >= 1, ErrorKind::input, "assignment needs S >= 1");
  require(cost.size() == size * size, ErrorKind::input,
          "cost matrix is not square (" + std::to_string(cost.size()) + " entries for S=" +
              std::to_string(size) + ")");
  for (double c : cost) require(std::isfinite(c), ErrorKind::input, "cost matrix has non-finite entry");
}

double total_of(const std::vector<double>& cost, std::size_t size,
                const std::vector<std::size_t>& perm) {
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) total += cost[i * size + perm[i]];
  return total;
}

Assignment exhaustive(const std::vector<double>& cost, std::size_t size, Objective objective) {
  std::vector<std::size_t> perm(size);
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best{perm, total_of(cost, size, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const double total = total_of(cost, size, perm);
    const bool better = objective == Objective::minimize ? total < best.total : total > best.total;
    if (better) best = {perm, total};
  }
  return best;
}

}  // namespace

Assignment hungarian_assign(const std::vector<double>& cost, std::size_t size,
                            Objective objective) {
  check_cost(cost, size);
  const double sign = objective == Objective::minimize ? 1.0 : -1.0;
  const std::size_t n = size;
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials-based shortest augmenting path; 1-based with column 0 as sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t row0 = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = sign * cost[(row0 - 1) * n + (j - 1)] - u[row0] - v[j];
        if (reduced < minv[j]) {
          minv[j] = reduced;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  Assignment out;
  out.permutation.resize(n);
  for (std::size_t j = 1; j <= n; ++j) out.permutation[match[j] - 1] = j - 1;
  out.total = total_of(cost, n, out.permutation);
  return out;
}

Assignment pit_assign(const std::vector<double>& cost, std::size_t size, Objective objective) {
  check_cost(cost, size);
  if (size <= kExhaustiveLimit) return exhaustive(cost, size, objective);
  return hungarian_assign(cost, size, objective);
}

double mask_mse(const MaskSet& a, std::size_t source_a, const MaskSet& b, std::size_t source_b) {
  const std::size_t plane = a.plane();
  const double* pa = a.values.data() + source_a * plane;
  const double* pb = b.values.data() + source_b * plane;
  double acc = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const double d = pa[i] - pb[i];
    acc += d * d;
  }
  return acc / static_cast<double>(plane);
}

PitLoss pit_mask_loss(const MaskSet& predicted, const MaskSet& target) {
  require(predicted.sources == target.sources && predicted.frames == target.frames &&
              predicted.bins == target.bins && predicted.sources >= 1 && predicted.plane() > 0,
          ErrorKind::shape, "pit_mask_loss: predicted and target shapes differ");
  const std::size_t s = predicted.sources;
  std::vector<double> cost(s * s);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) cost[i * s + j] = mask_mse(predicted, i, target, j);
  auto best = pit_assign(cost, s, Objective::minimize);
  return {best.total / static_cast<double>(s), std::move(best.permutation)};
}

PitEval pit_eval(const std::vector<AudioBuffer>& references,
                 const std::vector<AudioBuffer>& estimates, bool zero_mean) {
  const auto scores = pairwise_si_snr(references, estimates, zero_mean);
  const std::size_t s = references.size();
  auto best = pit_assign(scores, s, Objective::maximize);
  PitEval out;
  out.permutation = best.permutation;
  for (std::size_t i = 0; i < s; ++i) out.scores.push_back(scores[i * s + best.permutation[i]]);
  return out;
}

}  // namespace maskbench
