#include <fftw3.h>

#include <complex>
#include <map>
#include <mutex>
#include <span>
#include <vector>

#include "maskbench/signal.hpp"

namespace maskbench::detail {
namespace {

struct Plans {
  fftw_plan forward;
  fftw_plan backward;
};

// FFTW planning is not thread-safe; execution with new arrays is. ESTIMATE keeps the
// chosen algorithm (and so the output bits) independent of timing, UNALIGNED lets any
// buffer reuse the plan.
const Plans& plans_for(std::size_t n) {
  static std::mutex mutex;
  static std::map<std::size_t, Plans> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<std::complex<double>> scratch(n);
    auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    const int size = static_cast<int>(n);
    it = cache.emplace(n, Plans{fftw_plan_dft_1d(size, p, p, FFTW_FORWARD, flags),
                                fftw_plan_dft_1d(size, p, p, FFTW_BACKWARD, flags)})
             .first;
  }
  return it->second;
}

fftw_complex* as_fftw(std::span<std::complex<double>> data) {
  return reinterpret_cast<fftw_complex*>(data.data());
}

}  // namespace

void fft(std::span<std::complex<double>> data) {
  if (data.size() <= 1) return;
  fftw_execute_dft(plans_for(data.size()).forward, as_fftw(data), as_fftw(data));
}

void ifft(std::span<std::complex<double>> data) {
  if (data.size() <= 1) return;
  fftw_execute_dft(plans_for(data.size()).backward, as_fftw(data), as_fftw(data));
  const double scale = 1.0 / static_cast<double>(data.size());
  for (auto& v : data) v *= scale;
}

}  // namespace maskbench::detail
