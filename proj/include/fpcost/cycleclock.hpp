#pragma once

// Serialized timestamp reads and sample statistics around a kernel invocation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <type_traits>
#include <vector>

#if defined(__x86_64__)
#include <x86intrin.h>
#endif

#include "fpcost/error.hpp"

namespace fpcost {

// lfence on both sides keeps earlier work from leaking into the timed region
// and later work from starting before the read.
inline std::uint64_t counter_start() noexcept {
#if defined(__x86_64__)
  _mm_lfence();
  const std::uint64_t t = __rdtsc();
  _mm_lfence();
  return t;
#else
  return 0;
#endif
}

// rdtscp waits for all prior instructions to retire.
inline std::uint64_t counter_stop() noexcept {
#if defined(__x86_64__)
  unsigned aux = 0;
  const std::uint64_t t = __rdtscp(&aux);
  _mm_lfence();
  return t;
#else
  return 0;
#endif
}

// Cost of an empty timed region: the minimum over `trials` back-to-back reads.
inline std::uint64_t timer_overhead(int trials = 256) {
  std::uint64_t best = std::numeric_limits<std::uint64_t>::max();
  for (int i = 0; i < trials; ++i) {
    const std::uint64_t t0 = counter_start();
    const std::uint64_t t1 = counter_stop();
    best = std::min(best, t1 >= t0 ? t1 - t0 : 0);
  }
  return best;
}

struct CycleSample {
  std::uint64_t raw_cycles = 0;
  std::uint64_t scalar_ops = 0;
};

struct MeasureParams {
  int samples = 9;
  int warmups = 2;
  int max_retries = 3;
  double unstable_threshold = 0.10;  // stddev / median
  double overhead_threshold = 0.01;  // subtract timer overhead above this share
};

struct MeasurementStats {
  std::vector<double> samples;  // cycles per scalar op
  std::vector<std::uint64_t> raw_cycles;
  std::uint64_t scalar_ops = 0;
  std::uint64_t timer_overhead = 0;
  std::uint64_t overhead_subtracted = 0;
  double min = 0, median = 0, mean = 0, stddev = 0;
  int warmups_discarded = 0;
  int attempts = 1;
  bool unstable = false;

  double relative_spread() const { return median > 0 ? stddev / median : 0.0; }

  friend bool operator==(const MeasurementStats&, const MeasurementStats&) = default;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Rebuilds every derived field from the stored raw counts. Recomputing from a
// deserialized record gives bit-identical statistics.
inline MeasurementStats compute_stats(std::vector<std::uint64_t> raw_cycles, std::uint64_t scalar_ops,
                                      std::uint64_t timer_overhead, std::uint64_t overhead_subtracted,
                                      int warmups_discarded) {
  if (raw_cycles.empty()) throw Error(ErrorCode::InvalidArgument, "no samples");
  if (scalar_ops == 0) throw Error(ErrorCode::InvalidArgument, "scalar_ops must be positive");
  MeasurementStats s;
  s.raw_cycles = std::move(raw_cycles);
  s.scalar_ops = scalar_ops;
  s.timer_overhead = timer_overhead;
  s.overhead_subtracted = overhead_subtracted;
  s.warmups_discarded = warmups_discarded;
  s.samples.reserve(s.raw_cycles.size());
  for (std::uint64_t raw : s.raw_cycles) {
    s.samples.push_back(static_cast<double>(raw - overhead_subtracted) / static_cast<double>(scalar_ops));
  }
  s.min = *std::min_element(s.samples.begin(), s.samples.end());
  s.median = median_of(s.samples);
  s.mean = std::accumulate(s.samples.begin(), s.samples.end(), 0.0) / static_cast<double>(s.samples.size());
  double acc = 0.0;
  for (double x : s.samples) acc += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(acc / static_cast<double>(s.samples.size()));
  return s;
}

// `invoke` runs the kernel once and returns a CycleSample. The first
// `warmups` runs are discarded. When the retained samples spread by more than
// `unstable_threshold`, the whole series is repeated up to `max_retries`
// times; the last series is kept and flagged.
template <typename Invoke>
MeasurementStats measure(Invoke&& invoke, const MeasureParams& params = {}) {
  static_assert(std::is_same_v<std::invoke_result_t<Invoke&>, CycleSample>,
                "kernel invocation must return a CycleSample");
  if (params.samples < 3) throw Error(ErrorCode::InvalidArgument, "samples must be >= 3");
  if (params.warmups < 1) throw Error(ErrorCode::InvalidArgument, "warmups must be >= 1");

  const std::uint64_t overhead = timer_overhead();
  MeasurementStats stats;
  for (int attempt = 1; attempt <= std::max(1, params.max_retries); ++attempt) {
    for (int i = 0; i < params.warmups; ++i) (void)invoke();
    std::vector<std::uint64_t> raw;
    raw.reserve(static_cast<std::size_t>(params.samples));
    std::uint64_t scalar_ops = 0;
    for (int i = 0; i < params.samples; ++i) {
      const CycleSample s = invoke();
      if (s.scalar_ops == 0) throw Error(ErrorCode::InvalidArgument, "kernel reported zero scalar ops");
      if (scalar_ops != 0 && s.scalar_ops != scalar_ops) {
        throw Error(ErrorCode::InvalidArgument, "scalar op count changed between samples");
      }
      scalar_ops = s.scalar_ops;
      raw.push_back(std::max<std::uint64_t>(s.raw_cycles, 1));
    }
    const std::uint64_t shortest = *std::min_element(raw.begin(), raw.end());
    const bool subtract = static_cast<double>(overhead) > params.overhead_threshold * static_cast<double>(shortest) &&
                          overhead < shortest;
    stats = compute_stats(std::move(raw), scalar_ops, overhead, subtract ? overhead : 0, params.warmups);
    stats.attempts = attempt;
    stats.unstable = stats.relative_spread() > params.unstable_threshold;
    if (!stats.unstable) break;
  }
  return stats;
}

}  // namespace fpcost
