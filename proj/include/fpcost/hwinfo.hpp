#pragma once

// CPU identification, thread pinning and timestamp-counter calibration.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#if defined(__x86_64__)
#include <cpuid.h>
#include <x86intrin.h>
#endif

#if defined(__linux__)
#include <sched.h>
#endif

#include "fpcost/error.hpp"

namespace fpcost {

struct FeatureSet {
  std::string vendor;
  std::string model_name;
  bool avx = false;
  bool avx2 = false;
  bool fma3 = false;
  bool fma4 = false;  // reported only; no FMA4 kernels exist
  bool invariant_tsc = false;

  void validate() const {
    if (avx2 && !avx) throw Error(ErrorCode::InvalidArgument, "avx2 implies avx");
    if (fma3 && !avx) throw Error(ErrorCode::InvalidArgument, "fma3 implies avx");
  }

  friend bool operator==(const FeatureSet&, const FeatureSet&) = default;
};

namespace detail {

struct CpuidRegs {
  std::uint32_t eax = 0, ebx = 0, ecx = 0, edx = 0;
};

inline std::optional<CpuidRegs> cpuid(std::uint32_t leaf, std::uint32_t subleaf = 0) {
#if defined(__x86_64__)
  CpuidRegs r;
  if (!__get_cpuid_count(leaf, subleaf, &r.eax, &r.ebx, &r.ecx, &r.edx)) return std::nullopt;
  return r;
#else
  (void)leaf;
  (void)subleaf;
  return std::nullopt;
#endif
}

inline std::uint64_t xgetbv0() {
#if defined(__x86_64__)
  std::uint32_t lo = 0, hi = 0;
  __asm__ volatile("xgetbv" : "=a"(lo), "=d"(hi) : "c"(0));
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
#else
  return 0;
#endif
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\n");
  return s.substr(first, last - first + 1);
}

inline std::optional<std::string> read_first_line(const std::string& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line)) return std::nullopt;
  return trim(line);
}

}  // namespace detail

inline FeatureSet detect_features() {
#if !defined(__x86_64__)
  throw Error(ErrorCode::UnsupportedHost, "feature detection requires an x86-64 host");
#else
  FeatureSet f;
  const auto leaf0 = detail::cpuid(0);
  if (!leaf0) throw Error(ErrorCode::UnsupportedHost, "cpuid unavailable");
  char vendor[13] = {};
  std::memcpy(vendor + 0, &leaf0->ebx, 4);
  std::memcpy(vendor + 4, &leaf0->edx, 4);
  std::memcpy(vendor + 8, &leaf0->ecx, 4);
  f.vendor = vendor;

  if (const auto l1 = detail::cpuid(1)) {
    const bool osxsave = (l1->ecx >> 27) & 1u;
    const bool avx_bit = (l1->ecx >> 28) & 1u;
    // The OS must also save YMM state (XCR0 bits 1 and 2).
    const bool ymm_enabled = osxsave && (detail::xgetbv0() & 0x6u) == 0x6u;
    f.avx = avx_bit && ymm_enabled;
    f.fma3 = f.avx && ((l1->ecx >> 12) & 1u);
  }
  if (leaf0->eax >= 7) {
    if (const auto l7 = detail::cpuid(7, 0)) f.avx2 = f.avx && ((l7->ebx >> 5) & 1u);
  }

  const auto ext0 = detail::cpuid(0x80000000u);
  const std::uint32_t max_ext = ext0 ? ext0->eax : 0;
  if (max_ext >= 0x80000001u) {
    if (const auto e1 = detail::cpuid(0x80000001u)) f.fma4 = f.avx && ((e1->ecx >> 16) & 1u);
  }
  if (max_ext >= 0x80000004u) {
    std::array<char, 49> brand{};
    for (std::uint32_t i = 0; i < 3; ++i) {
      if (const auto b = detail::cpuid(0x80000002u + i)) {
        std::memcpy(brand.data() + i * 16 + 0, &b->eax, 4);
        std::memcpy(brand.data() + i * 16 + 4, &b->ebx, 4);
        std::memcpy(brand.data() + i * 16 + 8, &b->ecx, 4);
        std::memcpy(brand.data() + i * 16 + 12, &b->edx, 4);
      }
    }
    f.model_name = detail::trim(brand.data());
  }
  if (max_ext >= 0x80000007u) {
    if (const auto e7 = detail::cpuid(0x80000007u)) f.invariant_tsc = (e7->edx >> 8) & 1u;
  }
  f.validate();
  return f;
#endif
}

inline const FeatureSet& host_features() {
  static const FeatureSet features = detect_features();
  return features;
}

// ---------------------------------------------------------------------------
// Affinity

// Holds the affinity mask that was active before pin_to_core.
class AffinityHandle {
 public:
  AffinityHandle() = default;
  explicit AffinityHandle(std::vector<int> previous) : previous_(std::move(previous)) {}

  const std::vector<int>& previous() const noexcept { return previous_; }

  void restore() const;

 private:
  std::vector<int> previous_;
};

inline std::vector<int> current_affinity() {
#if defined(__linux__)
  cpu_set_t set;
  CPU_ZERO(&set);
  if (sched_getaffinity(0, sizeof(set), &set) != 0) {
    throw Error(ErrorCode::AffinityUnsupported, "sched_getaffinity failed");
  }
  std::vector<int> cpus;
  for (int i = 0; i < CPU_SETSIZE; ++i) {
    if (CPU_ISSET(i, &set)) cpus.push_back(i);
  }
  return cpus;
#else
  throw Error(ErrorCode::AffinityUnsupported, "thread affinity is not supported on this platform");
#endif
}

namespace detail {
inline void set_affinity(const std::vector<int>& cpus) {
#if defined(__linux__)
  cpu_set_t set;
  CPU_ZERO(&set);
  for (int cpu : cpus) {
    if (cpu < 0 || cpu >= CPU_SETSIZE) {
      throw Error(ErrorCode::AffinityUnsupported, "core id " + std::to_string(cpu) + " out of range");
    }
    CPU_SET(cpu, &set);
  }
  if (sched_setaffinity(0, sizeof(set), &set) != 0) {
    throw Error(ErrorCode::AffinityUnsupported, "sched_setaffinity rejected the mask");
  }
#else
  (void)cpus;
  throw Error(ErrorCode::AffinityUnsupported, "thread affinity is not supported on this platform");
#endif
}
}  // namespace detail

inline void AffinityHandle::restore() const { detail::set_affinity(previous_); }

// Affects the calling thread only.
inline AffinityHandle pin_to_core(int core_id) {
  AffinityHandle handle(current_affinity());
  detail::set_affinity({core_id});
  return handle;
}

// ---------------------------------------------------------------------------
// TSC

enum class CalibrationMethod { OsClockComparison, CpuidLeaf, Unknown };

constexpr std::string_view to_string(CalibrationMethod m) {
  switch (m) {
    case CalibrationMethod::OsClockComparison: return "os_clock_comparison";
    case CalibrationMethod::CpuidLeaf: return "cpuid_leaf";
    case CalibrationMethod::Unknown: return "unknown";
  }
  return "unknown";
}

struct TscCalibration {
  double tsc_hz = 0.0;
  std::optional<double> nominal_core_hz;
  CalibrationMethod method = CalibrationMethod::Unknown;
  // Relative disagreement of the two back-to-back estimates.
  double spread = 0.0;
  bool stable = false;

  friend bool operator==(const TscCalibration&, const TscCalibration&) = default;
};

inline std::uint64_t read_tsc() noexcept {
#if defined(__x86_64__)
  return __rdtsc();
#else
  return 0;
#endif
}

// Base frequency from CPUID leaf 0x16, else parsed from the brand string ("@ 2.30GHz").
inline std::optional<double> nominal_core_hz() {
  if (const auto l0 = detail::cpuid(0); l0 && l0->eax >= 0x16) {
    if (const auto l16 = detail::cpuid(0x16); l16 && (l16->eax & 0xFFFFu) != 0) {
      return static_cast<double>(l16->eax & 0xFFFFu) * 1e6;
    }
  }
  std::string brand;
  try {
    brand = host_features().model_name;
  } catch (const Error&) {
    return std::nullopt;
  }
  static const std::regex ghz(R"(([0-9]+\.[0-9]+)\s*GHz)");
  std::smatch m;
  if (std::regex_search(brand, m, ghz)) return std::stod(m[1].str()) * 1e9;
  return std::nullopt;
}

// Current frequency of `core` when the OS exposes it (cpufreq sysfs), else nullopt.
inline std::optional<double> current_core_hz(int core) {
  const auto khz = detail::read_first_line("/sys/devices/system/cpu/cpu" + std::to_string(core) +
                                           "/cpufreq/scaling_cur_freq");
  if (!khz) return std::nullopt;
  try {
    return std::stod(*khz) * 1e3;
  } catch (...) {
    return std::nullopt;
  }
}

// Non-empty when frequency boosting appears to be enabled.
inline std::optional<std::string> turbo_warning() {
  if (auto v = detail::read_first_line("/sys/devices/system/cpu/intel_pstate/no_turbo"); v && *v == "0") {
    return "turbo boost is enabled (intel_pstate/no_turbo = 0); absolute cycle counts will drift";
  }
  if (auto v = detail::read_first_line("/sys/devices/system/cpu/cpufreq/boost"); v && *v == "1") {
    return "frequency boost is enabled (cpufreq/boost = 1); absolute cycle counts will drift";
  }
  return std::nullopt;
}

namespace detail {
inline double estimate_tsc_hz(std::chrono::nanoseconds duration) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const std::uint64_t c0 = read_tsc();
  auto t1 = t0;
  while ((t1 = clock::now()) - t0 < duration) {
  }
  const std::uint64_t c1 = read_tsc();
  const double seconds = std::chrono::duration<double>(t1 - t0).count();
  if (c1 <= c0 || seconds <= 0.0) throw Error(ErrorCode::UnstableClock, "timestamp counter did not advance");
  return static_cast<double>(c1 - c0) / seconds;
}
}  // namespace detail

// Two back-to-back estimates of `duration` each; the result is their mean and
// is flagged unstable when they disagree by more than 0.5%.
inline TscCalibration calibrate_tsc(std::chrono::milliseconds duration) {
#if !defined(__x86_64__)
  throw Error(ErrorCode::UnsupportedHost, "TSC calibration requires an x86-64 host");
#else
  if (duration.count() <= 0) throw Error(ErrorCode::InvalidArgument, "calibration duration must be positive");
  const double a = detail::estimate_tsc_hz(duration);
  const double b = detail::estimate_tsc_hz(duration);
  TscCalibration cal;
  cal.tsc_hz = 0.5 * (a + b);
  cal.spread = std::abs(a - b) / a;
  cal.stable = cal.spread < 0.005;
  cal.method = CalibrationMethod::OsClockComparison;
  cal.nominal_core_hz = nominal_core_hz();
  return cal;
#endif
}

}  // namespace fpcost
