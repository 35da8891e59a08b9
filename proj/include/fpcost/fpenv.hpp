#pragma once

// Access to the SSE/AVX floating-point control and status register (MXCSR).
//
// MXCSR is per-thread state. Everything here acts on the calling thread only
// and must not be interleaved with FP work that expects a different mode.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <utility>

#if defined(__x86_64__)
#include <xmmintrin.h>
#endif

#include "fpcost/error.hpp"

namespace fpcost {

namespace mxcsr {
inline constexpr std::uint32_t kStatusFlags = 0x003Fu;  // bits 0-5, sticky
inline constexpr std::uint32_t kDaz = 1u << 6;
inline constexpr std::uint32_t kInvalidMask = 1u << 7;
inline constexpr std::uint32_t kDenormalMask = 1u << 8;
inline constexpr std::uint32_t kDivZeroMask = 1u << 9;
inline constexpr std::uint32_t kOverflowMask = 1u << 10;
inline constexpr std::uint32_t kUnderflowMask = 1u << 11;
inline constexpr std::uint32_t kPrecisionMask = 1u << 12;
inline constexpr std::uint32_t kAllExceptionMasks = 0x1F80u;  // bits 7-12
inline constexpr std::uint32_t kRoundingControl = 0x6000u;    // bits 13-14
inline constexpr std::uint32_t kFtz = 1u << 15;
// Bits owned by FpEnvConfig.
inline constexpr std::uint32_t kControlled = kDaz | kAllExceptionMasks | kFtz;
}  // namespace mxcsr

inline bool host_has_mxcsr() noexcept {
#if defined(__x86_64__)
  return true;
#else
  return false;
#endif
}

inline std::uint32_t read_mxcsr() {
#if defined(__x86_64__)
  return _mm_getcsr();
#else
  throw Error(ErrorCode::UnsupportedHost, "MXCSR requires an x86-64 host");
#endif
}

inline void write_mxcsr(std::uint32_t raw) {
#if defined(__x86_64__)
  _mm_setcsr(raw);
#else
  (void)raw;
  throw Error(ErrorCode::UnsupportedHost, "MXCSR requires an x86-64 host");
#endif
}

struct FpEnvConfig {
  bool ftz = false;
  bool daz = false;
  bool underflow_masked = true;
  // When false, mask bits other than underflow are left as found.
  bool mask_all_exceptions = true;

  static constexpr FpEnvConfig flush() { return {true, true, true, true}; }
  static constexpr FpEnvConfig gradual() { return {false, false, true, true}; }

  // FTZ with an unmasked underflow exception would trap on every flushed result.
  void validate() const {
    if (ftz && !underflow_masked) {
      throw Error(ErrorCode::InvalidConfig, "ftz requires the underflow exception to be masked");
    }
  }

  std::string label() const {
    if (ftz && daz) return "F+D";
    if (!ftz && !daz) return "No F+D";
    return ftz ? "FTZ" : "DAZ";
  }

  friend bool operator==(const FpEnvConfig&, const FpEnvConfig&) = default;
};

// The two columns of the cost table.
enum class EnvMode { FtzDaz, NoFtzDaz };

constexpr FpEnvConfig config_for(EnvMode mode) {
  return mode == EnvMode::FtzDaz ? FpEnvConfig::flush() : FpEnvConfig::gradual();
}

inline std::optional<EnvMode> mode_of(const FpEnvConfig& cfg) {
  if (cfg.ftz && cfg.daz) return EnvMode::FtzDaz;
  if (!cfg.ftz && !cfg.daz) return EnvMode::NoFtzDaz;
  return std::nullopt;
}

constexpr std::string_view to_string(EnvMode mode) {
  return mode == EnvMode::FtzDaz ? "F+D" : "No F+D";
}

constexpr std::uint32_t encode(const FpEnvConfig& cfg, std::uint32_t base) {
  std::uint32_t raw = base & ~(mxcsr::kFtz | mxcsr::kDaz | mxcsr::kUnderflowMask);
  if (cfg.ftz) raw |= mxcsr::kFtz;
  if (cfg.daz) raw |= mxcsr::kDaz;
  if (cfg.underflow_masked) raw |= mxcsr::kUnderflowMask;
  if (cfg.mask_all_exceptions) raw |= mxcsr::kAllExceptionMasks;
  return raw;
}

constexpr FpEnvConfig decode(std::uint32_t raw) {
  FpEnvConfig cfg;
  cfg.ftz = (raw & mxcsr::kFtz) != 0;
  cfg.daz = (raw & mxcsr::kDaz) != 0;
  cfg.underflow_masked = (raw & mxcsr::kUnderflowMask) != 0;
  cfg.mask_all_exceptions = (raw & mxcsr::kAllExceptionMasks) == mxcsr::kAllExceptionMasks;
  return cfg;
}

// True when `raw` already carries every control bit `cfg` asks for.
constexpr bool env_matches(const FpEnvConfig& cfg, std::uint32_t raw) {
  return (encode(cfg, raw) & mxcsr::kControlled) == (raw & mxcsr::kControlled);
}

inline FpEnvConfig read_env() { return decode(read_mxcsr()); }

// Masked read-modify-write: rounding control and status flags are untouched.
inline FpEnvConfig apply_env(const FpEnvConfig& cfg) {
  cfg.validate();
  const std::uint32_t before = read_mxcsr();
  write_mxcsr(encode(cfg, before));
  return decode(before);
}

// Restores the complete 32-bit register on scope exit.
class ScopedEnv {
 public:
  explicit ScopedEnv(const FpEnvConfig& cfg) : saved_(read_mxcsr()) {
    cfg.validate();
    write_mxcsr(encode(cfg, saved_));
  }
  ~ScopedEnv() { write_mxcsr(saved_); }

  ScopedEnv(const ScopedEnv&) = delete;
  ScopedEnv& operator=(const ScopedEnv&) = delete;

  std::uint32_t saved() const noexcept { return saved_; }

 private:
  std::uint32_t saved_;
};

template <typename Action>
decltype(auto) with_env(const FpEnvConfig& cfg, Action&& action) {
  ScopedEnv guard(cfg);
  return std::invoke(std::forward<Action>(action));
}

}  // namespace fpcost
