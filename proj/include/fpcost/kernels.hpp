#pragma once

// Benchmark kernels. Every (op, variant) pair is instantiated from the same
// loop templates; only the arithmetic slot differs per op.
//
//   MemC    a[i] = b[i] op c[i] over L1-resident arrays: two AVX loads, one AVX
//           store and one arithmetic instruction per 4 scalar ops.
//   RegAsm  all sources live in YMM registers for the whole loop; the body is
//           `unroll` independent arithmetic instructions and nothing else.
//
// The AVX code paths carry a function-level target attribute, so the rest of
// the program does not need to be compiled with -mavx.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#if defined(__x86_64__)
#include <immintrin.h>
#endif

#include "fpcost/cycleclock.hpp"
#include "fpcost/error.hpp"
#include "fpcost/fpenv.hpp"
#include "fpcost/fpmodel.hpp"
#include "fpcost/hwinfo.hpp"

namespace fpcost {

enum class Variant { MemC, RegAsm };

constexpr std::string_view to_string(Variant v) { return v == Variant::MemC ? "memc" : "regasm"; }
// Kernel column of the cost table.
constexpr std::string_view kernel_label(Variant v) { return v == Variant::MemC ? "C" : "ASM"; }

inline std::optional<Variant> parse_variant(std::string_view text) {
  if (text == "memc" || text == "c" || text == "C") return Variant::MemC;
  if (text == "regasm" || text == "asm" || text == "ASM") return Variant::RegAsm;
  return std::nullopt;
}

inline constexpr std::size_t kL1Budget = 16 * 1024;
inline constexpr std::uint64_t kDefaultMinScalarOps = 10'000'000;

constexpr int min_unroll(Op op) { return op == Op::Div ? 2 : 4; }
// 16 YMM registers: three per chain, four for Fma (the accumulator copy source).
constexpr int max_unroll(Op op) { return op == Op::Fma ? 4 : 5; }
constexpr int memc_arrays(Op op) { return op == Op::Fma ? 4 : 3; }

struct KernelSpec {
  Op op = Op::Add;
  Variant variant = Variant::RegAsm;
  std::size_t vector_length = 16;
  int unroll = 4;  // RegAsm only
  std::uint64_t repetitions = 1;
  std::uint64_t min_scalar_ops = kDefaultMinScalarOps;

  std::uint64_t scalar_ops() const noexcept { return repetitions * vector_length; }

  static std::uint64_t repetitions_for(std::size_t vector_length, std::uint64_t min_scalar_ops) {
    return std::max<std::uint64_t>(1, (min_scalar_ops + vector_length - 1) / vector_length);
  }

  static KernelSpec regasm(Op op, int unroll = 4, std::uint64_t min_ops = kDefaultMinScalarOps) {
    KernelSpec s{op, Variant::RegAsm, static_cast<std::size_t>(4 * unroll), unroll, 1, min_ops};
    s.repetitions = repetitions_for(s.vector_length, min_ops);
    return s;
  }

  static KernelSpec memc(Op op, std::size_t vector_length = 256, std::uint64_t min_ops = kDefaultMinScalarOps) {
    KernelSpec s{op, Variant::MemC, vector_length, 4, 1, min_ops};
    s.repetitions = repetitions_for(vector_length, min_ops);
    return s;
  }

  void validate() const {
    auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidSpec, why); };
    if (vector_length == 0) fail("vector_length must be >= 1");
    if (repetitions == 0) fail("repetitions must be >= 1");
    if (variant == Variant::RegAsm) {
      if (unroll < min_unroll(op)) {
        fail("unroll " + std::to_string(unroll) + " cannot hide the latency of " + std::string(to_string(op)));
      }
      if (unroll > max_unroll(op)) fail("unroll " + std::to_string(unroll) + " exceeds the YMM register file");
      if (vector_length != static_cast<std::size_t>(4 * unroll)) fail("RegAsm needs vector_length = 4 * unroll");
    } else {
      if (vector_length % 4 != 0) fail("MemC vector_length must be a multiple of 4");
      if (vector_length * sizeof(double) * static_cast<std::size_t>(memc_arrays(op)) > kL1Budget) {
        fail("MemC arrays exceed the L1 budget");
      }
    }
    if (scalar_ops() < min_scalar_ops) {
      fail("repetitions x vector_length = " + std::to_string(scalar_ops()) + " is below the floor of " +
           std::to_string(min_scalar_ops));
    }
  }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

struct KernelRun {
  KernelSpec spec;
  FpEnvConfig env;
  std::uint32_t mxcsr_before = 0;
  std::uint32_t mxcsr_after = 0;
  std::uint64_t raw_cycles = 0;
  std::uint64_t scalar_ops = 0;
  // Final destination values, one per lane. Keeps the work observable.
  std::vector<Bits64> output;

  CycleSample sample() const noexcept { return {raw_cycles, scalar_ops}; }
};

namespace detail {

struct FreeDeleter {
  void operator()(double* p) const noexcept { std::free(p); }
};

class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t count) : size_(count) {
    const std::size_t bytes = ((std::max<std::size_t>(count, 4) * sizeof(double) + 63) / 64) * 64;
    data_.reset(static_cast<double*>(std::aligned_alloc(64, bytes)));
    if (!data_) throw std::bad_alloc();
    std::memset(data_.get(), 0, bytes);
  }
  double* data() noexcept { return data_.get(); }
  const double* data() const noexcept { return data_.get(); }
  std::size_t size() const noexcept { return size_; }

 private:
  std::unique_ptr<double[], FreeDeleter> data_;
  std::size_t size_;
};

inline AlignedBuffer to_buffer(const std::vector<Bits64>& lanes, std::size_t length) {
  AlignedBuffer buf(length);
  for (std::size_t i = 0; i < lanes.size() && i < length; ++i) buf.data()[i] = lanes[i].to_double();
  return buf;
}

#if defined(__x86_64__)

// dst = a op b; for Fma dst = a * b + c through a copy of c, since the
// three-operand form overwrites its accumulator. "+x" pins dst to its own
// register; the instructions never read the old value, so no dependency exists.
template <Op kOp>
[[gnu::always_inline, gnu::target("avx")]] inline void issue(__m256d& dst, __m256d a, __m256d b,
                                                              [[maybe_unused]] __m256d c) {
  if constexpr (kOp == Op::Add) {
    asm volatile("vaddpd %2, %1, %0" : "+x"(dst) : "x"(a), "x"(b));
  } else if constexpr (kOp == Op::Mul) {
    asm volatile("vmulpd %2, %1, %0" : "+x"(dst) : "x"(a), "x"(b));
  } else if constexpr (kOp == Op::Div) {
    asm volatile("vdivpd %2, %1, %0" : "+x"(dst) : "x"(a), "x"(b));
  } else {
    asm volatile("vmovapd %3, %0\n\tvfmadd231pd %2, %1, %0" : "+x"(dst) : "x"(a), "x"(b), "x"(c));
  }
}

// Chains are named variables rather than an array so that every source and
// destination is register-allocated; chain k exists only when kUnroll > k.
#define FPCOST_LOAD_CHAIN(k)                                                         \
  __m256d a##k = _mm256_setzero_pd(), b##k = a##k, c##k = a##k, d##k = a##k;         \
  if constexpr (kUnroll > k) {                                                      \
    a##k = _mm256_load_pd(lhs + 4 * k);                                             \
    b##k = _mm256_load_pd(rhs + 4 * k);                                             \
    if constexpr (kOp == Op::Fma) c##k = _mm256_load_pd(addend + 4 * k);            \
  }
#define FPCOST_ISSUE_CHAIN(k) \
  if constexpr (kUnroll > k) issue<kOp>(d##k, a##k, b##k, c##k);
#define FPCOST_STORE_CHAIN(k) \
  if constexpr (kUnroll > k) _mm256_store_pd(out + 4 * k, d##k);

template <Op kOp, int kUnroll>
[[gnu::noinline, gnu::target("avx")]] std::uint64_t regasm_loop(const double* lhs, const double* rhs,
                                                                 const double* addend, double* out,
                                                                 std::uint64_t repetitions) {
  static_assert(kUnroll >= 1 && kUnroll <= 5);
  FPCOST_LOAD_CHAIN(0)
  FPCOST_LOAD_CHAIN(1)
  FPCOST_LOAD_CHAIN(2)
  FPCOST_LOAD_CHAIN(3)
  FPCOST_LOAD_CHAIN(4)
  const std::uint64_t t0 = counter_start();
  for (std::uint64_t n = 0; n < repetitions; ++n) {
    FPCOST_ISSUE_CHAIN(0)
    FPCOST_ISSUE_CHAIN(1)
    FPCOST_ISSUE_CHAIN(2)
    FPCOST_ISSUE_CHAIN(3)
    FPCOST_ISSUE_CHAIN(4)
  }
  const std::uint64_t t1 = counter_stop();
  FPCOST_STORE_CHAIN(0)
  FPCOST_STORE_CHAIN(1)
  FPCOST_STORE_CHAIN(2)
  FPCOST_STORE_CHAIN(3)
  FPCOST_STORE_CHAIN(4)
  return t1 - t0;
}

#undef FPCOST_LOAD_CHAIN
#undef FPCOST_ISSUE_CHAIN
#undef FPCOST_STORE_CHAIN

template <Op kOp>
[[gnu::noinline, gnu::target("avx")]] std::uint64_t memc_loop(double* out, const double* lhs, const double* rhs,
                                                              const double* addend, std::size_t length,
                                                              std::uint64_t repetitions) {
  const std::uint64_t t0 = counter_start();
  for (std::uint64_t n = 0; n < repetitions; ++n) {
    for (std::size_t i = 0; i < length; i += 4) {
      const __m256d x = _mm256_load_pd(lhs + i);
      const __m256d y = _mm256_load_pd(rhs + i);
      const __m256d z = kOp == Op::Fma ? _mm256_load_pd(addend + i) : x;
      __m256d r;
      asm("" : "=x"(r));  // defines r without emitting an instruction
      issue<kOp>(r, x, y, z);
      _mm256_store_pd(out + i, r);
    }
    // Each repetition's stores must really happen.
    asm volatile("" ::: "memory");
  }
  const std::uint64_t t1 = counter_stop();
  return t1 - t0;
}

template <Op kOp>
std::uint64_t dispatch_regasm(int unroll, const double* lhs, const double* rhs, const double* addend, double* out,
                              std::uint64_t repetitions) {
  switch (unroll) {
    case 2:
      if constexpr (min_unroll(kOp) <= 2) return regasm_loop<kOp, 2>(lhs, rhs, addend, out, repetitions);
      break;
    case 3:
      if constexpr (min_unroll(kOp) <= 3) return regasm_loop<kOp, 3>(lhs, rhs, addend, out, repetitions);
      break;
    case 4: return regasm_loop<kOp, 4>(lhs, rhs, addend, out, repetitions);
    case 5:
      if constexpr (max_unroll(kOp) >= 5) return regasm_loop<kOp, 5>(lhs, rhs, addend, out, repetitions);
      break;
    default: break;
  }
  throw Error(ErrorCode::InvalidSpec, "unsupported unroll " + std::to_string(unroll));
}

template <Op kOp>
std::uint64_t dispatch(const KernelSpec& spec, const double* lhs, const double* rhs, const double* addend,
                       double* out) {
  if (spec.variant == Variant::RegAsm) return dispatch_regasm<kOp>(spec.unroll, lhs, rhs, addend, out, spec.repetitions);
  return memc_loop<kOp>(out, lhs, rhs, addend, spec.vector_length, spec.repetitions);
}

#endif  // __x86_64__

}  // namespace detail

// Preconditions: operands verified, thread pinned, `env` already applied.
inline KernelRun run_kernel(const KernelSpec& spec, const OperandSet& operands, const FpEnvConfig& env,
                            const FeatureSet& features) {
#if !defined(__x86_64__)
  (void)spec, (void)operands, (void)env, (void)features;
  throw Error(ErrorCode::UnsupportedHost, "kernels require an x86-64 host");
#else
  spec.validate();
  if (operands.op != spec.op) {
    throw Error(ErrorCode::OperandMismatch, "operands are for " + std::string(to_string(operands.op)) +
                                                ", kernel is " + std::string(to_string(spec.op)));
  }
  if (!operands.well_formed() || operands.length() != spec.vector_length) {
    throw Error(ErrorCode::OperandMismatch, "operand length " + std::to_string(operands.length()) +
                                                " does not match vector_length " +
                                                std::to_string(spec.vector_length));
  }
  if (!features.avx) throw Error(ErrorCode::MissingFeature, "AVX not available");
  if (spec.op == Op::Fma && !features.fma3) throw Error(ErrorCode::MissingFeature, "FMA3 not available");

  KernelRun run;
  run.spec = spec;
  run.env = env;
  run.scalar_ops = spec.scalar_ops();

  const std::size_t n = spec.vector_length;
  const auto lhs = detail::to_buffer(operands.lhs, n);
  const auto rhs = detail::to_buffer(operands.rhs, n);
  const auto addend = detail::to_buffer(operands.addend, n);
  detail::AlignedBuffer out(n);
  // Touch the output once so MemC starts with a warm L1.
  std::memset(out.data(), 0, n * sizeof(double));

  run.mxcsr_before = read_mxcsr();
  if (!env_matches(env, run.mxcsr_before)) {
    throw Error(ErrorCode::EnvMismatch, "MXCSR does not carry the requested " + env.label() + " state");
  }
  switch (spec.op) {
    case Op::Add: run.raw_cycles = detail::dispatch<Op::Add>(spec, lhs.data(), rhs.data(), addend.data(), out.data()); break;
    case Op::Mul: run.raw_cycles = detail::dispatch<Op::Mul>(spec, lhs.data(), rhs.data(), addend.data(), out.data()); break;
    case Op::Div: run.raw_cycles = detail::dispatch<Op::Div>(spec, lhs.data(), rhs.data(), addend.data(), out.data()); break;
    case Op::Fma: run.raw_cycles = detail::dispatch<Op::Fma>(spec, lhs.data(), rhs.data(), addend.data(), out.data()); break;
  }
  run.mxcsr_after = read_mxcsr();
  if ((run.mxcsr_after & mxcsr::kControlled) != (run.mxcsr_before & mxcsr::kControlled)) {
    throw Error(ErrorCode::EnvMismatch, "MXCSR control bits changed during the kernel");
  }
  run.output.reserve(n);
  for (std::size_t i = 0; i < n; ++i) run.output.push_back(Bits64::from_double(out.data()[i]));
  return run;
#endif
}

inline KernelRun run_kernel(const KernelSpec& spec, const OperandSet& operands, const FpEnvConfig& env) {
  return run_kernel(spec, operands, env, host_features());
}

// ---------------------------------------------------------------------------
// Instruction listing (Intel syntax) of one loop body, for audit. Register
// numbers are nominal; the compiler picks the physical ones.

struct Instruction {
  int chain = 0;
  std::string mnemonic;
  std::string dst;
  std::vector<std::string> srcs;
};

constexpr std::string_view mnemonic(Op op) {
  switch (op) {
    case Op::Add: return "vaddpd";
    case Op::Mul: return "vmulpd";
    case Op::Div: return "vdivpd";
    case Op::Fma: return "vfmadd231pd";
  }
  return "?";
}

inline std::vector<Instruction> kernel_listing(const KernelSpec& spec) {
  auto ymm = [](int i) { return "ymm" + std::to_string(i); };
  const std::string m(mnemonic(spec.op));
  std::vector<Instruction> body;
  if (spec.variant == Variant::MemC) {
    body.push_back({0, "vmovapd", ymm(0), {"[b+i]"}});
    body.push_back({0, "vmovapd", ymm(1), {"[c+i]"}});
    if (spec.op == Op::Fma) {
      body.push_back({0, "vmovapd", ymm(2), {"[d+i]"}});
      body.push_back({0, "vmovapd", ymm(3), {ymm(2)}});
      body.push_back({0, m, ymm(3), {ymm(0), ymm(1)}});
    } else {
      body.push_back({0, m, ymm(3), {ymm(0), ymm(1)}});
    }
    body.push_back({0, "vmovapd", "[a+i]", {ymm(3)}});
    return body;
  }
  const int u = spec.unroll;
  if (spec.op == Op::Fma) {
    // a: ymm0.., b: ymm4.., addend: ymm8.., dst: ymm12..
    for (int k = 0; k < u; ++k) {
      body.push_back({k, "vmovapd", ymm(3 * u + k), {ymm(2 * u + k)}});
      body.push_back({k, m, ymm(3 * u + k), {ymm(k), ymm(u + k)}});
    }
  } else {
    // a: ymm1..u, b: ymm(u+1)..2u, dst: ymm(2u+1)..3u
    for (int k = 0; k < u; ++k) body.push_back({k, m, ymm(2 * u + 1 + k), {ymm(1 + k), ymm(u + 1 + k)}});
  }
  return body;
}

inline std::string format_listing(const KernelSpec& spec) {
  std::string out = "; " + std::string(to_string(spec.op)) + " " + std::string(kernel_label(spec.variant)) +
                    " vector_length=" + std::to_string(spec.vector_length);
  if (spec.variant == Variant::RegAsm) out += " unroll=" + std::to_string(spec.unroll);
  out += "\n.loop:\n";
  for (const auto& ins : kernel_listing(spec)) {
    out += "    " + ins.mnemonic;
    out.append(std::max<std::size_t>(12, ins.mnemonic.size() + 1) - ins.mnemonic.size(), ' ');
    out += ins.dst;
    for (const auto& s : ins.srcs) out += ", " + s;
    out += "\n";
  }
  out += spec.variant == Variant::MemC ? "    add i, 4 / cmp / jb .loop\n" : "    dec rcx / jnz .loop\n";
  return out;
}

// ---------------------------------------------------------------------------
// Load/store bound of the MemC kernel

struct MemcModel {
  double load_cy = 1.0;   // per full AVX load
  double store_cy = 2.0;  // per full AVX store
  double arith_cy = 1.0;  // per AVX add or mul
};

// One AVX iteration needs two loads, one store and one arithmetic op; the
// slowest resource bounds the iteration, which covers four scalar ops.
inline double predict_memc_cycles(Op op, const MemcModel& model) {
  if (op != Op::Add && op != Op::Mul) {
    throw Error(ErrorCode::UnmodeledOp, "no load/store model for " + std::string(to_string(op)));
  }
  const double per_iteration = std::max({2.0 * model.load_cy, 1.0 * model.store_cy, model.arith_cy});
  return per_iteration / 4.0;
}

}  // namespace fpcost
