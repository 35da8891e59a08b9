#pragma once

// Bit-level model of IEEE-754 binary64 values, operand synthesis for each
// outcome class, and the oracle that checks which class an operand set lands in.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpcost/error.hpp"
#include "fpcost/fpenv.hpp"

namespace fpcost {

struct Bits64 {
  std::uint64_t raw = 0;

  static constexpr std::uint64_t kSignMask = 0x8000000000000000ull;
  static constexpr std::uint64_t kExponentMask = 0x7FF0000000000000ull;
  static constexpr std::uint64_t kMantissaMask = 0x000FFFFFFFFFFFFFull;
  static constexpr std::uint64_t kQuietBit = 0x0008000000000000ull;
  static constexpr unsigned kMaxExponent = 0x7FF;

  constexpr unsigned sign() const noexcept { return static_cast<unsigned>(raw >> 63); }
  constexpr unsigned exponent() const noexcept {
    return static_cast<unsigned>((raw & kExponentMask) >> 52);
  }
  constexpr std::uint64_t mantissa() const noexcept { return raw & kMantissaMask; }

  static constexpr Bits64 compose(unsigned sign, unsigned exponent, std::uint64_t mantissa) {
    return Bits64{(static_cast<std::uint64_t>(sign & 1u) << 63) |
                  (static_cast<std::uint64_t>(exponent & kMaxExponent) << 52) |
                  (mantissa & kMantissaMask)};
  }

  static constexpr Bits64 from_double(double value) { return {std::bit_cast<std::uint64_t>(value)}; }
  constexpr double to_double() const noexcept { return std::bit_cast<double>(raw); }

  friend constexpr bool operator==(Bits64, Bits64) = default;
};

enum class OperandClass { PosZero, NegZero, Subnormal, Normal, PosInf, NegInf, QuietNaN, SignalingNaN };

// Pure integer logic; never touches the FP unit, so it is valid under any MXCSR state.
constexpr OperandClass classify(Bits64 bits) noexcept {
  const unsigned exponent = bits.exponent();
  const std::uint64_t mantissa = bits.mantissa();
  if (exponent == 0) {
    if (mantissa != 0) return OperandClass::Subnormal;
    return bits.sign() ? OperandClass::NegZero : OperandClass::PosZero;
  }
  if (exponent == Bits64::kMaxExponent) {
    if (mantissa == 0) return bits.sign() ? OperandClass::NegInf : OperandClass::PosInf;
    return (mantissa & Bits64::kQuietBit) ? OperandClass::QuietNaN : OperandClass::SignalingNaN;
  }
  return OperandClass::Normal;
}

constexpr bool is_zero(OperandClass c) { return c == OperandClass::PosZero || c == OperandClass::NegZero; }
constexpr bool is_inf(OperandClass c) { return c == OperandClass::PosInf || c == OperandClass::NegInf; }
constexpr bool is_nan(OperandClass c) {
  return c == OperandClass::QuietNaN || c == OperandClass::SignalingNaN;
}

constexpr std::string_view to_string(OperandClass c) {
  switch (c) {
    case OperandClass::PosZero: return "+zero";
    case OperandClass::NegZero: return "-zero";
    case OperandClass::Subnormal: return "subnormal";
    case OperandClass::Normal: return "normal";
    case OperandClass::PosInf: return "+inf";
    case OperandClass::NegInf: return "-inf";
    case OperandClass::QuietNaN: return "qnan";
    case OperandClass::SignalingNaN: return "snan";
  }
  return "?";
}

enum class Op { Add, Mul, Div, Fma };

inline constexpr std::array<Op, 4> kAllOps = {Op::Add, Op::Mul, Op::Div, Op::Fma};

constexpr std::string_view to_string(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Fma: return "fma";
  }
  return "?";
}

constexpr std::string_view display_name(Op op) {
  switch (op) {
    case Op::Add: return "Addition";
    case Op::Mul: return "Multiplication";
    case Op::Div: return "Division";
    case Op::Fma: return "Fused-Multiply-Add";
  }
  return "?";
}

inline std::optional<Op> parse_op(std::string_view text) {
  for (Op op : kAllOps) {
    if (to_string(op) == text) return op;
  }
  return std::nullopt;
}

enum class OutcomeClass {
  Normalized,
  Overflow,
  Underflow,
  DenormalLhs,
  DenormalRhs,
  DenormalBoth,
  NaNInput,
  DivByZero,
  DenormalDividend,
  DenormalDivisor,
  FmaMulOverflow,
  FmaAddOverflow,
  FmaMulUnderflow,
  FmaAddUnderflow,
};

inline constexpr std::array<OutcomeClass, 14> kAllOutcomes = {
    OutcomeClass::Normalized,       OutcomeClass::Overflow,        OutcomeClass::Underflow,
    OutcomeClass::DenormalLhs,      OutcomeClass::DenormalRhs,     OutcomeClass::DenormalBoth,
    OutcomeClass::NaNInput,         OutcomeClass::DivByZero,       OutcomeClass::DenormalDividend,
    OutcomeClass::DenormalDivisor,  OutcomeClass::FmaMulOverflow,  OutcomeClass::FmaAddOverflow,
    OutcomeClass::FmaMulUnderflow,  OutcomeClass::FmaAddUnderflow,
};

constexpr std::string_view to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::Normalized: return "normalized";
    case OutcomeClass::Overflow: return "overflow";
    case OutcomeClass::Underflow: return "underflow";
    case OutcomeClass::DenormalLhs: return "denormal_lhs";
    case OutcomeClass::DenormalRhs: return "denormal_rhs";
    case OutcomeClass::DenormalBoth: return "denormal_both";
    case OutcomeClass::NaNInput: return "nan_input";
    case OutcomeClass::DivByZero: return "div_by_zero";
    case OutcomeClass::DenormalDividend: return "denormal_dividend";
    case OutcomeClass::DenormalDivisor: return "denormal_divisor";
    case OutcomeClass::FmaMulOverflow: return "fma_mul_overflow";
    case OutcomeClass::FmaAddOverflow: return "fma_add_overflow";
    case OutcomeClass::FmaMulUnderflow: return "fma_mul_underflow";
    case OutcomeClass::FmaAddUnderflow: return "fma_add_underflow";
  }
  return "?";
}

// Row labels as they appear in the published cost table.
constexpr std::string_view row_label(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::Normalized: return "normalized";
    case OutcomeClass::Overflow: return "overflow";
    case OutcomeClass::Underflow: return "underflow";
    case OutcomeClass::DenormalLhs: return "denormal l";
    case OutcomeClass::DenormalRhs: return "denormal r";
    case OutcomeClass::DenormalBoth: return "both denormals";
    case OutcomeClass::NaNInput: return "NaN";
    case OutcomeClass::DivByZero: return "div-by-zero";
    case OutcomeClass::DenormalDividend: return "denormal dividend";
    case OutcomeClass::DenormalDivisor: return "denormal divisor";
    case OutcomeClass::FmaMulOverflow: return "multiplication overflow";
    case OutcomeClass::FmaAddOverflow: return "addition overflow";
    case OutcomeClass::FmaMulUnderflow: return "multiplication underflow";
    case OutcomeClass::FmaAddUnderflow: return "addition underflow";
  }
  return "?";
}

inline std::optional<OutcomeClass> parse_outcome(std::string_view text) {
  for (OutcomeClass c : kAllOutcomes) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

// Rows of the published table, in table order.
inline std::span<const OutcomeClass> reference_rows(Op op) {
  using O = OutcomeClass;
  static constexpr std::array<O, 7> kAddMul = {O::Normalized,  O::Overflow,    O::Underflow, O::DenormalLhs,
                                               O::DenormalRhs, O::DenormalBoth, O::NaNInput};
  static constexpr std::array<O, 7> kDiv = {O::Normalized,       O::Overflow,        O::Underflow,
                                            O::DivByZero,        O::DenormalDividend, O::DenormalDivisor,
                                            O::DenormalBoth};
  static constexpr std::array<O, 5> kFma = {O::Normalized, O::FmaMulOverflow, O::FmaAddOverflow,
                                            O::FmaMulUnderflow, O::FmaAddUnderflow};
  switch (op) {
    case Op::Add:
    case Op::Mul: return kAddMul;
    case Op::Div: return kDiv;
    case Op::Fma: return kFma;
  }
  return {};
}

// Combinations the table leaves out; measured only on request, with no reference value.
inline std::span<const OutcomeClass> extended_rows(Op op) {
  using O = OutcomeClass;
  static constexpr std::array<O, 1> kDiv = {O::NaNInput};
  static constexpr std::array<O, 4> kFma = {O::DenormalLhs, O::DenormalRhs, O::DenormalBoth, O::NaNInput};
  switch (op) {
    case Op::Div: return kDiv;
    case Op::Fma: return kFma;
    default: return {};
  }
}

inline bool in_reference_rows(Op op, OutcomeClass outcome) {
  for (OutcomeClass c : reference_rows(op)) {
    if (c == outcome) return true;
  }
  return false;
}

inline bool is_applicable(Op op, OutcomeClass outcome) {
  if (in_reference_rows(op, outcome)) return true;
  for (OutcomeClass c : extended_rows(op)) {
    if (c == outcome) return true;
  }
  return false;
}

struct OperandSet {
  Op op = Op::Add;
  std::vector<Bits64> lhs;
  std::vector<Bits64> rhs;
  std::vector<Bits64> addend;  // Fma only
  OutcomeClass expected_outcome = OutcomeClass::Normalized;

  std::size_t length() const noexcept { return lhs.size(); }

  bool well_formed() const noexcept {
    if (lhs.empty() || rhs.size() != lhs.size()) return false;
    return op == Op::Fma ? addend.size() == lhs.size() : addend.empty();
  }

  friend bool operator==(const OperandSet&, const OperandSet&) = default;
};

namespace detail {

// Replaces the low 8 mantissa bits with a per-lane pattern. Zeros and
// infinities are left alone since any mantissa bit would change their class.
constexpr Bits64 perturb(Bits64 base, std::size_t lane, std::uint64_t seed) {
  const OperandClass c = classify(base);
  if (is_zero(c) || is_inf(c)) return base;
  const std::uint64_t low = (static_cast<std::uint64_t>(lane) * 37u + seed) & 0xFFu;
  Bits64 out{(base.raw & ~0xFFull) | low};
  // A subnormal with an all-zero mantissa would turn into a zero.
  if (classify(out) != c) out.raw |= 0x1u;
  return out;
}

struct OperandRecipe {
  double lhs;
  double rhs;
  double addend = 0.0;
};

constexpr double kSubnormalMid = 0x1p-1023;        // 0x0008000000000000
constexpr double kSubnormalLow = 0x1p-1024;        // 0x0004000000000000
constexpr double kSubnormalTiny = 0x100 * 0x1p-1074;  // min-subnormal scale, 0x100

inline std::optional<OperandRecipe> recipe(Op op, OutcomeClass outcome) {
  using O = OutcomeClass;
  const double qnan = Bits64{0x7FF8000000000000ull}.to_double();
  switch (op) {
    case Op::Add:
      switch (outcome) {
        case O::Normalized: return OperandRecipe{1.25, 1.5};
        case O::Overflow: return OperandRecipe{0x1.8p1023, 0x1.8p1023};
        case O::Underflow: return OperandRecipe{0x1.8p-1022, -0x1p-1022};
        case O::DenormalLhs: return OperandRecipe{kSubnormalMid, 1.0};
        case O::DenormalRhs: return OperandRecipe{1.0, kSubnormalMid};
        case O::DenormalBoth: return OperandRecipe{kSubnormalMid, kSubnormalLow};
        case O::NaNInput: return OperandRecipe{qnan, 1.0};
        default: return std::nullopt;
      }
    case Op::Mul:
      switch (outcome) {
        case O::Normalized: return OperandRecipe{1.25, 1.5};
        case O::Overflow: return OperandRecipe{0x1p600, 0x1p600};
        case O::Underflow: return OperandRecipe{0x1p-512, 0x1p-540};
        case O::DenormalLhs: return OperandRecipe{kSubnormalMid, 1.0};
        case O::DenormalRhs: return OperandRecipe{1.0, kSubnormalMid};
        case O::DenormalBoth: return OperandRecipe{kSubnormalMid, kSubnormalLow};
        case O::NaNInput: return OperandRecipe{qnan, 1.0};
        default: return std::nullopt;
      }
    case Op::Div:
      switch (outcome) {
        case O::Normalized: return OperandRecipe{1.25, 1.5};
        case O::Overflow: return OperandRecipe{0x1p600, 0x1p-600};
        case O::Underflow: return OperandRecipe{0x1p-600, 0x1p450};
        case O::DivByZero: return OperandRecipe{1.0, 0.0};
        case O::DenormalDividend: return OperandRecipe{kSubnormalTiny, 1.0};
        // 1.0 over a min-scale subnormal would overflow; 2^-100 keeps the quotient finite.
        case O::DenormalDivisor: return OperandRecipe{0x1p-100, kSubnormalTiny};
        case O::DenormalBoth: return OperandRecipe{kSubnormalTiny * 3.0, kSubnormalTiny};
        case O::NaNInput: return OperandRecipe{qnan, 1.0};
        default: return std::nullopt;
      }
    case Op::Fma:
      switch (outcome) {
        case O::Normalized: return OperandRecipe{1.25, 1.5, 0.75};
        case O::FmaMulOverflow: return OperandRecipe{0x1p600, 0x1p600, 1.0};
        case O::FmaAddOverflow: return OperandRecipe{0x1.8p1023, 1.0, 0x1.8p1023};
        // Product underflows on its own; the normal addend keeps the fused result normal.
        case O::FmaMulUnderflow: return OperandRecipe{0x1p-512, 0x1p-540, 0x1p-1000};
        // Product 1.5 * 2^-1022 is normal; adding -2^-1021 lands at -2^-1023.
        case O::FmaAddUnderflow: return OperandRecipe{0x1.8p-511, 0x1p-511, -0x1p-1021};
        case O::DenormalLhs: return OperandRecipe{kSubnormalMid, 1.0, 1.0};
        case O::DenormalRhs: return OperandRecipe{1.0, kSubnormalMid, 1.0};
        case O::DenormalBoth: return OperandRecipe{kSubnormalMid, kSubnormalLow, 1.0};
        case O::NaNInput: return OperandRecipe{qnan, 1.0, 1.0};
        default: return std::nullopt;
      }
  }
  return std::nullopt;
}

}  // namespace detail

inline OperandSet make_operands(Op op, OutcomeClass outcome, std::size_t vector_length,
                                std::uint64_t seed = 0) {
  if (!is_applicable(op, outcome)) {
    throw Error(ErrorCode::InapplicableOutcome,
                std::string(to_string(outcome)) + " does not apply to " + std::string(to_string(op)));
  }
  if (vector_length == 0) throw Error(ErrorCode::InvalidArgument, "vector_length must be >= 1");
  const auto r = detail::recipe(op, outcome);
  if (!r) {
    throw Error(ErrorCode::ImpossibleOutcome,
                "no operands for " + std::string(to_string(op)) + "/" + std::string(to_string(outcome)));
  }
  OperandSet set;
  set.op = op;
  set.expected_outcome = outcome;
  set.lhs.reserve(vector_length);
  set.rhs.reserve(vector_length);
  // Offset the three streams so a lane never carries the same low bits in every operand.
  for (std::size_t i = 0; i < vector_length; ++i) {
    set.lhs.push_back(detail::perturb(Bits64::from_double(r->lhs), i, seed));
    set.rhs.push_back(detail::perturb(Bits64::from_double(r->rhs), i, seed + 101));
    if (op == Op::Fma) set.addend.push_back(detail::perturb(Bits64::from_double(r->addend), i, seed + 211));
  }
  return set;
}

// One lane evaluated under whatever MXCSR state is current.
struct LaneEvaluation {
  Bits64 result;
  Bits64 product;  // separately rounded lhs*rhs; Fma only
};

[[gnu::noinline]] inline LaneEvaluation evaluate_lane(Op op, Bits64 lhs, Bits64 rhs, Bits64 addend) {
  // volatile keeps the arithmetic at run time so the live MXCSR applies.
  volatile double l = lhs.to_double();
  volatile double r = rhs.to_double();
  volatile double a = addend.to_double();
  volatile double out = 0.0;
  volatile double product = 0.0;
  switch (op) {
    case Op::Add: out = l + r; break;
    case Op::Mul: out = l * r; break;
    case Op::Div: out = l / r; break;
    case Op::Fma:
      product = l * r;
      out = std::fma(l, r, a);
      break;
  }
  return {Bits64::from_double(out), Bits64::from_double(product)};
}

inline std::vector<Bits64> evaluate(const OperandSet& set) {
  if (!set.well_formed()) throw Error(ErrorCode::InvalidArgument, "malformed operand set");
  std::vector<Bits64> out;
  out.reserve(set.length());
  for (std::size_t i = 0; i < set.length(); ++i) {
    const Bits64 a = set.op == Op::Fma ? set.addend[i] : Bits64{};
    out.push_back(evaluate_lane(set.op, set.lhs[i], set.rhs[i], a).result);
  }
  return out;
}

// Maps classified inputs and results of one lane to its outcome, or nullopt
// when the lane fits none of the benchmarked classes.
inline std::optional<OutcomeClass> classify_lane(Op op, Bits64 lhs, Bits64 rhs, Bits64 addend,
                                                 const LaneEvaluation& eval) {
  using O = OutcomeClass;
  const OperandClass cl = classify(lhs);
  const OperandClass cr = classify(rhs);
  const OperandClass ca = op == Op::Fma ? classify(addend) : OperandClass::PosZero;
  const OperandClass res = classify(eval.result);

  if (is_nan(cl) || is_nan(cr) || is_nan(ca)) return O::NaNInput;
  if (is_inf(cl) || is_inf(cr) || is_inf(ca)) return std::nullopt;

  const bool sub_l = cl == OperandClass::Subnormal;
  const bool sub_r = cr == OperandClass::Subnormal;

  if (op == Op::Div) {
    if (is_zero(cr)) {
      return cl == OperandClass::Normal ? std::optional<O>(O::DivByZero) : std::nullopt;
    }
    if (sub_l && sub_r) return O::DenormalBoth;
    if (sub_l) return O::DenormalDividend;
    if (sub_r) return O::DenormalDivisor;
  } else {
    if (sub_l && sub_r) return O::DenormalBoth;
    if (sub_l) return O::DenormalLhs;
    if (sub_r) return O::DenormalRhs;
  }

  if (op == Op::Fma) {
    if (ca == OperandClass::Subnormal) return std::nullopt;
    const OperandClass prod = classify(eval.product);
    const bool nonzero_factors = !is_zero(cl) && !is_zero(cr);
    if (is_inf(prod)) return O::FmaMulOverflow;
    if (is_inf(res)) return O::FmaAddOverflow;
    if (res == OperandClass::Subnormal) return O::FmaAddUnderflow;
    if (prod == OperandClass::Subnormal || (is_zero(prod) && nonzero_factors)) return O::FmaMulUnderflow;
    if (res == OperandClass::Normal) return O::Normalized;
    return std::nullopt;
  }

  if (is_inf(res)) return O::Overflow;
  if (res == OperandClass::Subnormal) return O::Underflow;
  if (is_zero(res)) {
    // A nonzero product or quotient that rounds to zero has underflowed.
    const bool nonzero_inputs = !is_zero(cl) && !is_zero(cr);
    if (op != Op::Add && nonzero_inputs) return O::Underflow;
    return std::nullopt;
  }
  if (res == OperandClass::Normal) return O::Normalized;
  return std::nullopt;
}

// Evaluates every lane with gradual underflow and all exceptions masked.
// Touches MXCSR, so call it from the measurement thread only.
inline OutcomeClass verify_outcome(Op op, const OperandSet& set) {
  if (!host_has_mxcsr()) {
    throw Error(ErrorCode::UnsupportedHost, "gradual-underflow evaluation needs an x86-64 host");
  }
  if (set.op != op || !set.well_formed()) {
    throw Error(ErrorCode::InvalidArgument, "operand set does not match " + std::string(to_string(op)));
  }
  return with_env(FpEnvConfig::gradual(), [&] {
    std::optional<OutcomeClass> uniform;
    for (std::size_t i = 0; i < set.length(); ++i) {
      const Bits64 a = op == Op::Fma ? set.addend[i] : Bits64{};
      const auto eval = evaluate_lane(op, set.lhs[i], set.rhs[i], a);
      const auto lane = classify_lane(op, set.lhs[i], set.rhs[i], a, eval);
      if (!lane) {
        throw Error(ErrorCode::UnclassifiableLane, "lane " + std::to_string(i) + " fits no outcome class");
      }
      if (uniform && *uniform != *lane) {
        throw Error(ErrorCode::MixedLanes, "lane " + std::to_string(i) + " is " + std::string(to_string(*lane)) +
                                               ", earlier lanes are " + std::string(to_string(*uniform)));
      }
      uniform = lane;
    }
    return *uniform;
  });
}

}  // namespace fpcost
