#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fpcost/fpmodel.hpp"

using namespace fpcost;

namespace {

// Independent classification oracle: a lookup on
// (exponent field kind, mantissa zero?, sign / quiet bit).
OperandClass oracle_class(std::uint64_t raw) {
  const unsigned exp = static_cast<unsigned>((raw >> 52) & 0x7FF);
  const bool mant_zero = (raw & ((1ull << 52) - 1)) == 0;
  const unsigned sign = static_cast<unsigned>(raw >> 63);
  const unsigned quiet = static_cast<unsigned>((raw >> 51) & 1);
  const int kind = exp == 0 ? 0 : (exp == 0x7FF ? 1 : 2);
  static const OperandClass zero_or_sub[2][2] = {
      {OperandClass::Subnormal, OperandClass::Subnormal},  // mantissa nonzero
      {OperandClass::PosZero, OperandClass::NegZero}};     // mantissa zero
  static const OperandClass special[2][2] = {
      {OperandClass::SignalingNaN, OperandClass::QuietNaN},  // indexed by quiet bit
      {OperandClass::PosInf, OperandClass::NegInf}};
  switch (kind) {
    case 0: return zero_or_sub[mant_zero][sign];
    case 1: return mant_zero ? special[1][sign] : special[0][quiet];
    default: return OperandClass::Normal;
  }
}

std::uint64_t biased_pattern(std::mt19937_64& rng) {
  std::uint64_t raw = rng();
  switch (rng() % 8) {
    case 0: raw &= ~Bits64::kExponentMask; break;  // zero or subnormal
    case 1: raw |= Bits64::kExponentMask; break;   // inf or NaN
    case 2: raw &= ~(Bits64::kExponentMask | Bits64::kMantissaMask); break;
    case 3: raw = (raw | Bits64::kExponentMask) & ~Bits64::kMantissaMask; break;
    default: break;
  }
  return raw;
}

int unbiased_exponent(Bits64 b) { return static_cast<int>(b.exponent()) - 1023; }

OperandSet uniform_set(Op op, double l, double r, double a, std::size_t n, OutcomeClass expected) {
  OperandSet s;
  s.op = op;
  s.expected_outcome = expected;
  for (std::size_t i = 0; i < n; ++i) {
    s.lhs.push_back(Bits64::from_double(l));
    s.rhs.push_back(Bits64::from_double(r));
    if (op == Op::Fma) s.addend.push_back(Bits64::from_double(a));
  }
  return s;
}

bool is_x86() { return host_has_mxcsr(); }

}  // namespace

TEST(Classify, CanonicalPatterns) {
  EXPECT_EQ(classify({0x0000000000000000ull}), OperandClass::PosZero);
  EXPECT_EQ(classify({0x8000000000000000ull}), OperandClass::NegZero);
  EXPECT_EQ(classify({0x0000000000000001ull}), OperandClass::Subnormal);
  EXPECT_EQ(classify({0x000FFFFFFFFFFFFFull}), OperandClass::Subnormal);
  EXPECT_EQ(classify({0x0010000000000000ull}), OperandClass::Normal);
  EXPECT_EQ(classify({0x3FF0000000000000ull}), OperandClass::Normal);
  EXPECT_EQ(classify({0x7FEFFFFFFFFFFFFFull}), OperandClass::Normal);
  EXPECT_EQ(classify({0x7FF0000000000000ull}), OperandClass::PosInf);
  EXPECT_EQ(classify({0xFFF0000000000000ull}), OperandClass::NegInf);
  EXPECT_EQ(classify({0x7FF8000000000000ull}), OperandClass::QuietNaN);
  EXPECT_EQ(classify({0x7FF0000000000001ull}), OperandClass::SignalingNaN);
}

TEST(Classify, IsConstexpr) {
  static_assert(classify(Bits64{0x0000000000000001ull}) == OperandClass::Subnormal);
  static_assert(classify(Bits64{0x7FF8000000000000ull}) == OperandClass::QuietNaN);
  SUCCEED();
}

TEST(Classify, MillionPatternsAgreeWithOracle) {
  std::mt19937_64 rng(20240601);
  std::set<OperandClass> seen;
  for (int i = 0; i < 1'000'000; ++i) {
    const std::uint64_t raw = biased_pattern(rng);
    const OperandClass c = classify({raw});
    ASSERT_EQ(c, oracle_class(raw)) << std::hex << raw;
    seen.insert(c);
  }
  EXPECT_EQ(seen.size(), 8u) << "every class should appear in the sample";
}

TEST(Classify, AgreesWithLibmUnderGradualUnderflow) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  with_env(FpEnvConfig::gradual(), [] {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 100'000; ++i) {
      const std::uint64_t raw = biased_pattern(rng);
      const double d = Bits64{raw}.to_double();
      const OperandClass c = classify({raw});
      switch (std::fpclassify(d)) {
        case FP_ZERO: ASSERT_TRUE(is_zero(c)); break;
        case FP_SUBNORMAL: ASSERT_EQ(c, OperandClass::Subnormal); break;
        case FP_NORMAL: ASSERT_EQ(c, OperandClass::Normal); break;
        case FP_INFINITE: ASSERT_TRUE(is_inf(c)); break;
        case FP_NAN: ASSERT_TRUE(is_nan(c)); break;
        default: FAIL();
      }
    }
  });
}

TEST(Classify, UnaffectedByDazAndFtz) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  std::mt19937_64 rng(11);
  std::vector<std::uint64_t> patterns;
  for (int i = 0; i < 10'000; ++i) patterns.push_back(biased_pattern(rng));
  std::vector<OperandClass> gradual, flush;
  with_env(FpEnvConfig::gradual(), [&] {
    for (auto p : patterns) gradual.push_back(classify({p}));
  });
  with_env(FpEnvConfig::flush(), [&] {
    for (auto p : patterns) flush.push_back(classify({p}));
  });
  EXPECT_EQ(gradual, flush);
}

TEST(Bits64, ComposeDecomposeRoundTrip) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100'000; ++i) {
    const Bits64 b{rng()};
    const Bits64 back = Bits64::compose(b.sign(), b.exponent(), b.mantissa());
    ASSERT_EQ(back.raw, b.raw);
    ASSERT_EQ(Bits64::from_double(b.to_double()).raw, b.raw);
  }
}

TEST(Names, RoundTrip) {
  for (Op op : kAllOps) EXPECT_EQ(parse_op(to_string(op)), op);
  for (OutcomeClass c : kAllOutcomes) EXPECT_EQ(parse_outcome(to_string(c)), c);
  EXPECT_FALSE(parse_op("sqrt"));
  EXPECT_FALSE(parse_outcome("whatever"));
}

TEST(Applicability, Matrix) {
  EXPECT_TRUE(is_applicable(Op::Div, OutcomeClass::DivByZero));
  EXPECT_FALSE(is_applicable(Op::Add, OutcomeClass::DivByZero));
  EXPECT_FALSE(is_applicable(Op::Mul, OutcomeClass::FmaMulUnderflow));
  EXPECT_TRUE(is_applicable(Op::Fma, OutcomeClass::FmaAddUnderflow));
  EXPECT_FALSE(is_applicable(Op::Fma, OutcomeClass::Underflow));
  EXPECT_FALSE(is_applicable(Op::Add, OutcomeClass::DenormalDividend));
  EXPECT_EQ(reference_rows(Op::Add).size(), 7u);
  EXPECT_EQ(reference_rows(Op::Mul).size(), 7u);
  EXPECT_EQ(reference_rows(Op::Div).size(), 7u);
  EXPECT_EQ(reference_rows(Op::Fma).size(), 5u);
}

TEST(MakeOperands, MulUnderflowExponentSum) {
  const auto s = make_operands(Op::Mul, OutcomeClass::Underflow, 16);
  ASSERT_EQ(s.length(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(classify(s.lhs[i]), OperandClass::Normal);
    EXPECT_EQ(classify(s.rhs[i]), OperandClass::Normal);
    const int sum = unbiased_exponent(s.lhs[i]) + unbiased_exponent(s.rhs[i]);
    EXPECT_EQ(sum, -1052);
    EXPECT_GT(sum, -1074);
    EXPECT_LT(sum, -1022);
  }
}

TEST(MakeOperands, MulOverflowExponentSum) {
  const auto s = make_operands(Op::Mul, OutcomeClass::Overflow, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_GT(unbiased_exponent(s.lhs[i]) + unbiased_exponent(s.rhs[i]), 1023);
  }
}

TEST(MakeOperands, AddUnderflowCancelsAtTheBoundary) {
  const auto s = make_operands(Op::Add, OutcomeClass::Underflow, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(s.lhs[i].exponent(), 1u);
    EXPECT_EQ(s.rhs[i].exponent(), 1u);
    EXPECT_NE(s.lhs[i].sign(), s.rhs[i].sign());
    // Same exponent, opposite signs: the exact sum is (m_l - m_r) * 2^-1074 in integer terms.
    const std::int64_t diff = static_cast<std::int64_t>(s.lhs[i].mantissa() | (1ull << 52)) -
                              static_cast<std::int64_t>(s.rhs[i].mantissa() | (1ull << 52));
    EXPECT_GT(diff, 0);
    EXPECT_LT(diff, std::int64_t{1} << 52) << "difference below the smallest normal";
  }
}

TEST(MakeOperands, DivByZeroDivisorIsExactZero) {
  const auto s = make_operands(Op::Div, OutcomeClass::DivByZero, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(s.rhs[i].raw, 0u);
    EXPECT_EQ(classify(s.lhs[i]), OperandClass::Normal);
    EXPECT_EQ(s.lhs[i].exponent(), 1023u);
  }
}

TEST(MakeOperands, DenormalClassesCarrySubnormals) {
  const auto lhs = make_operands(Op::Mul, OutcomeClass::DenormalLhs, 16);
  const auto both = make_operands(Op::Add, OutcomeClass::DenormalBoth, 16);
  const auto divisor = make_operands(Op::Div, OutcomeClass::DenormalDivisor, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(classify(lhs.lhs[i]), OperandClass::Subnormal);
    EXPECT_EQ(classify(lhs.rhs[i]), OperandClass::Normal);
    EXPECT_EQ(classify(both.lhs[i]), OperandClass::Subnormal);
    EXPECT_EQ(classify(both.rhs[i]), OperandClass::Subnormal);
    EXPECT_EQ(classify(divisor.rhs[i]), OperandClass::Subnormal);
    EXPECT_EQ(classify(divisor.lhs[i]), OperandClass::Normal);
  }
}

TEST(MakeOperands, FmaUnderflowShapes) {
  const auto mul = make_operands(Op::Fma, OutcomeClass::FmaMulUnderflow, 16);
  const auto add = make_operands(Op::Fma, OutcomeClass::FmaAddUnderflow, 16);
  for (std::size_t i = 0; i < 16; ++i) {
    // Product exponent below the normal range, addend normal.
    EXPECT_LT(unbiased_exponent(mul.lhs[i]) + unbiased_exponent(mul.rhs[i]), -1022);
    EXPECT_EQ(classify(mul.addend[i]), OperandClass::Normal);
    // Product normal, addend of opposite sign.
    EXPECT_GE(unbiased_exponent(add.lhs[i]) + unbiased_exponent(add.rhs[i]), -1022);
    EXPECT_NE(add.addend[i].sign(), add.lhs[i].sign() ^ add.rhs[i].sign());
  }
}

TEST(MakeOperands, LanesAreDistinctAndOnlyLowBitsVary) {
  for (std::size_t n : {16u, 256u}) {
    const auto s = make_operands(Op::Add, OutcomeClass::Normalized, n);
    std::set<std::uint64_t> lanes;
    for (const auto& b : s.lhs) {
      lanes.insert(b.raw);
      EXPECT_EQ(b.raw & ~0xFFull, Bits64::from_double(1.25).raw);
    }
    EXPECT_EQ(lanes.size(), std::min<std::size_t>(n, 256));
  }
}

TEST(MakeOperands, DeterministicPerSeed) {
  EXPECT_EQ(make_operands(Op::Mul, OutcomeClass::Underflow, 16, 5),
            make_operands(Op::Mul, OutcomeClass::Underflow, 16, 5));
  EXPECT_NE(make_operands(Op::Mul, OutcomeClass::Underflow, 16, 5),
            make_operands(Op::Mul, OutcomeClass::Underflow, 16, 6));
}

TEST(MakeOperands, Errors) {
  auto code_of = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::ParseError;  // sentinel: nothing thrown
  };
  EXPECT_EQ(code_of([] { make_operands(Op::Add, OutcomeClass::DivByZero, 16); }), ErrorCode::InapplicableOutcome);
  EXPECT_EQ(code_of([] { make_operands(Op::Mul, OutcomeClass::FmaMulUnderflow, 16); }),
            ErrorCode::InapplicableOutcome);
  EXPECT_EQ(code_of([] { make_operands(Op::Add, OutcomeClass::Normalized, 0); }), ErrorCode::InvalidArgument);
}

TEST(Generator, SoundForEveryApplicableCell) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  for (Op op : kAllOps) {
    for (OutcomeClass outcome : kAllOutcomes) {
      if (!is_applicable(op, outcome)) continue;
      for (std::size_t n : {4u, 16u, 256u}) {
        for (std::uint64_t seed : {0u, 1u, 977u}) {
          const auto s = make_operands(op, outcome, n, seed);
          ASSERT_TRUE(s.well_formed());
          ASSERT_EQ(verify_outcome(op, s), outcome)
              << to_string(op) << "/" << to_string(outcome) << " n=" << n << " seed=" << seed;
        }
      }
    }
  }
}

TEST(Verify, HandBuiltExamples) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  EXPECT_EQ(verify_outcome(Op::Add, uniform_set(Op::Add, 1.0, 1.0, 0, 16, OutcomeClass::Normalized)),
            OutcomeClass::Normalized);
  EXPECT_EQ(verify_outcome(Op::Div, uniform_set(Op::Div, 1.0, 0.0, 0, 16, OutcomeClass::DivByZero)),
            OutcomeClass::DivByZero);
  EXPECT_EQ(verify_outcome(Op::Mul, uniform_set(Op::Mul, 0x1p-512, 0x1p-540, 0, 16, OutcomeClass::Underflow)),
            OutcomeClass::Underflow);
  EXPECT_EQ(verify_outcome(Op::Mul, uniform_set(Op::Mul, 0x1p600, 0x1p600, 0, 4, OutcomeClass::Overflow)),
            OutcomeClass::Overflow);
}

TEST(Verify, MixedLanesRejected) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  auto s = uniform_set(Op::Mul, 1.0, 1.0, 0, 16, OutcomeClass::Normalized);
  s.rhs[7] = Bits64::from_double(0x1p-1060);  // one lane underflows
  try {
    verify_outcome(Op::Mul, s);
    FAIL() << "expected MixedLanes";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MixedLanes);
  }
}

TEST(Verify, UnclassifiableLaneRejected) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  auto s = uniform_set(Op::Div, 0.0, 0.0, 0, 4, OutcomeClass::DivByZero);
  try {
    verify_outcome(Op::Div, s);
    FAIL() << "expected UnclassifiableLane";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnclassifiableLane);
  }
}

TEST(Verify, IgnoresAmbientFlushMode) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  const auto s = make_operands(Op::Mul, OutcomeClass::Underflow, 16);
  const auto r = with_env(FpEnvConfig::flush(), [&] { return verify_outcome(Op::Mul, s); });
  EXPECT_EQ(r, OutcomeClass::Underflow);
}

TEST(ClassifyLane, SubnormalFusedResultIsAdditionUnderflow) {
  // A tiny product plus a zero addend leaves a subnormal result; that lane
  // counts as an addition underflow, not a multiplication one.
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  const Bits64 l = Bits64::from_double(0x1p-512), r = Bits64::from_double(0x1p-540), a{0};
  const auto eval = with_env(FpEnvConfig::gradual(), [&] { return evaluate_lane(Op::Fma, l, r, a); });
  EXPECT_EQ(classify_lane(Op::Fma, l, r, a, eval), OutcomeClass::FmaAddUnderflow);
}

TEST(Semantics, DazTreatsSubnormalInputsAsZero) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  const auto both = make_operands(Op::Mul, OutcomeClass::DenormalBoth, 16);
  const auto lhs = make_operands(Op::Mul, OutcomeClass::DenormalLhs, 16);
  FpEnvConfig daz_only{false, true, true, true};
  for (const auto& r : with_env(daz_only, [&] { return evaluate(both); })) EXPECT_TRUE(is_zero(classify(r)));
  for (const auto& r : with_env(daz_only, [&] { return evaluate(lhs); })) EXPECT_TRUE(is_zero(classify(r)));
  for (const auto& r : with_env(FpEnvConfig::gradual(), [&] { return evaluate(lhs); })) {
    EXPECT_EQ(classify(r), OperandClass::Subnormal);
  }
}

TEST(Semantics, FtzFlushesSubnormalResults) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  const auto s = make_operands(Op::Mul, OutcomeClass::Underflow, 16);
  FpEnvConfig ftz_only{true, false, true, true};
  for (const auto& r : with_env(ftz_only, [&] { return evaluate(s); })) EXPECT_TRUE(is_zero(classify(r)));
  for (const auto& r : with_env(FpEnvConfig::gradual(), [&] { return evaluate(s); })) {
    EXPECT_EQ(classify(r), OperandClass::Subnormal);
  }
}

TEST(Semantics, EvaluateIsPure) {
  if (!is_x86()) GTEST_SKIP() << "hardware-gated";
  const auto s = make_operands(Op::Div, OutcomeClass::Underflow, 16);
  const auto copy = s;
  const auto a = with_env(FpEnvConfig::gradual(), [&] { return evaluate(s); });
  const auto b = with_env(FpEnvConfig::gradual(), [&] { return evaluate(s); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(s, copy);
}
