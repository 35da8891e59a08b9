#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fpcost/fpcost.hpp"

using namespace fpcost;

namespace {

#define REQUIRE_AVX() \
  if (!host_features().avx) GTEST_SKIP() << "hardware-gated: no AVX"

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::ParseError;
}

std::vector<Op> host_ops() {
  std::vector<Op> ops = {Op::Add, Op::Mul, Op::Div};
  if (host_features().fma3) ops.push_back(Op::Fma);
  return ops;
}

// Minimum raw cycles of a few runs; robust against one-off interruptions.
std::uint64_t best_of(const KernelSpec& spec, const OperandSet& ops, int runs = 7) {
  std::uint64_t best = ~0ull;
  with_env(FpEnvConfig::gradual(), [&] {
    for (int i = 0; i < runs; ++i) best = std::min(best, run_kernel(spec, ops, FpEnvConfig::gradual()).raw_cycles);
  });
  return best;
}

}  // namespace

TEST(KernelSpecTest, Factories) {
  const auto r = KernelSpec::regasm(Op::Mul, 4, 1000);
  EXPECT_EQ(r.vector_length, 16u);
  EXPECT_GE(r.scalar_ops(), 1000u);
  EXPECT_EQ(r.scalar_ops(), r.repetitions * r.vector_length);
  EXPECT_NO_THROW(r.validate());
  EXPECT_NO_THROW(KernelSpec::regasm(Op::Div, 2, 1000).validate());
  EXPECT_NO_THROW(KernelSpec::memc(Op::Add, 256, 1000).validate());
}

TEST(KernelSpecTest, Validation) {
  auto invalid = [](KernelSpec s) { return code_of([&] { s.validate(); }) == ErrorCode::InvalidSpec; };
  EXPECT_TRUE(invalid(KernelSpec::regasm(Op::Add, 3, 1000)));   // too few chains
  EXPECT_TRUE(invalid(KernelSpec::regasm(Op::Fma, 5, 1000)));   // register file
  EXPECT_TRUE(invalid(KernelSpec::regasm(Op::Mul, 6, 1000)));
  auto wrong_len = KernelSpec::regasm(Op::Add, 4, 1000);
  wrong_len.vector_length = 20;
  EXPECT_TRUE(invalid(wrong_len));
  EXPECT_TRUE(invalid(KernelSpec::memc(Op::Add, 1024, 1000)));  // 3 x 8 KiB > L1 budget
  auto below_floor = KernelSpec::regasm(Op::Add, 4, 1000);
  below_floor.repetitions = 1;
  EXPECT_TRUE(invalid(below_floor));
  auto zero = KernelSpec::memc(Op::Add, 256, 1000);
  zero.vector_length = 0;
  EXPECT_TRUE(invalid(zero));
}

TEST(Listing, ChainsAreIndependent) {
  for (Op op : kAllOps) {
    const int u = op == Op::Div ? 2 : 4;
    const auto body = kernel_listing(KernelSpec::regasm(op, u, 1000));
    std::set<std::string> dsts;
    for (const auto& ins : body) {
      if (ins.mnemonic != mnemonic(op)) continue;
      dsts.insert(ins.dst);
      // No chain reads another chain's destination.
      for (const auto& other : body) {
        if (other.mnemonic == mnemonic(op) && other.chain != ins.chain) {
          EXPECT_EQ(std::count(other.srcs.begin(), other.srcs.end(), ins.dst), 0);
        }
      }
    }
    EXPECT_EQ(dsts.size(), static_cast<std::size_t>(u)) << to_string(op);
  }
}

TEST(Listing, MultiplyBodyRegisterLayout) {
  const auto text = format_listing(KernelSpec::regasm(Op::Mul, 4, 1000));
  EXPECT_NE(text.find("vmulpd      ymm9, ymm1, ymm5"), std::string::npos) << text;
  EXPECT_NE(text.find("vmulpd      ymm12, ymm4, ymm8"), std::string::npos) << text;
}

TEST(Run, ErrorsBeforeExecution) {
  REQUIRE_AVX();
  const auto spec = KernelSpec::regasm(Op::Mul, 4, 1000);
  const auto ops = make_operands(Op::Mul, OutcomeClass::Normalized, 16);
  with_env(FpEnvConfig::gradual(), [&] {
    EXPECT_EQ(code_of([&] { run_kernel(spec, make_operands(Op::Add, OutcomeClass::Normalized, 16),
                                       FpEnvConfig::gradual()); }),
              ErrorCode::OperandMismatch);
    EXPECT_EQ(code_of([&] { run_kernel(spec, make_operands(Op::Mul, OutcomeClass::Normalized, 20),
                                       FpEnvConfig::gradual()); }),
              ErrorCode::OperandMismatch);
    // Requested flush mode, but the register is in gradual mode.
    EXPECT_EQ(code_of([&] { run_kernel(spec, ops, FpEnvConfig::flush()); }), ErrorCode::EnvMismatch);
    FeatureSet no_fma = host_features();
    no_fma.fma3 = false;
    EXPECT_EQ(code_of([&] {
                run_kernel(KernelSpec::regasm(Op::Fma, 4, 1000),
                           make_operands(Op::Fma, OutcomeClass::Normalized, 16), FpEnvConfig::gradual(), no_fma);
              }),
              ErrorCode::MissingFeature);
    FeatureSet none;
    EXPECT_EQ(code_of([&] { run_kernel(spec, ops, FpEnvConfig::gradual(), none); }), ErrorCode::MissingFeature);
  });
}

TEST(Run, OutputMatchesScalarOracle) {
  REQUIRE_AVX();
  for (Op op : host_ops()) {
    for (OutcomeClass outcome : reference_rows(op)) {
      for (const auto& env : {FpEnvConfig::flush(), FpEnvConfig::gradual()}) {
        const auto ops = make_operands(op, outcome, 16, 3);
        const auto expected = with_env(env, [&] { return evaluate(ops); });
        const auto run = with_env(env, [&] { return run_kernel(KernelSpec::regasm(op, 4, 1000), ops, env); });
        ASSERT_EQ(run.output.size(), 16u);
        for (std::size_t i = 0; i < 16; ++i) {
          if (classify(expected[i]) == OperandClass::QuietNaN) {
            EXPECT_EQ(classify(run.output[i]), OperandClass::QuietNaN);
          } else {
            EXPECT_EQ(run.output[i].raw, expected[i].raw)
                << to_string(op) << "/" << to_string(outcome) << " " << env.label() << " lane " << i;
          }
        }
        if (op != Op::Fma) {
          const auto memc_ops = make_operands(op, outcome, 256, 3);
          const auto memc_expected = with_env(env, [&] { return evaluate(memc_ops); });
          const auto memc = with_env(env, [&] { return run_kernel(KernelSpec::memc(op, 256, 1000), memc_ops, env); });
          for (std::size_t i = 0; i < 256; ++i) {
            if (classify(memc_expected[i]) != OperandClass::QuietNaN) {
              ASSERT_EQ(memc.output[i].raw, memc_expected[i].raw) << "memc lane " << i;
            }
          }
        }
      }
    }
  }
}

TEST(Run, EnvFidelity) {
  REQUIRE_AVX();
  for (const auto& env : {FpEnvConfig::flush(), FpEnvConfig::gradual()}) {
    const auto run = with_env(env, [&] {
      return run_kernel(KernelSpec::regasm(Op::Mul, 4, 1000), make_operands(Op::Mul, OutcomeClass::Underflow, 16),
                        env);
    });
    EXPECT_EQ(decode(run.mxcsr_before), env);
    EXPECT_EQ(run.mxcsr_before & mxcsr::kControlled, run.mxcsr_after & mxcsr::kControlled);
  }
}

TEST(Run, WorkIsNotElided) {
  REQUIRE_AVX();
  const auto spec = KernelSpec::regasm(Op::Add, 4, 1000);
  const auto a = with_env(FpEnvConfig::gradual(), [&] {
    return run_kernel(spec, make_operands(Op::Add, OutcomeClass::Normalized, 16, 0), FpEnvConfig::gradual());
  });
  const auto b = with_env(FpEnvConfig::gradual(), [&] {
    return run_kernel(spec, make_operands(Op::Add, OutcomeClass::Normalized, 16, 1), FpEnvConfig::gradual());
  });
  EXPECT_NE(a.output, b.output);
  EXPECT_GT(a.raw_cycles, 0u);
}

TEST(Run, WorkConservation) {
  REQUIRE_AVX();
  for (Op op : {Op::Add, Op::Mul}) {
    const auto ops = make_operands(op, OutcomeClass::Normalized, 16);
    const auto single = KernelSpec::regasm(op, 4, 4'000'000);
    auto twice = single;
    twice.repetitions *= 2;
    const double ratio =
        static_cast<double>(best_of(twice, ops)) / static_cast<double>(best_of(single, ops));
    EXPECT_NEAR(ratio, 2.0, 0.10) << to_string(op);
  }
}

TEST(Run, RegisterKernelNotSlowerThanMemoryKernel) {
  REQUIRE_AVX();
  for (Op op : {Op::Add, Op::Mul}) {
    const auto asm_ops = make_operands(op, OutcomeClass::Normalized, 16);
    const auto c_ops = make_operands(op, OutcomeClass::Normalized, 256);
    const auto asm_spec = KernelSpec::regasm(op, 4, 2'000'000);
    const auto c_spec = KernelSpec::memc(op, 256, 2'000'000);
    const double asm_cy = static_cast<double>(best_of(asm_spec, asm_ops)) / asm_spec.scalar_ops();
    const double c_cy = static_cast<double>(best_of(c_spec, c_ops)) / c_spec.scalar_ops();
    EXPECT_LE(asm_cy, c_cy) << to_string(op);
  }
}

TEST(Model, MemoryBoundPrediction) {
  const MemcModel snb{1.0, 2.0, 1.0};
  EXPECT_DOUBLE_EQ(predict_memc_cycles(Op::Add, snb), 0.5);
  EXPECT_DOUBLE_EQ(predict_memc_cycles(Op::Mul, snb), 0.5);
  EXPECT_EQ(code_of([&] { predict_memc_cycles(Op::Div, snb); }), ErrorCode::UnmodeledOp);
  EXPECT_EQ(code_of([&] { predict_memc_cycles(Op::Fma, snb); }), ErrorCode::UnmodeledOp);
  EXPECT_DOUBLE_EQ(predict_memc_cycles(Op::Add, builtin_reference(), "SandyBridge"), 0.5);
  EXPECT_EQ(code_of([&] { predict_memc_cycles(Op::Add, builtin_reference(), "Haswell"); }),
            ErrorCode::UnknownMachine);
}
