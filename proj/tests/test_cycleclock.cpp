#include <gtest/gtest.h>

#include <random>

#include "fpcost/cycleclock.hpp"
#include "fpcost/harness.hpp"
#include "fpcost/kernels.hpp"

using namespace fpcost;

namespace {

// Replays a fixed list of raw counts, cycling.
struct Replay {
  std::vector<std::uint64_t> raw;
  std::uint64_t ops = 1000;
  std::size_t calls = 0;
  CycleSample operator()() { return {raw[calls++ % raw.size()], ops}; }
};

}  // namespace

TEST(Counter, StopNotBeforeStart) {
  if (!host_has_mxcsr()) GTEST_SKIP() << "hardware-gated";
  for (int i = 0; i < 1000; ++i) {
    const auto a = counter_start();
    const auto b = counter_stop();
    ASSERT_GE(b, a);
  }
}

TEST(Measure, MinimalSeries) {
  Replay r{{100000, 100000, 100000, 100000}};
  MeasureParams p;
  p.samples = 3;
  p.warmups = 1;
  const auto s = measure(std::ref(r), p);
  EXPECT_EQ(s.samples.size(), 3u);
  EXPECT_EQ(s.warmups_discarded, 1);
  EXPECT_EQ(r.calls, 4u);
  EXPECT_EQ(s.attempts, 1);
  EXPECT_FALSE(s.unstable);
}

TEST(Measure, RejectsTooFewSamplesOrWarmups) {
  Replay r{{1000}};
  MeasureParams p;
  p.samples = 2;
  EXPECT_THROW(measure(std::ref(r), p), Error);
  p.samples = 3;
  p.warmups = 0;
  EXPECT_THROW(measure(std::ref(r), p), Error);
}

TEST(Measure, WarmupValuesAreDiscarded) {
  // The first call is huge; with one warm-up it must not show up.
  Replay r{{99'000'000, 100000, 100000, 100000}};
  MeasureParams p;
  p.samples = 3;
  p.warmups = 1;
  const auto s = measure(std::ref(r), p);
  for (auto raw : s.raw_cycles) EXPECT_EQ(raw, 100000u);
}

TEST(Measure, NoisySeriesIsRetriedThenFlagged) {
  Replay r{{100000, 100000, 300000, 50000}};
  MeasureParams p;
  p.samples = 4;
  p.warmups = 1;
  p.max_retries = 3;
  const auto s = measure(std::ref(r), p);
  EXPECT_TRUE(s.unstable);
  EXPECT_EQ(s.attempts, 3);
  EXPECT_EQ(r.calls, 15u);
}

TEST(Stats, OrderInvariants) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::uint64_t> raw(3 + rng() % 20);
    for (auto& x : raw) x = 1000 + rng() % 1'000'000;
    const auto s = compute_stats(raw, 1 + rng() % 10000, 0, 0, 1);
    ASSERT_LE(s.min, s.median);
    ASSERT_LE(s.median, s.mean + s.stddev + 1e-12);
    ASSERT_GE(s.stddev, 0.0);
    ASSERT_EQ(s.samples.size(), raw.size());
  }
}

TEST(Stats, KnownValues) {
  const auto s = compute_stats({400, 200, 300, 100}, 100, 50, 0, 2);
  EXPECT_DOUBLE_EQ(s.min, 1.0);
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_DOUBLE_EQ(s.stddev, std::sqrt(1.25));
  const auto sub = compute_stats({400, 200, 300}, 100, 50, 50, 2);
  EXPECT_DOUBLE_EQ(sub.median, 2.5);
}

TEST(Stats, RecomputationIsBitExact) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::uint64_t> raw(3 + rng() % 12);
    for (auto& x : raw) x = 1 + rng() % 1'000'000'000;
    const auto s = compute_stats(raw, 1 + rng() % 100000, 17, trial % 2 ? 0 : 1, 2);
    const auto j = nlohmann::json(s);
    const auto back = j.get<MeasurementStats>();
    const auto again =
        compute_stats(back.raw_cycles, back.scalar_ops, back.timer_overhead, back.overhead_subtracted,
                      back.warmups_discarded);
    ASSERT_EQ(again, back);
    ASSERT_EQ(again, s);
  }
}

TEST(Measure, OverheadNegligibleForRealKernel) {
  if (!host_features().avx) GTEST_SKIP() << "hardware-gated";
  const auto spec = KernelSpec::regasm(Op::Add, 4, 1'000'000);
  const auto ops = make_operands(Op::Add, OutcomeClass::Normalized, spec.vector_length);
  MeasureParams p;
  p.samples = 5;
  p.warmups = 1;
  const auto s = with_env(FpEnvConfig::gradual(), [&] {
    return measure([&] { return run_kernel(spec, ops, FpEnvConfig::gradual()).sample(); }, p);
  });
  const auto shortest = *std::min_element(s.raw_cycles.begin(), s.raw_cycles.end());
  EXPECT_LT(static_cast<double>(s.timer_overhead), 0.01 * static_cast<double>(shortest));
  EXPECT_EQ(s.overhead_subtracted, 0u);
  EXPECT_EQ(s.scalar_ops, spec.scalar_ops());
}
