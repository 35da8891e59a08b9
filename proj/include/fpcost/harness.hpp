#pragma once

// Experiment matrix {op x outcome x env x kernel variant}: construction,
// sequential execution on the measurement thread, result records and the
// comparison against the bundled reference costs.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "fpcost/cycleclock.hpp"
#include "fpcost/error.hpp"
#include "fpcost/fpenv.hpp"
#include "fpcost/fpmodel.hpp"
#include "fpcost/hwinfo.hpp"
#include "fpcost/kernels.hpp"
#include "fpcost/reference.hpp"

namespace fpcost {

struct Cell {
  Op op = Op::Add;
  OutcomeClass outcome = OutcomeClass::Normalized;
  FpEnvConfig env = FpEnvConfig::flush();
  Variant variant = Variant::RegAsm;
  bool extrapolated = false;  // outside the published table; no reference value

  friend bool operator==(const Cell&, const Cell&) = default;
};

struct RunParams {
  MeasureParams measure;
  std::uint64_t min_scalar_ops = kDefaultMinScalarOps;
  int unroll = 4;
  int div_unroll = 4;
  std::size_t memc_length = 256;
};

struct ExperimentMatrix {
  std::vector<Cell> cells;
  RunParams params;
  std::uint64_t seed = 0;  // lane perturbation and shuffle order
  bool shuffle = false;

  void validate(const FeatureSet& features) const {
    for (const auto& c : cells) {
      if (!is_applicable(c.op, c.outcome)) {
        throw Error(ErrorCode::InapplicableOutcome,
                    std::string(to_string(c.outcome)) + " in a " + std::string(to_string(c.op)) + " cell");
      }
      if (c.op == Op::Fma && !features.fma3) throw Error(ErrorCode::MissingFeature, "FMA cell without FMA3");
    }
  }
};

struct MatrixOptions {
  bool extended = false;
  std::vector<FpEnvConfig> envs = {FpEnvConfig::flush(), FpEnvConfig::gradual()};
};

// Rows in table order; the C kernel only appears in the normalized rows of
// Add, Mul and Div. Fma cells require FMA3, everything requires AVX.
inline ExperimentMatrix default_matrix(const FeatureSet& features, const MatrixOptions& options = {}) {
  ExperimentMatrix m;
  if (!features.avx) return m;
  for (Op op : kAllOps) {
    if (op == Op::Fma && !features.fma3) continue;
    auto add_row = [&](OutcomeClass outcome, Variant variant, bool extrapolated) {
      for (const auto& env : options.envs) m.cells.push_back({op, outcome, env, variant, extrapolated});
    };
    if (op != Op::Fma) add_row(OutcomeClass::Normalized, Variant::MemC, false);
    for (OutcomeClass outcome : reference_rows(op)) add_row(outcome, Variant::RegAsm, false);
    if (options.extended) {
      for (OutcomeClass outcome : extended_rows(op)) add_row(outcome, Variant::RegAsm, true);
    }
  }
  return m;
}

// Keeps cells matching every non-empty filter.
inline ExperimentMatrix filter_matrix(ExperimentMatrix m, const std::vector<Op>& ops,
                                      const std::vector<OutcomeClass>& outcomes, const std::vector<Variant>& variants) {
  auto keep = [&](const Cell& c) {
    auto has = [](const auto& v, const auto& x) { return v.empty() || std::find(v.begin(), v.end(), x) != v.end(); };
    return has(ops, c.op) && has(outcomes, c.outcome) && has(variants, c.variant);
  };
  std::erase_if(m.cells, [&](const Cell& c) { return !keep(c); });
  return m;
}

inline KernelSpec spec_for(const Cell& cell, const RunParams& params) {
  if (cell.variant == Variant::MemC) return KernelSpec::memc(cell.op, params.memc_length, params.min_scalar_ops);
  return KernelSpec::regasm(cell.op, cell.op == Op::Div ? params.div_unroll : params.unroll, params.min_scalar_ops);
}

struct RecordError {
  std::string code;
  std::string message;

  friend bool operator==(const RecordError&, const RecordError&) = default;
};

struct RunRecord {
  std::size_t cell_index = 0;
  std::size_t sequence = 0;  // execution position; differs from cell_index when shuffled
  Cell cell;
  KernelSpec spec;
  std::uint32_t mxcsr = 0;  // raw value in force during the kernel
  OperandSet operands;
  std::optional<MeasurementStats> stats;
  std::optional<double> core_hz;  // current core frequency, when exposed by the OS
  FeatureSet features;
  TscCalibration calibration;
  std::optional<RecordError> error;
  std::vector<std::string> notes;

  bool ok() const noexcept { return !error && stats.has_value(); }

  // Median in core cycles when the core frequency is known, else TSC cycles.
  std::optional<double> core_cycles_median() const {
    if (!stats || !core_hz || calibration.tsc_hz <= 0) return std::nullopt;
    return stats->median * (*core_hz / calibration.tsc_hz);
  }

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

struct RunContext {
  FeatureSet features;
  TscCalibration calibration;
  std::optional<double> core_hz;
};

using ProgressFn = std::function<void(const RunRecord&, std::size_t done, std::size_t total)>;

inline std::vector<std::string> cell_notes(const Cell& cell, Op op) {
  std::vector<std::string> notes;
  notes.emplace_back("all FP exceptions masked in every env mode");
  if (cell.extrapolated) notes.emplace_back("extrapolated cell: no published reference value");
  if (cell.variant == Variant::RegAsm && op == Op::Fma) {
    notes.emplace_back("each chain issues vmovapd (accumulator copy) + vfmadd231pd; the copy is included in the cost");
  }
  if ((op == Op::Add) && (cell.outcome == OutcomeClass::DenormalLhs || cell.outcome == OutcomeClass::DenormalRhs)) {
    notes.emplace_back("single-denormal addition operands are chosen so the sum is normalized");
  }
  return notes;
}

// Runs every cell in order (or shuffled) on the calling thread, which the
// caller has pinned. Per-cell failures end up in the record; only
// UnsupportedHost aborts.
inline std::vector<RunRecord> run_matrix(const ExperimentMatrix& matrix, const RunContext& ctx,
                                         const ProgressFn& progress = {}) {
  if (!host_has_mxcsr()) throw Error(ErrorCode::UnsupportedHost, "the harness requires an x86-64 host");
  std::vector<std::size_t> order(matrix.cells.size());
  std::iota(order.begin(), order.end(), 0);
  if (matrix.shuffle) {
    std::mt19937_64 rng(matrix.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<RunRecord> records;
  records.reserve(order.size());
  for (std::size_t seq = 0; seq < order.size(); ++seq) {
    const Cell& cell = matrix.cells[order[seq]];
    RunRecord rec;
    rec.cell_index = order[seq];
    rec.sequence = seq;
    rec.cell = cell;
    rec.features = ctx.features;
    rec.calibration = ctx.calibration;
    rec.core_hz = ctx.core_hz;
    rec.notes = cell_notes(cell, cell.op);
    try {
      rec.spec = spec_for(cell, matrix.params);
      rec.operands = make_operands(cell.op, cell.outcome, rec.spec.vector_length, matrix.seed);
      const OutcomeClass verified = verify_outcome(cell.op, rec.operands);
      if (verified != cell.outcome) {
        throw Error(ErrorCode::VerificationFailed,
                    "operands provoke " + std::string(to_string(verified)) + ", expected " +
                        std::string(to_string(cell.outcome)));
      }
      ScopedEnv env(cell.env);
      rec.mxcsr = read_mxcsr();
      rec.stats = measure([&] { return run_kernel(rec.spec, rec.operands, cell.env, ctx.features).sample(); },
                          matrix.params.measure);
      if (rec.stats->unstable) rec.notes.emplace_back("ClockUnstable: stddev/median above threshold after retries");
      rec.notes.emplace_back(rec.stats->overhead_subtracted ? "timer overhead subtracted"
                                                            : "timer overhead below 1% of the shortest sample");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::UnsupportedHost) throw;
      rec.stats.reset();
      rec.error = RecordError{std::string(to_string(e.code())), e.what()};
    }
    records.push_back(std::move(rec));
    if (progress) progress(records.back(), seq + 1, order.size());
  }
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.cell_index < b.cell_index; });
  return records;
}

// ---------------------------------------------------------------------------
// Reference comparison

enum class Verdict { Match, Deviation, NotComparable };

constexpr std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Match: return "match";
    case Verdict::Deviation: return "deviation";
    case Verdict::NotComparable: return "not-comparable";
  }
  return "?";
}

struct DeviationRow {
  Op op = Op::Add;
  OutcomeClass outcome = OutcomeClass::Normalized;
  std::string env;  // label
  Variant variant = Variant::RegAsm;
  std::optional<double> measured;
  std::optional<double> reference;
  std::optional<double> absolute_ratio;     // measured / reference; only with an asserted machine
  std::optional<double> measured_penalty;   // cell / same-host normalized ASM, same op and env
  std::optional<double> reference_penalty;  // the same quotient within the reference machine
  Verdict verdict = Verdict::NotComparable;
};

enum class CompareMode { Absolute, RatioOnly };

struct DeviationReport {
  std::string machine;  // empty in ratio-only mode without a machine
  CompareMode mode = CompareMode::RatioOnly;
  double factor = 2.0;
  std::vector<DeviationRow> rows;
  std::vector<std::string> notes;
};

namespace detail {

inline const RunRecord* find_baseline(const std::vector<RunRecord>& records, Op op, const FpEnvConfig& env) {
  for (const auto& r : records) {
    if (r.ok() && r.cell.op == op && r.cell.env == env && r.cell.outcome == OutcomeClass::Normalized &&
        r.cell.variant == Variant::RegAsm) {
      return &r;
    }
  }
  return nullptr;
}

inline std::optional<double> reference_penalty(const ReferenceTable& ref, const std::string& machine,
                                               const Cell& cell, EnvMode env) {
  const auto v = ref.lookup({machine, cell.op, cell.outcome, env, cell.variant});
  const auto base = ref.lookup({machine, cell.op, OutcomeClass::Normalized, env, Variant::RegAsm});
  if (!v || !base || *base <= 0) return std::nullopt;
  return *v / *base;
}

// Geometric mean of the per-machine penalty ratios that exist for this cell.
inline std::optional<double> consensus_penalty(const ReferenceTable& ref, const Cell& cell, EnvMode env) {
  double log_sum = 0.0;
  int n = 0;
  for (const auto& m : ref.machines) {
    if (const auto p = reference_penalty(ref, m.key, cell, env)) {
      log_sum += std::log(*p);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return std::exp(log_sum / n);
}

}  // namespace detail

// Penalty ratios come first: they are same-host quotients and independent of
// clock frequency. Absolute cycles are compared only against an asserted
// machine. An unknown machine falls back to ratio-only mode against the
// geometric mean of all reference machines.
inline DeviationReport compare_reference(const std::vector<RunRecord>& records, const ReferenceTable& reference,
                                         std::optional<std::string> machine = std::nullopt, double factor = 2.0) {
  DeviationReport report;
  report.factor = factor;
  if (machine && reference.machine(*machine)) {
    report.mode = CompareMode::Absolute;
    report.machine = *machine;
  } else {
    report.mode = CompareMode::RatioOnly;
    if (machine) {
      report.notes.push_back("UnknownMachine: '" + *machine + "'; comparing against the geometric mean of all machines");
    }
  }

  for (const auto& rec : records) {
    DeviationRow row;
    row.op = rec.cell.op;
    row.outcome = rec.cell.outcome;
    row.env = rec.cell.env.label();
    row.variant = rec.cell.variant;
    if (rec.ok()) row.measured = rec.stats->median;

    const auto* base = detail::find_baseline(records, rec.cell.op, rec.cell.env);
    if (row.measured && base) row.measured_penalty = *row.measured / base->stats->median;

    const auto env = mode_of(rec.cell.env);
    if (env && !rec.cell.extrapolated) {
      if (report.mode == CompareMode::Absolute) {
        row.reference = reference.lookup({report.machine, rec.cell.op, rec.cell.outcome, *env, rec.cell.variant});
        row.reference_penalty = detail::reference_penalty(reference, report.machine, rec.cell, *env);
        if (row.reference && rec.ok()) {
          const double measured = rec.core_cycles_median().value_or(*row.measured);
          row.absolute_ratio = measured / *row.reference;
        }
      } else {
        row.reference_penalty = detail::consensus_penalty(reference, rec.cell, *env);
      }
    }

    if (row.measured_penalty && row.reference_penalty && *row.reference_penalty > 0) {
      const double q = *row.measured_penalty / *row.reference_penalty;
      row.verdict = std::max(q, 1.0 / q) <= factor ? Verdict::Match : Verdict::Deviation;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON for records

inline std::string to_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016" PRIx64, v);
  return buf;
}

inline std::uint64_t from_hex(const std::string& text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used, 16);
    if (used != text.size()) throw Error(ErrorCode::ParseError, "bad hex '" + text + "'");
    return v;
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::ParseError, "bad hex '" + text + "'");
  }
}

inline void to_json(nlohmann::json& j, const Bits64& b) { j = to_hex(b.raw); }
inline void from_json(const nlohmann::json& j, Bits64& b) { b.raw = from_hex(j.get<std::string>()); }

inline void to_json(nlohmann::json& j, const FpEnvConfig& c) {
  j = {{"ftz", c.ftz}, {"daz", c.daz}, {"underflow_masked", c.underflow_masked},
       {"mask_all_exceptions", c.mask_all_exceptions}, {"label", c.label()}};
}
inline void from_json(const nlohmann::json& j, FpEnvConfig& c) {
  c.ftz = j.at("ftz").get<bool>();
  c.daz = j.at("daz").get<bool>();
  c.underflow_masked = j.at("underflow_masked").get<bool>();
  c.mask_all_exceptions = j.at("mask_all_exceptions").get<bool>();
}

inline void to_json(nlohmann::json& j, const Cell& c) {
  j = {{"op", to_string(c.op)}, {"outcome", to_string(c.outcome)}, {"env", c.env},
       {"variant", to_string(c.variant)}, {"extrapolated", c.extrapolated}};
}
inline void from_json(const nlohmann::json& j, Cell& c) {
  c.op = detail::parse_or_throw<Op>(j.at("op"), parse_op, "op");
  c.outcome = detail::parse_or_throw<OutcomeClass>(j.at("outcome"), parse_outcome, "outcome");
  c.env = j.at("env").get<FpEnvConfig>();
  c.variant = detail::parse_or_throw<Variant>(j.at("variant"), parse_variant, "variant");
  c.extrapolated = j.at("extrapolated").get<bool>();
}

inline void to_json(nlohmann::json& j, const KernelSpec& s) {
  j = {{"op", to_string(s.op)},           {"variant", to_string(s.variant)},
       {"vector_length", s.vector_length}, {"unroll", s.unroll},
       {"repetitions", s.repetitions},     {"min_scalar_ops", s.min_scalar_ops}};
}
inline void from_json(const nlohmann::json& j, KernelSpec& s) {
  s.op = detail::parse_or_throw<Op>(j.at("op"), parse_op, "op");
  s.variant = detail::parse_or_throw<Variant>(j.at("variant"), parse_variant, "variant");
  s.vector_length = j.at("vector_length").get<std::size_t>();
  s.unroll = j.at("unroll").get<int>();
  s.repetitions = j.at("repetitions").get<std::uint64_t>();
  s.min_scalar_ops = j.at("min_scalar_ops").get<std::uint64_t>();
}

inline void to_json(nlohmann::json& j, const OperandSet& o) {
  j = {{"op", to_string(o.op)}, {"expected_outcome", to_string(o.expected_outcome)},
       {"lhs", o.lhs}, {"rhs", o.rhs}, {"addend", o.addend}};
}
inline void from_json(const nlohmann::json& j, OperandSet& o) {
  o.op = detail::parse_or_throw<Op>(j.at("op"), parse_op, "op");
  o.expected_outcome = detail::parse_or_throw<OutcomeClass>(j.at("expected_outcome"), parse_outcome, "outcome");
  o.lhs = j.at("lhs").get<std::vector<Bits64>>();
  o.rhs = j.at("rhs").get<std::vector<Bits64>>();
  o.addend = j.at("addend").get<std::vector<Bits64>>();
}

inline void to_json(nlohmann::json& j, const MeasurementStats& s) {
  j = {{"samples", s.samples}, {"raw_cycles", s.raw_cycles}, {"scalar_ops", s.scalar_ops},
       {"timer_overhead", s.timer_overhead}, {"overhead_subtracted", s.overhead_subtracted},
       {"min", s.min}, {"median", s.median}, {"mean", s.mean}, {"stddev", s.stddev},
       {"warmups_discarded", s.warmups_discarded}, {"attempts", s.attempts}, {"unstable", s.unstable}};
}
inline void from_json(const nlohmann::json& j, MeasurementStats& s) {
  s.samples = j.at("samples").get<std::vector<double>>();
  s.raw_cycles = j.at("raw_cycles").get<std::vector<std::uint64_t>>();
  s.scalar_ops = j.at("scalar_ops").get<std::uint64_t>();
  s.timer_overhead = j.at("timer_overhead").get<std::uint64_t>();
  s.overhead_subtracted = j.at("overhead_subtracted").get<std::uint64_t>();
  s.min = j.at("min").get<double>();
  s.median = j.at("median").get<double>();
  s.mean = j.at("mean").get<double>();
  s.stddev = j.at("stddev").get<double>();
  s.warmups_discarded = j.at("warmups_discarded").get<int>();
  s.attempts = j.at("attempts").get<int>();
  s.unstable = j.at("unstable").get<bool>();
}

inline void to_json(nlohmann::json& j, const FeatureSet& f) {
  j = {{"vendor", f.vendor}, {"model_name", f.model_name}, {"avx", f.avx}, {"avx2", f.avx2},
       {"fma3", f.fma3}, {"fma4", f.fma4}, {"invariant_tsc", f.invariant_tsc}};
}
inline void from_json(const nlohmann::json& j, FeatureSet& f) {
  f.vendor = j.at("vendor").get<std::string>();
  f.model_name = j.at("model_name").get<std::string>();
  f.avx = j.at("avx").get<bool>();
  f.avx2 = j.at("avx2").get<bool>();
  f.fma3 = j.at("fma3").get<bool>();
  f.fma4 = j.at("fma4").get<bool>();
  f.invariant_tsc = j.at("invariant_tsc").get<bool>();
}

inline std::optional<CalibrationMethod> parse_calibration_method(std::string_view text) {
  for (auto m : {CalibrationMethod::OsClockComparison, CalibrationMethod::CpuidLeaf, CalibrationMethod::Unknown}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline void to_json(nlohmann::json& j, const TscCalibration& c) {
  j = {{"tsc_hz", c.tsc_hz}, {"nominal_core_hz", optional_json(c.nominal_core_hz)},
       {"method", to_string(c.method)}, {"spread", c.spread}, {"stable", c.stable}};
}
inline void from_json(const nlohmann::json& j, TscCalibration& c) {
  c.tsc_hz = j.at("tsc_hz").get<double>();
  c.nominal_core_hz = optional_from<double>(j, "nominal_core_hz");
  c.method = detail::parse_or_throw<CalibrationMethod>(j.at("method"), parse_calibration_method, "method");
  c.spread = j.at("spread").get<double>();
  c.stable = j.at("stable").get<bool>();
}

inline void to_json(nlohmann::json& j, const RecordError& e) { j = {{"code", e.code}, {"message", e.message}}; }
inline void from_json(const nlohmann::json& j, RecordError& e) {
  e.code = j.at("code").get<std::string>();
  e.message = j.at("message").get<std::string>();
}

inline void to_json(nlohmann::json& j, const RunRecord& r) {
  j = {{"cell_index", r.cell_index},
       {"sequence", r.sequence},
       {"cell", r.cell},
       {"spec", r.spec},
       {"mxcsr", to_hex(r.mxcsr)},
       {"operands", r.operands},
       {"stats", optional_json(r.stats)},
       {"core_hz", optional_json(r.core_hz)},
       {"features", r.features},
       {"calibration", r.calibration},
       {"error", optional_json(r.error)},
       {"notes", r.notes}};
}
inline void from_json(const nlohmann::json& j, RunRecord& r) {
  r.cell_index = j.at("cell_index").get<std::size_t>();
  r.sequence = j.at("sequence").get<std::size_t>();
  r.cell = j.at("cell").get<Cell>();
  r.spec = j.at("spec").get<KernelSpec>();
  r.mxcsr = static_cast<std::uint32_t>(from_hex(j.at("mxcsr").get<std::string>()));
  r.operands = j.at("operands").get<OperandSet>();
  r.stats = optional_from<MeasurementStats>(j, "stats");
  r.core_hz = optional_from<double>(j, "core_hz");
  r.features = j.at("features").get<FeatureSet>();
  r.calibration = j.at("calibration").get<TscCalibration>();
  r.error = optional_from<RecordError>(j, "error");
  r.notes = j.at("notes").get<std::vector<std::string>>();
}

// One compact JSON object per line.
inline std::string to_jsonl(const std::vector<RunRecord>& records) {
  std::string out;
  for (const auto& r : records) out += nlohmann::json(r).dump() + "\n";
  return out;
}

inline std::vector<RunRecord> from_jsonl(const std::string& text) {
  std::vector<RunRecord> records;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<RunRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace fpcost
