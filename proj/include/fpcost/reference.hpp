#pragma once

// Published per-operation costs of the four reference machines (SandyBridge,
// IvyBridge, Haswell, Interlagos) plus their instruction throughput/latency
// characteristics. The bundled table is the ground truth for comparisons; the
// JSON file shipped in data/ is generated from it and must round-trip exactly.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fpcost/error.hpp"
#include "fpcost/fpenv.hpp"
#include "fpcost/fpmodel.hpp"
#include "fpcost/hwinfo.hpp"
#include "fpcost/kernels.hpp"

namespace fpcost {

struct Range {
  double min = 0.0;
  double max = 0.0;

  static constexpr Range exactly(double v) { return {v, v}; }
  friend bool operator==(const Range&, const Range&) = default;
};

struct InstructionCost {
  std::string instruction;  // "avx_add", "avx_mul", "avx_div", "fma256"
  Range throughput_per_cy;
  Range latency_cy;
  std::string throughput_source;  // "vendor", "measured", "fog"
  std::string latency_source;

  friend bool operator==(const InstructionCost&, const InstructionCost&) = default;
};

struct MachineInfo {
  std::string key;
  std::string vendor;
  std::string model;
  double frequency_ghz = 0.0;
  int cores = 0;
  std::vector<std::string> isa;
  std::string add_mul_issue;  // concurrent AVX add/mul combinations per cycle
  std::vector<InstructionCost> instructions;
  std::optional<MemcModel> memc_model;

  const InstructionCost* instruction(std::string_view name) const {
    for (const auto& i : instructions) {
      if (i.instruction == name) return &i;
    }
    return nullptr;
  }

  friend bool operator==(const MachineInfo& a, const MachineInfo& b) {
    auto memc_eq = [](const std::optional<MemcModel>& x, const std::optional<MemcModel>& y) {
      if (x.has_value() != y.has_value()) return false;
      return !x || (x->load_cy == y->load_cy && x->store_cy == y->store_cy && x->arith_cy == y->arith_cy);
    };
    return a.key == b.key && a.vendor == b.vendor && a.model == b.model && a.frequency_ghz == b.frequency_ghz &&
           a.cores == b.cores && a.isa == b.isa && a.add_mul_issue == b.add_mul_issue &&
           a.instructions == b.instructions && memc_eq(a.memc_model, b.memc_model);
  }
};

struct ReferenceKey {
  std::string machine;
  Op op = Op::Add;
  OutcomeClass outcome = OutcomeClass::Normalized;
  EnvMode env = EnvMode::FtzDaz;
  Variant variant = Variant::RegAsm;

  friend bool operator==(const ReferenceKey&, const ReferenceKey&) = default;
};

struct ReferenceEntry {
  ReferenceKey key;
  double cycles = 0.0;

  friend bool operator==(const ReferenceEntry&, const ReferenceEntry&) = default;
};

struct ReferenceTable {
  static constexpr int kFormatVersion = 1;

  int version = kFormatVersion;
  std::vector<MachineInfo> machines;
  std::vector<ReferenceEntry> entries;

  const MachineInfo* machine(std::string_view key) const {
    for (const auto& m : machines) {
      if (m.key == key) return &m;
    }
    return nullptr;
  }

  std::optional<double> lookup(const ReferenceKey& key) const {
    for (const auto& e : entries) {
      if (e.key == key) return e.cycles;
    }
    return std::nullopt;
  }

  friend bool operator==(const ReferenceTable&, const ReferenceTable&) = default;
};

inline const std::vector<std::string>& reference_machines() {
  static const std::vector<std::string> keys = {"SandyBridge", "IvyBridge", "Haswell", "Interlagos"};
  return keys;
}

namespace detail {

struct TableRow {
  Op op;
  OutcomeClass outcome;
  Variant variant;
  // F+D, No F+D for SandyBridge, IvyBridge, Haswell, Interlagos; NaN = not measured.
  double values[8];
};

inline const std::vector<TableRow>& cost_rows() {
  using O = OutcomeClass;
  constexpr auto C = Variant::MemC;
  constexpr auto A = Variant::RegAsm;
  constexpr double na = NAN;
  static const std::vector<TableRow> rows = {
      {Op::Add, O::Normalized, C, {0.53, 0.53, 0.53, 0.53, 0.39, 0.39, 0.87, 0.87}},
      {Op::Add, O::Normalized, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},
      {Op::Add, O::Overflow, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},
      {Op::Add, O::Underflow, A, {0.25, 38.20, 0.25, 37.70, 0.25, 31.90, 0.26, 36.30}},
      {Op::Add, O::DenormalLhs, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},
      {Op::Add, O::DenormalRhs, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},
      {Op::Add, O::DenormalBoth, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},
      {Op::Add, O::NaNInput, A, {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.26, 0.26}},

      {Op::Mul, O::Normalized, C, {0.56, 0.56, 0.54, 0.54, 0.39, 0.39, 0.88, 0.88}},
      {Op::Mul, O::Normalized, A, {0.25, 0.25, 0.25, 0.25, 0.13, 0.13, 0.26, 0.26}},
      {Op::Mul, O::Overflow, A, {0.25, 0.25, 0.25, 0.25, 0.13, 0.13, 0.26, 0.26}},
      {Op::Mul, O::Underflow, A, {0.25, 40.00, 0.25, 39.50, 0.13, 32.70, 0.26, 36.50}},
      {Op::Mul, O::DenormalLhs, A, {0.25, 36.20, 0.25, 35.70, 0.13, 32.70, 0.26, 37.60}},
      {Op::Mul, O::DenormalRhs, A, {0.25, 36.20, 0.25, 35.70, 0.13, 32.70, 0.26, 37.60}},
      {Op::Mul, O::DenormalBoth, A, {0.25, 0.25, 0.25, 0.25, 0.13, 0.13, 0.26, 37.60}},
      {Op::Mul, O::NaNInput, A, {0.25, 0.25, 0.25, 0.25, 0.13, 0.13, 0.26, 0.26}},

      {Op::Div, O::Normalized, C, {11.10, 11.10, 7.10, 7.10, 7.08, 7.08, 4.97, 4.97}},
      {Op::Div, O::Normalized, A, {10.30, 10.30, 6.68, 6.68, 6.65, 6.65, 4.90, 4.90}},
      {Op::Div, O::Overflow, A, {11.00, 11.00, 7.01, 7.01, 7.02, 7.02, 4.90, 4.90}},
      {Op::Div, O::Underflow, A, {11.00, 71.10, 7.01, 63.30, 7.02, 56.50, 4.90, 41.40}},
      {Op::Div, O::DivByZero, A, {5.04, 5.04, 4.13, 4.13, 4.04, 4.04, 2.02, 2.02}},
      {Op::Div, O::DenormalDividend, A, {5.04, 64.30, 4.13, 57.00, 4.04, 54.00, 2.02, 42.50}},
      {Op::Div, O::DenormalDivisor, A, {5.04, 64.30, 4.13, 57.00, 4.04, 54.00, 2.02, 4.90}},
      {Op::Div, O::DenormalBoth, A, {5.04, 64.30, 4.13, 57.00, 4.04, 54.00, 2.02, 4.90}},

      {Op::Fma, O::Normalized, A, {na, na, na, na, 0.22, 0.22, 0.26, 0.26}},
      {Op::Fma, O::FmaMulOverflow, A, {na, na, na, na, 0.22, 0.22, 0.26, 0.26}},
      {Op::Fma, O::FmaAddOverflow, A, {na, na, na, na, 0.22, 0.22, 0.26, 0.26}},
      {Op::Fma, O::FmaMulUnderflow, A, {na, na, na, na, 0.22, 0.22, 0.26, 0.26}},
      {Op::Fma, O::FmaAddUnderflow, A, {na, na, na, na, 0.22, 33.50, 0.26, 36.50}},
  };
  return rows;
}

inline std::vector<MachineInfo> machine_infos() {
  auto same = [](double v) { return Range::exactly(v); };
  // Load/store costs per full AVX access are only stated for SandyBridge and IvyBridge.
  const MemcModel snb_ivb{1.0, 2.0, 1.0};
  return {
      {"SandyBridge", "Intel", "Xeon E5-2680", 2.7, 8, {"AVX"}, "1/1",
       {{"avx_add", same(1), same(3), "vendor", "vendor"},
        {"avx_mul", same(1), same(5), "vendor", "vendor"},
        {"avx_div", same(0.025), {21, 45}, "measured", "fog"}},
       snb_ivb},
      {"IvyBridge", "Intel", "Xeon E5-2660 v2", 2.2, 10, {"AVX"}, "1/1",
       {{"avx_add", same(1), same(3), "vendor", "vendor"},
        {"avx_mul", same(1), same(5), "vendor", "vendor"},
        {"avx_div", same(0.04), {20, 35}, "measured", "fog"}},
       snb_ivb},
      {"Haswell", "Intel", "Xeon E5-2695 v3", 2.3, 12, {"AVX", "AVX2", "FMA3"}, "1/1, 0/2",
       {{"avx_add", same(1), same(3), "vendor", "vendor"},
        {"avx_mul", same(2), same(5), "vendor", "vendor"},
        {"avx_div", same(0.04), {19, 35}, "measured", "fog"},
        {"fma256", same(2), same(5), "vendor", "vendor"}},
       std::nullopt},
      {"Interlagos", "AMD", "Opteron 6276", 2.3, 16, {"AVX", "FMA4"}, "1/0, 0/1",
       {{"avx_add", same(1), same(6), "vendor", "vendor"},
        {"avx_mul", same(1), same(6), "vendor", "vendor"},
        {"avx_div", {0.03, 0.11}, same(27), "fog", "vendor"},
        {"fma256", same(1), same(6), "vendor", "vendor"}},
       std::nullopt},
  };
}

}  // namespace detail

inline const ReferenceTable& builtin_reference() {
  static const ReferenceTable table = [] {
    ReferenceTable t;
    t.machines = detail::machine_infos();
    const auto& keys = reference_machines();
    for (std::size_t m = 0; m < keys.size(); ++m) {
      for (const auto& row : detail::cost_rows()) {
        for (EnvMode env : {EnvMode::FtzDaz, EnvMode::NoFtzDaz}) {
          const double v = row.values[2 * m + (env == EnvMode::FtzDaz ? 0 : 1)];
          if (std::isnan(v)) continue;
          t.entries.push_back({{keys[m], row.op, row.outcome, env, row.variant}, v});
        }
      }
    }
    return t;
  }();
  return table;
}

// ---------------------------------------------------------------------------
// JSON

inline std::optional<EnvMode> parse_env_mode(std::string_view text) {
  if (text == "F+D") return EnvMode::FtzDaz;
  if (text == "No F+D") return EnvMode::NoFtzDaz;
  return std::nullopt;
}

namespace detail {
template <typename T, typename Parse>
T parse_or_throw(const nlohmann::json& j, Parse parse, const char* what) {
  const auto text = j.get<std::string>();
  const auto v = parse(text);
  if (!v) throw Error(ErrorCode::ParseError, std::string("unknown ") + what + " '" + text + "'");
  return *v;
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const Range& r) { j = {{"min", r.min}, {"max", r.max}}; }
inline void from_json(const nlohmann::json& j, Range& r) {
  r.min = j.at("min").get<double>();
  r.max = j.at("max").get<double>();
}

inline void to_json(nlohmann::json& j, const InstructionCost& c) {
  j = {{"instruction", c.instruction},
       {"throughput_per_cy", c.throughput_per_cy},
       {"latency_cy", c.latency_cy},
       {"throughput_source", c.throughput_source},
       {"latency_source", c.latency_source}};
}
inline void from_json(const nlohmann::json& j, InstructionCost& c) {
  c.instruction = j.at("instruction").get<std::string>();
  c.throughput_per_cy = j.at("throughput_per_cy").get<Range>();
  c.latency_cy = j.at("latency_cy").get<Range>();
  c.throughput_source = j.at("throughput_source").get<std::string>();
  c.latency_source = j.at("latency_source").get<std::string>();
}

inline void to_json(nlohmann::json& j, const MachineInfo& m) {
  j = {{"key", m.key},
       {"vendor", m.vendor},
       {"model", m.model},
       {"frequency_ghz", m.frequency_ghz},
       {"cores", m.cores},
       {"isa", m.isa},
       {"add_mul_issue", m.add_mul_issue},
       {"instructions", m.instructions}};
  if (m.memc_model) {
    j["memc_model"] = {{"load_cy", m.memc_model->load_cy},
                       {"store_cy", m.memc_model->store_cy},
                       {"arith_cy", m.memc_model->arith_cy}};
  } else {
    j["memc_model"] = nullptr;
  }
}
inline void from_json(const nlohmann::json& j, MachineInfo& m) {
  m.key = j.at("key").get<std::string>();
  m.vendor = j.at("vendor").get<std::string>();
  m.model = j.at("model").get<std::string>();
  m.frequency_ghz = j.at("frequency_ghz").get<double>();
  m.cores = j.at("cores").get<int>();
  m.isa = j.at("isa").get<std::vector<std::string>>();
  m.add_mul_issue = j.at("add_mul_issue").get<std::string>();
  m.instructions = j.at("instructions").get<std::vector<InstructionCost>>();
  if (const auto& mm = j.at("memc_model"); !mm.is_null()) {
    m.memc_model = MemcModel{mm.at("load_cy").get<double>(), mm.at("store_cy").get<double>(),
                             mm.at("arith_cy").get<double>()};
  } else {
    m.memc_model.reset();
  }
}

inline void to_json(nlohmann::json& j, const ReferenceEntry& e) {
  j = {{"machine", e.key.machine},
       {"op", to_string(e.key.op)},
       {"outcome", to_string(e.key.outcome)},
       {"env", to_string(e.key.env)},
       {"variant", to_string(e.key.variant)},
       {"cycles", e.cycles}};
}
inline void from_json(const nlohmann::json& j, ReferenceEntry& e) {
  e.key.machine = j.at("machine").get<std::string>();
  e.key.op = detail::parse_or_throw<Op>(j.at("op"), parse_op, "op");
  e.key.outcome = detail::parse_or_throw<OutcomeClass>(j.at("outcome"), parse_outcome, "outcome");
  e.key.env = detail::parse_or_throw<EnvMode>(j.at("env"), parse_env_mode, "env");
  e.key.variant = detail::parse_or_throw<Variant>(j.at("variant"), parse_variant, "variant");
  e.cycles = j.at("cycles").get<double>();
}

inline void to_json(nlohmann::json& j, const ReferenceTable& t) {
  j = {{"format", "fpcost-reference"},
       {"version", t.version},
       {"unit", "cycles per scalar operation"},
       {"machines", t.machines},
       {"cycles", t.entries}};
}
inline void from_json(const nlohmann::json& j, ReferenceTable& t) {
  if (j.value("format", "") != "fpcost-reference") throw Error(ErrorCode::ParseError, "not a reference table");
  t.version = j.at("version").get<int>();
  if (t.version != ReferenceTable::kFormatVersion) {
    throw Error(ErrorCode::ParseError, "unsupported reference version " + std::to_string(t.version));
  }
  t.machines = j.at("machines").get<std::vector<MachineInfo>>();
  t.entries = j.at("cycles").get<std::vector<ReferenceEntry>>();
}

inline std::string dump_reference(const ReferenceTable& t) { return nlohmann::json(t).dump(2) + "\n"; }

inline ReferenceTable parse_reference(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<ReferenceTable>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline ReferenceTable load_reference(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_reference(ss.str());
}

// Feature flags implied by a reference machine's ISA list.
inline FeatureSet expected_features(const MachineInfo& m) {
  auto has = [&](std::string_view isa) { return std::find(m.isa.begin(), m.isa.end(), isa) != m.isa.end(); };
  FeatureSet f;
  f.vendor = m.vendor;
  f.model_name = m.model;
  f.avx = has("AVX");
  f.avx2 = has("AVX2");
  f.fma3 = has("FMA3");
  f.fma4 = has("FMA4");
  f.validate();
  return f;
}

// Load/store bound for the MemC kernel on a reference machine.
inline double predict_memc_cycles(Op op, const ReferenceTable& table, std::string_view machine) {
  const MachineInfo* m = table.machine(machine);
  if (!m) throw Error(ErrorCode::UnknownMachine, std::string(machine));
  if (!m->memc_model) throw Error(ErrorCode::UnknownMachine, "no load/store model for " + std::string(machine));
  return predict_memc_cycles(op, *m->memc_model);
}

}  // namespace fpcost
