#pragma once

// Markdown / CSV / JSON rendering of result records and deviation reports.
// All functions are pure: the same input always gives byte-identical text.

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "fpcost/error.hpp"
#include "fpcost/harness.hpp"

namespace fpcost {

enum class Format { Markdown, Csv, Json };

inline std::optional<Format> parse_format(std::string_view text) {
  if (text == "md" || text == "markdown") return Format::Markdown;
  if (text == "csv") return Format::Csv;
  if (text == "json") return Format::Json;
  return std::nullopt;
}

struct RenderSpec {
  Format format = Format::Markdown;
  std::vector<std::string> columns;  // env labels; empty = in order of appearance
  int precision = 2;
  bool include_provenance = false;
  // Report full AVX instruction durations (4 scalar ops) instead of per scalar op.
  bool per_instruction = false;
};

inline std::string format_number(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", std::max(precision, 0), v);
  return buf;
}

namespace detail {

struct RowKey {
  Op op;
  OutcomeClass outcome;
  Variant variant;
  bool extrapolated;

  friend bool operator==(const RowKey&, const RowKey&) = default;
};

inline std::string cell_text(const RunRecord& r, const RenderSpec& spec) {
  if (r.error) return "ERR(" + r.error->code + ")";
  if (!r.stats) return "ERR(no-data)";
  const double scale = spec.per_instruction ? 4.0 : 1.0;
  return format_number(r.stats->median * scale, spec.precision);
}

inline std::vector<std::string> env_columns(const std::vector<RunRecord>& records, const RenderSpec& spec) {
  if (!spec.columns.empty()) return spec.columns;
  std::vector<std::string> cols;
  for (const auto& r : records) {
    const std::string label = r.cell.env.label();
    if (std::find(cols.begin(), cols.end(), label) == cols.end()) cols.push_back(label);
  }
  return cols;
}

inline std::string render_markdown(const std::vector<RunRecord>& records, const RenderSpec& spec) {
  const auto cols = env_columns(records, spec);
  std::vector<RowKey> rows;
  std::vector<std::map<std::string, const RunRecord*>> cells;
  for (const auto& r : records) {
    const RowKey key{r.cell.op, r.cell.outcome, r.cell.variant, r.cell.extrapolated};
    auto it = std::find(rows.begin(), rows.end(), key);
    if (it == rows.end()) {
      rows.push_back(key);
      cells.emplace_back();
      it = rows.end() - 1;
    }
    cells[static_cast<std::size_t>(it - rows.begin())][r.cell.env.label()] = &r;
  }

  std::string out = "| Operation | Outcome |";
  for (const auto& c : cols) out += " " + c + " |";
  out += " Kernel |\n|---|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) out += "---:|";
  out += "---|\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& k = rows[i];
    out += "| " + std::string(display_name(k.op)) + " | " + std::string(row_label(k.outcome));
    if (k.extrapolated) out += " (ext)";
    out += " |";
    for (const auto& c : cols) {
      const auto found = cells[i].find(c);
      out += " " + (found == cells[i].end() ? std::string("n/a") : cell_text(*found->second, spec)) + " |";
    }
    out += " " + std::string(kernel_label(k.variant)) + " |\n";
  }
  out += spec.per_instruction ? "\nUnit: cycles per AVX instruction (4 scalar ops).\n"
                              : "\nUnit: cycles per scalar operation.\n";

  if (spec.include_provenance) {
    const auto& first = records.front();
    out += "\nCPU: " + first.features.vendor + " " + first.features.model_name + "\n";
    out += "TSC: " + format_number(first.calibration.tsc_hz / 1e9, 4) + " GHz (" +
           std::string(to_string(first.calibration.method)) + (first.calibration.stable ? "" : ", unstable") + ")\n";
    std::vector<std::string> seen;
    for (const auto& r : records) {
      const std::string label = r.cell.env.label();
      if (std::find(seen.begin(), seen.end(), label) != seen.end() || !r.ok()) continue;
      seen.push_back(label);
      out += "MXCSR " + label + ": " + to_hex(r.mxcsr) + "\n";
    }
  }
  return out;
}

inline std::string render_csv(const std::vector<RunRecord>& records, const RenderSpec& spec) {
  const double scale = spec.per_instruction ? 4.0 : 1.0;
  std::string out = "op,outcome,variant,env,median,min,mean,stddev,samples,status";
  if (spec.include_provenance) out += ",mxcsr,cpu,tsc_hz,unstable";
  out += "\n";
  for (const auto& r : records) {
    out += std::string(to_string(r.cell.op)) + "," + std::string(to_string(r.cell.outcome)) + "," +
           std::string(to_string(r.cell.variant)) + "," + r.cell.env.label() + ",";
    if (r.ok()) {
      const auto& s = *r.stats;
      out += format_number(s.median * scale, spec.precision) + "," + format_number(s.min * scale, spec.precision) +
             "," + format_number(s.mean * scale, spec.precision) + "," +
             format_number(s.stddev * scale, spec.precision) + "," + std::to_string(s.samples.size()) + ",ok";
    } else {
      out += ",,,,0," + (r.error ? r.error->code : std::string("no-data"));
    }
    if (spec.include_provenance) {
      std::string cpu = r.features.model_name;
      std::replace(cpu.begin(), cpu.end(), ',', ' ');
      out += "," + to_hex(r.mxcsr) + "," + cpu + "," + format_number(r.calibration.tsc_hz, 0) + "," +
             (r.stats && r.stats->unstable ? "1" : "0");
    }
    out += "\n";
  }
  return out;
}

}  // namespace detail

inline std::string render(const std::vector<RunRecord>& records, const RenderSpec& spec) {
  if (records.empty()) throw Error(ErrorCode::EmptyResults, "nothing to render");
  if (spec.precision < 0) throw Error(ErrorCode::InvalidArgument, "precision must be >= 0");
  switch (spec.format) {
    case Format::Markdown: return detail::render_markdown(records, spec);
    case Format::Csv: return detail::render_csv(records, spec);
    case Format::Json: return nlohmann::json(records).dump(2) + "\n";
  }
  return {};
}

inline std::vector<RunRecord> parse_records_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<std::vector<RunRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
}

inline std::string render_deviation(const DeviationReport& report, int precision = 2) {
  auto opt = [&](const std::optional<double>& v) { return v ? format_number(*v, precision) : std::string("n/a"); };
  std::string out;
  out += report.mode == CompareMode::Absolute ? "Reference machine: " + report.machine + " (absolute + ratio)\n"
                                              : std::string("Reference: all machines, geometric mean (ratio only)\n");
  out += "Match factor: " + format_number(report.factor, 2) + "x\n";
  for (const auto& n : report.notes) out += "Note: " + n + "\n";
  out += "\n| Operation | Outcome | Env | Kernel | Measured | Reference | Measured/Ref | Penalty | Ref penalty | Verdict |\n";
  out += "|---|---|---|---|---:|---:|---:|---:|---:|---|\n";
  for (const auto& r : report.rows) {
    out += "| " + std::string(display_name(r.op)) + " | " + std::string(row_label(r.outcome)) + " | " + r.env + " | " +
           std::string(kernel_label(r.variant)) + " | " + opt(r.measured) + " | " + opt(r.reference) + " | " +
           opt(r.absolute_ratio) + " | " + opt(r.measured_penalty) + " | " + opt(r.reference_penalty) + " | " +
           std::string(to_string(r.verdict)) + " |\n";
  }
  return out;
}

// Verdict on the "about two orders of magnitude" underflow penalty.
inline std::string penalty_verdict(OutcomeClass outcome, double ratio) {
  if (outcome == OutcomeClass::FmaMulUnderflow) {
    return ratio < 1.5 ? "no penalty, consistent with reference" : "penalty observed, deviates from reference";
  }
  if (ratio >= 100.0) return "fully reproduced";
  if (ratio >= 20.0) return "consistent (>= 20x)";
  return "not reproduced";
}

inline std::string summarize(const DeviationReport& report) {
  std::string out;
  int lines = 0;
  for (Op op : kAllOps) {
    const std::vector<OutcomeClass> targets =
        op == Op::Fma ? std::vector<OutcomeClass>{OutcomeClass::FmaMulUnderflow, OutcomeClass::FmaAddUnderflow}
                      : std::vector<OutcomeClass>{OutcomeClass::Underflow};
    for (OutcomeClass outcome : targets) {
      for (const auto& r : report.rows) {
        if (r.op != op || r.outcome != outcome || r.env != "No F+D" || r.variant != Variant::RegAsm ||
            !r.measured_penalty) {
          continue;
        }
        out += std::string(display_name(op)) + " " + std::string(row_label(outcome)) +
               " penalty (No F+D): " + format_number(*r.measured_penalty, 2) + "x";
        if (r.reference_penalty) out += " (reference " + format_number(*r.reference_penalty, 2) + "x)";
        out += " - " + penalty_verdict(outcome, *r.measured_penalty) + "\n";
        ++lines;
        break;
      }
    }
  }
  if (lines == 0) return "No comparable cells: no No F+D underflow cell with a normalized baseline.\n";
  return out;
}

}  // namespace fpcost
