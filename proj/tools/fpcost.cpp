#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fpcost/fpcost.hpp"

#ifndef FPCOST_DEFAULT_REFERENCE
#define FPCOST_DEFAULT_REFERENCE ""
#endif

using namespace fpcost;

namespace {

std::string read_file(const std::string& path) {
  if (path == "-") {
    std::ostringstream ss;
    ss << std::cin.rdbuf();
    return ss.str();
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write '" + path + "'");
  out << text;
}

// Accepts JSON Lines (the `run` output) or a JSON array (`render --format json`).
std::vector<RunRecord> load_records(const std::string& path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') return parse_records_json(text);
  return from_jsonl(text);
}

ReferenceTable load_reference_or_builtin(const std::string& path) {
  if (path.empty()) return builtin_reference();
  return load_reference(path);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::vector<std::string>& items, Parse parse, const char* what) {
  std::vector<T> out;
  for (const auto& s : items) {
    const auto v = parse(s);
    if (!v) throw Error(ErrorCode::InvalidArgument, std::string("unknown ") + what + " '" + s + "'");
    out.push_back(*v);
  }
  return out;
}

bool on_off(const std::string& v) { return v == "on" || v == "1" || v == "true"; }

struct RunOptions {
  std::vector<std::string> ops, classes, variants;
  std::string ftz, daz;
  int samples = 9, warmups = 2, retries = 3;
  int core = 0;
  bool allow_unpinned = false;
  int calibrate_ms = 200;
  bool extended = false, shuffle = false;
  std::uint64_t seed = 0;
  std::uint64_t min_ops = kDefaultMinScalarOps;
  int unroll = 4, div_unroll = 4;
  std::size_t memc_length = 256;
  std::string out;
  bool quiet = false;
};

int cmd_run(const RunOptions& o) {
  const FeatureSet& features = host_features();
  if (!features.avx) throw Error(ErrorCode::UnsupportedHost, "the kernels need AVX, which this host lacks");
  if (auto w = turbo_warning()) std::cerr << "warning: " << *w << "\n";

  MatrixOptions mopts;
  mopts.extended = o.extended;
  if (!o.ftz.empty() || !o.daz.empty()) {
    // A single env; an omitted switch follows the other one.
    const bool ftz = on_off(o.ftz.empty() ? o.daz : o.ftz);
    const bool daz = on_off(o.daz.empty() ? o.ftz : o.daz);
    mopts.envs = {FpEnvConfig{ftz, daz, true, true}};
  }
  ExperimentMatrix m = default_matrix(features, mopts);
  m = filter_matrix(std::move(m), parse_list<Op>(o.ops, parse_op, "op"),
                    parse_list<OutcomeClass>(o.classes, parse_outcome, "class"),
                    parse_list<Variant>(o.variants, parse_variant, "variant"));
  if (m.cells.empty()) throw Error(ErrorCode::InvalidArgument, "the filters select no cells");
  m.params.measure.samples = o.samples;
  m.params.measure.warmups = o.warmups;
  m.params.measure.max_retries = o.retries;
  m.params.min_scalar_ops = o.min_ops;
  m.params.unroll = o.unroll;
  m.params.div_unroll = o.div_unroll;
  m.params.memc_length = o.memc_length;
  m.seed = o.seed;
  m.shuffle = o.shuffle;
  m.validate(features);

  std::optional<AffinityHandle> pinned;
  try {
    pinned = pin_to_core(o.core);
  } catch (const Error& e) {
    if (!o.allow_unpinned) throw;
    std::cerr << "warning: running unpinned (" << e.what() << ")\n";
  }

  RunContext ctx;
  ctx.features = features;
  ctx.calibration = calibrate_tsc(std::chrono::milliseconds(o.calibrate_ms));
  if (!ctx.calibration.stable) {
    std::cerr << "warning: TSC calibration spread " << ctx.calibration.spread * 100 << "% exceeds 0.5%\n";
  }
  ctx.core_hz = current_core_hz(o.core);

  auto progress = [&](const RunRecord& r, std::size_t done, std::size_t total) {
    if (o.quiet) return;
    std::cerr << "[" << done << "/" << total << "] " << to_string(r.cell.op) << " " << to_string(r.cell.outcome)
              << " " << r.cell.env.label() << " " << kernel_label(r.cell.variant) << ": ";
    if (r.ok()) {
      std::cerr << format_number(r.stats->median, 3) << " cy/op" << (r.stats->unstable ? " (unstable)" : "");
    } else {
      std::cerr << "ERR " << r.error->message;
    }
    std::cerr << "\n";
  };
  const auto records = run_matrix(m, ctx, progress);
  if (pinned) pinned->restore();

  write_output(o.out, to_jsonl(records));
  if (!o.out.empty() && o.out != "-" && !o.quiet) std::cout << render(records, RenderSpec{});
  return 0;
}

int cmd_env_check() {
  const FeatureSet& f = host_features();
  std::cout << "vendor:        " << f.vendor << "\n"
            << "model:         " << f.model_name << "\n"
            << "avx/avx2/fma3/fma4: " << f.avx << "/" << f.avx2 << "/" << f.fma3 << "/" << f.fma4 << "\n"
            << "invariant tsc: " << f.invariant_tsc << "\n";
  if (const auto hz = nominal_core_hz()) std::cout << "nominal clock: " << format_number(*hz / 1e9, 3) << " GHz\n";
  if (const auto hz = current_core_hz(0)) std::cout << "core 0 clock:  " << format_number(*hz / 1e9, 3) << " GHz\n";
  if (const auto w = turbo_warning()) std::cout << "warning:       " << *w << "\n";
  try {
    const auto cpus = current_affinity();
    std::cout << "affinity:      " << cpus.size() << " cpu(s)\n";
  } catch (const Error& e) {
    std::cout << "affinity:      " << e.what() << "\n";
  }
  const auto cal = calibrate_tsc(std::chrono::milliseconds(100));
  std::cout << "tsc:           " << format_number(cal.tsc_hz / 1e9, 4) << " GHz (spread "
            << format_number(cal.spread * 100, 3) << "%" << (cal.stable ? "" : ", unstable") << ")\n";
  std::cout << "mxcsr:         " << to_hex(read_mxcsr()) << " (" << read_env().label() << ")\n";
  int failures = 0;
  for (const auto& cfg : {FpEnvConfig::flush(), FpEnvConfig::gradual()}) {
    const auto seen = with_env(cfg, [] { return read_mxcsr(); });
    const bool ok = env_matches(cfg, seen);
    failures += ok ? 0 : 1;
    std::cout << "apply " << cfg.label() << ": " << to_hex(seen) << (ok ? " ok" : " MISMATCH") << "\n";
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fpcost: cycles per floating-point operation by operand class"};
  app.require_subcommand(1);

  RunOptions ro;
  auto* run = app.add_subcommand("run", "measure the experiment matrix and write JSON Lines records");
  run->add_option("--ops", ro.ops, "operations (add,mul,div,fma)")->delimiter(',');
  run->add_option("--classes", ro.classes, "outcome classes (normalized,underflow,...)")->delimiter(',');
  run->add_option("--variant", ro.variants, "kernel variants (regasm,memc)")->delimiter(',');
  run->add_option("--ftz", ro.ftz, "run a single env with FTZ on|off")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--daz", ro.daz, "run a single env with DAZ on|off")->check(CLI::IsMember({"on", "off"}));
  run->add_option("--samples", ro.samples, "retained samples per cell")->check(CLI::Range(3, 1000));
  run->add_option("--warmups", ro.warmups, "discarded warm-up runs per cell")->check(CLI::Range(1, 1000));
  run->add_option("--retries", ro.retries, "repeat an unstable series up to this many times")->check(CLI::Range(1, 100));
  run->add_option("--core", ro.core, "core to pin the measurement thread to");
  run->add_flag("--allow-unpinned", ro.allow_unpinned, "continue with a warning when pinning fails");
  run->add_option("--calibrate-ms", ro.calibrate_ms, "TSC calibration window")->check(CLI::PositiveNumber);
  run->add_flag("--extended", ro.extended, "add cells outside the published table");
  run->add_flag("--shuffle", ro.shuffle, "run cells in a seeded random order");
  run->add_option("--seed", ro.seed, "operand perturbation and shuffle seed");
  run->add_option("--min-ops", ro.min_ops, "scalar operations per timed run")->check(CLI::PositiveNumber);
  run->add_option("--unroll", ro.unroll, "independent chains in the ASM kernels")->check(CLI::Range(4, 5));
  run->add_option("--div-unroll", ro.div_unroll, "independent chains in the ASM divide kernel")->check(CLI::Range(2, 5));
  run->add_option("--memc-length", ro.memc_length, "element count of the C kernel arrays");
  run->add_option("--out,-o", ro.out, "JSON Lines output file (default stdout)");
  run->add_flag("--quiet,-q", ro.quiet, "no progress output");

  std::string cmp_in, cmp_ref = FPCOST_DEFAULT_REFERENCE, cmp_machine;
  double cmp_factor = 2.0;
  int cmp_precision = 2;
  auto* compare = app.add_subcommand("compare", "compare records against reference machine costs");
  compare->add_option("--in,-i", cmp_in, "records (JSON Lines or JSON array)")->required();
  compare->add_option("--reference", cmp_ref, "reference table JSON (empty = built-in)");
  compare->add_option("--machine", cmp_machine, "reference machine for absolute comparison");
  compare->add_option("--factor", cmp_factor, "match factor for penalty ratios")->check(CLI::Range(1.0, 1000.0));
  compare->add_option("--precision", cmp_precision, "decimal places")->check(CLI::Range(0, 12));

  std::string rin, rformat = "md", rout;
  std::vector<std::string> rcolumns;
  int rprecision = 2;
  bool rprov = false, rper = false;
  auto* rend = app.add_subcommand("render", "render records as a table");
  rend->add_option("--in,-i", rin, "records (JSON Lines or JSON array)")->required();
  rend->add_option("--format,-f", rformat, "md|csv|json")->check(CLI::IsMember({"md", "markdown", "csv", "json"}));
  rend->add_option("--columns", rcolumns, "env column labels in order")->delimiter(',');
  rend->add_option("--precision", rprecision, "decimal places")->check(CLI::Range(0, 12));
  rend->add_flag("--provenance", rprov, "append CPU, TSC and MXCSR details");
  rend->add_flag("--per-instruction", rper, "cycles per AVX instruction instead of per scalar op");
  rend->add_option("--out,-o", rout, "output file (default stdout)");

  std::vector<std::string> dops;
  std::vector<std::string> dvariants;
  int dunroll = 4;
  auto* dump = app.add_subcommand("dump-kernels", "print the loop body of each kernel");
  dump->add_option("--ops", dops, "operations")->delimiter(',');
  dump->add_option("--variant", dvariants, "regasm,memc")->delimiter(',');
  dump->add_option("--unroll", dunroll, "ASM chains")->check(CLI::Range(2, 5));

  app.add_subcommand("env-check", "report CPU features, TSC and MXCSR behaviour");

  std::string xout;
  auto* xref = app.add_subcommand("export-reference", "write the built-in reference table as JSON");
  xref->add_option("--out,-o", xout, "output file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(ro);
    if (app.got_subcommand("env-check")) return cmd_env_check();
    if (compare->parsed()) {
      const auto records = load_records(cmp_in);
      const auto ref = load_reference_or_builtin(cmp_ref);
      const auto report =
          compare_reference(records, ref, cmp_machine.empty() ? std::nullopt : std::optional(cmp_machine), cmp_factor);
      std::cout << render_deviation(report, cmp_precision) << "\n" << summarize(report);
      return 0;
    }
    if (rend->parsed()) {
      RenderSpec spec;
      spec.format = *parse_format(rformat);
      spec.columns = rcolumns;
      spec.precision = rprecision;
      spec.include_provenance = rprov;
      spec.per_instruction = rper;
      write_output(rout, render(load_records(rin), spec));
      return 0;
    }
    if (dump->parsed()) {
      auto ops = parse_list<Op>(dops, parse_op, "op");
      if (ops.empty()) ops.assign(kAllOps.begin(), kAllOps.end());
      auto variants = parse_list<Variant>(dvariants, parse_variant, "variant");
      if (variants.empty()) variants = {Variant::RegAsm, Variant::MemC};
      for (Op op : ops) {
        for (Variant v : variants) {
          KernelSpec spec = v == Variant::MemC ? KernelSpec::memc(op)
                                               : KernelSpec::regasm(op, std::min(dunroll, max_unroll(op)));
          std::cout << format_listing(spec) << "\n";
        }
      }
      return 0;
    }
    if (xref->parsed()) {
      write_output(xout, dump_reference(builtin_reference()));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::UnsupportedHost ? 3 : 1;
  }
  return 0;
}
