#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ctrepair/parse.hpp"
#include "ctrepair/validate.hpp"
#include "ctrepair/print.hpp"
#include "ctrepair/report.hpp"

using namespace ctrepair;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitError = 1;
constexpr int kExitLeaks = 2;

Module read_input(const std::string& path) {
  if (path.rfind("corpus:", 0) == 0) return load_corpus_module(path.substr(7));
  std::ifstream in(path);
  if (!in) {
    Diag d;
    d.invariant = "cannot open input";
    d.message = path;
    throw PassError(d);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  ParseResult r = parse_module(ss.str());
  if (!r.ok()) {
    std::cerr << render_diags(r.diags);
    throw PassError(r.diags.front());
  }
  std::vector<Diag> ds = validate(*r.module);
  if (!ds.empty()) {
    std::cerr << render_diags(ds);
    throw PassError(ds.front());
  }
  return std::move(*r.module);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) {
    Diag d;
    d.invariant = "cannot write output";
    d.message = path;
    throw PassError(d);
  }
  out << text;
}

Inputs read_inputs(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) {
    Diag d;
    d.invariant = "cannot open inputs";
    d.message = path;
    throw PassError(d);
  }
  Json j = Json::parse(in);
  return inputs_from_json(j);
}

struct CommonOpts {
  std::string input;
  uint32_t cache_lines = 512;
  uint32_t cls = 64;
  uint64_t hit_cost = 1;
  uint64_t miss_cost = 100;
  std::string strategy = "first-iter";
  std::string ctsel_mode = "native";
  bool no_cache_opt = false;

  PipelineConfig pipeline() const {
    PipelineConfig cfg;
    cfg.cache.lines = cache_lines;
    cfg.cache.cls = cls;
    cfg.cost.hit = hit_cost;
    cfg.cost.miss = miss_cost;
    cfg.optimize = !no_cache_opt;
    auto s = strategy_from_name(strategy);
    if (!s) {
      Diag d;
      d.invariant = "unknown strategy";
      d.message = strategy;
      throw PassError(d);
    }
    cfg.strategy = *s;
    cfg.ctsel_mode =
        ctsel_mode == "bitwise" ? CtselMode::Bitwise : CtselMode::Native;
    if (ctsel_mode != "bitwise" && ctsel_mode != "native") {
      Diag d;
      d.invariant = "unknown ctsel mode";
      d.message = ctsel_mode;
      throw PassError(d);
    }
    if (!cfg.cache.valid()) {
      Diag d;
      d.invariant = "bad cache config";
      d.message = "lines must be >= 1 and cls a power of two >= 8";
      throw PassError(d);
    }
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_strategy) {
  cmd->add_option("input", o.input, "module file (or corpus:<name>)")
      ->required();
  cmd->add_option("--cache-lines", o.cache_lines, "cache line count");
  cmd->add_option("--cls", o.cls, "cache line size in bytes");
  cmd->add_option("--hit-cost", o.hit_cost, "cycles per cache hit");
  cmd->add_option("--miss-cost", o.miss_cost, "cycles per cache miss");
  if (with_strategy) {
    cmd->add_option("--strategy", o.strategy,
                    "mitigation strategy: byte|line|preload|first-iter");
    cmd->add_option("--ctsel-mode", o.ctsel_mode,
                    "select lowering: native|bitwise");
    cmd->add_flag("--no-cache-opt", o.no_cache_opt,
                  "mitigate every sensitive access; skip the cache analysis");
  }
}

int cmd_analyze(const CommonOpts& o, const std::string& json_path) {
  Module m = read_input(o.input);
  AnalysisResult r = analyze_program(m, o.pipeline());
  Json j = analysis_report_json(m, r);
  if (!json_path.empty()) write_file(json_path, j.dump(2) + "\n");
  std::cout << "leak detection for " << o.input << ":\n"
            << leak_table_text(r.leaks);
  if (r.instruction_leaks)
    std::cout << "instruction-timing leaks: " << r.leaks.conds.size()
              << " sensitive conditionals\n";
  if (r.cache_leaks)
    std::cout << "cache-timing leaks: sensitive table accesses without a "
                 "proven hit\n";
  if (r.clean()) {
    std::cout << "no timing leaks detected\n";
    return kExitClean;
  }
  return kExitLeaks;
}

int cmd_mitigate(const CommonOpts& o, const std::string& out_path,
                 const std::string& plan_path) {
  Module m = read_input(o.input);
  PipelineConfig cfg = o.pipeline();
  MitigationResult r = mitigate_program(m, cfg);
  write_file(out_path, print_module(r.mitigated));
  if (!plan_path.empty())
    write_file(plan_path, plan_json(r.mitigated, r.plan).dump(2) + "\n");
  std::cout << "mitigated " << o.input << " -> " << out_path << " (strategy "
            << strategy_name(cfg.strategy) << ", "
            << r.plan.rewritten_contexts() << " contexts rewritten, "
            << r.plan.skipped_contexts() << " skipped)\n";
  return kExitClean;
}

int cmd_simulate(const CommonOpts& o, const std::string& inputs_path,
                 const std::string& json_path, bool with_memory) {
  Module m = flatten(read_input(o.input));
  PipelineConfig cfg = o.pipeline();
  TimingTrace tr = run(m, read_inputs(inputs_path), cfg.sim());
  Json j = trace_json(tr, m, with_memory);
  if (!json_path.empty()) write_file(json_path, j.dump(2) + "\n");
  if (tr.trapped) {
    std::cerr << "trap: " << tr.trap_reason << "\n";
    return kExitError;
  }
  std::cout << "cycles=" << tr.cycles << " hits=" << tr.hits
            << " misses=" << tr.misses;
  if (tr.ret) std::cout << " ret=" << *tr.ret;
  std::cout << "\n";
  return kExitClean;
}

int cmd_check(const CommonOpts& o, const std::string& inputs_path,
              uint64_t seed, uint32_t trials, bool exhaustive,
              bool detect_only, const std::string& json_path) {
  Module m = read_input(o.input);
  PipelineConfig cfg = o.pipeline();
  cfg.seed = seed;
  cfg.trials = trials;
  Inputs pub = read_inputs(inputs_path);
  SecretSampler sampler = exhaustive
                              ? SecretSampler::exhaustive()
                              : SecretSampler::random(seed, trials);

  Module flat = flatten(m);
  LeakVerdict before = check_constant_time(flat, pub, sampler, cfg.sim());
  std::cout << "before mitigation: cycles " << before.min_cycles << ".."
            << before.max_cycles << " over " << before.trials
            << " secrets, constant_time="
            << (before.constant_time ? "true" : "false") << "\n";

  Json j;
  j["before"] = verdict_json(before);
  int rc = before.constant_time ? kExitClean : kExitLeaks;
  if (!detect_only) {
    MitigationResult mr = mitigate_program(m, cfg);
    LeakVerdict after = check_constant_time(mr.mitigated, pub, sampler, cfg.sim());
    std::cout << "after mitigation:  cycles " << after.min_cycles << ".."
              << after.max_cycles << " over " << after.trials
              << " secrets, constant_time="
              << (after.constant_time ? "true" : "false") << "\n";
    j["after"] = verdict_json(after);
    rc = after.constant_time ? rc : kExitError;
  }
  if (!json_path.empty()) write_file(json_path, j.dump(2) + "\n");
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"timing side-channel detection and repair for TIR modules"};
  app.require_subcommand(1);

  CommonOpts analyze_opts, mitigate_opts, simulate_opts, check_opts;
  std::string json_path, out_path, plan_path, inputs_path;
  bool with_memory = false;

  CLI::App* analyze = app.add_subcommand("analyze", "detect timing leaks");
  add_common(analyze, analyze_opts, false);
  analyze->add_option("--json", json_path, "write the full report as JSON");

  CLI::App* mitigate = app.add_subcommand("mitigate", "repair timing leaks");
  add_common(mitigate, mitigate_opts, true);
  mitigate->add_option("-o,--output", out_path, "mitigated module file")
      ->required();
  mitigate->add_option("--plan", plan_path, "write the mitigation plan JSON");

  CLI::App* simulate =
      app.add_subcommand("simulate", "run one input through the simulator");
  add_common(simulate, simulate_opts, false);
  std::string sim_json;
  simulate->add_option("--inputs", inputs_path, "JSON input assignment");
  simulate->add_option("--json", sim_json, "write the trace as JSON");
  simulate->add_flag("--memory", with_memory, "include final memory in JSON");

  CLI::App* check = app.add_subcommand(
      "check", "verify constant time before and after mitigation");
  add_common(check, check_opts, true);
  uint64_t seed = 1;
  uint32_t trials = 1000;
  bool exhaustive = false, detect_only = false;
  std::string check_inputs, check_json;
  check->add_option("--inputs", check_inputs, "fixed public inputs (JSON)");
  check->add_option("--seed", seed, "random sampler seed");
  check->add_option("--trials", trials, "number of secret samples");
  check->add_flag("--exhaustive", exhaustive,
                  "enumerate the whole secret space (<= 16 bits)");
  check->add_flag("--before-only", detect_only,
                  "skip mitigation; only check the input program");
  check->add_option("--json", check_json, "write both verdicts as JSON");

  CLI::App* predict = app.add_subcommand(
      "predict", "access/miss/hit counts per mitigation strategy");
  uint64_t pk = 16, pn = 256;
  uint32_t pcls = 64;
  bool predict_as_json = false;
  predict->add_option("--k", pk, "number of table accesses")->required();
  predict->add_option("--n", pn, "table size in bytes")->required();
  predict->add_option("--cls", pcls, "cache line size in bytes");
  predict->add_flag("--json", predict_as_json, "print JSON");

  CLI::App* corpus = app.add_subcommand("corpus", "bundled benchmark corpus");
  CLI::App* corpus_list = corpus->add_subcommand("list", "list entries");

  CLI11_PARSE(app, argc, argv);

  try {
    if (analyze->parsed()) return cmd_analyze(analyze_opts, json_path);
    if (mitigate->parsed()) return cmd_mitigate(mitigate_opts, out_path, plan_path);
    if (simulate->parsed())
      return cmd_simulate(simulate_opts, inputs_path, sim_json, with_memory);
    if (check->parsed())
      return cmd_check(check_opts, check_inputs, seed, trials, exhaustive,
                       detect_only, check_json);
    if (predict->parsed()) {
      if (predict_as_json)
        std::cout << predict_json(pk, pn, pcls).dump(2) << "\n";
      else
        std::cout << predict_table_text(pk, pn, pcls);
      return kExitClean;
    }
    if (corpus->parsed()) {
      if (corpus_list->parsed() || corpus->get_subcommands().empty()) {
        for (const CorpusEntry& e : corpus_entries())
          std::cout << e.name << "\t" << e.path << "\n\t" << e.description
                    << "\n";
      }
      return kExitClean;
    }
  } catch (const PassError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
