#include "ctrepair/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "ctrepair/parse.hpp"
#include "ctrepair/transform_ir.hpp"
#include "ctrepair/validate.hpp"

namespace ctrepair {

Module load_module(const std::string& text) { return parse_module_or_throw(text); }

Module flatten(const Module& m) {
  Module flat = keep_entry_only(inline_all(m));
  std::vector<Diag> ds = validate(flat);
  if (!ds.empty()) throw PassError(ds.front());
  return flat;
}

AnalysisResult analyze_program(const Module& m, const PipelineConfig& cfg) {
  AnalysisResult r;
  r.flattened = flatten(m);
  r.taint = propagate_taint(r.flattened);
  r.leaks = detect_leaks(r.flattened, r.taint);
  const Function& entry = *r.flattened.entry_function();
  MemoryLayout layout = MemoryLayout::build(r.flattened, entry);
  r.classification = analyze_must_hit(r.flattened, entry, layout, cfg.cache);
  r.instruction_leaks = !r.leaks.conds.empty();
  for (const LeakSite& a : r.leaks.accesses) {
    bool safe = r.classification.must_hit(a.site) ||
                r.classification.uniform(a.site);
    if (!safe) r.cache_leaks = true;
  }
  return r;
}

MitigationResult mitigate_program(const Module& m, const PipelineConfig& cfg) {
  MitigationResult r;
  Module flat = flatten(m);
  SensitivityMap taint = propagate_taint(flat);
  r.leaks_before = detect_leaks(flat, taint);

  Module repaired = branch_repair_pass(flat, taint);
  for (Function& f : repaired.functions) f = fold_ctsel(f);
  {
    std::vector<Diag> ds = validate(repaired);
    if (!ds.empty())
      throw PassError(ds.front());
  }

  auto [mitigated, plan] = lut_repair_pass(repaired, cfg.strategy, cfg.optimize,
                                           cfg.cache);
  r.plan = std::move(plan);
  for (Function& f : mitigated.functions) f = lower_ctsel(f, cfg.ctsel_mode);
  {
    std::vector<Diag> ds = validate(mitigated);
    if (!ds.empty())
      throw PassError(ds.front());
  }
  r.mitigated = std::move(mitigated);
  return r;
}

std::string corpus_dir() {
#ifdef CTREPAIR_CORPUS_DIR
  return CTREPAIR_CORPUS_DIR;
#else
  return "corpus";
#endif
}

std::vector<CorpusEntry> corpus_entries(const std::string& dir) {
  std::string base = dir.empty() ? corpus_dir() : dir;
  // Name, file, and a short description of what each benchmark exercises.
  std::vector<CorpusEntry> entries = {
      {"mu", base + "/mu.tir",
       "bit-serial transposition step of the 3-Way cipher; three "
       "key-dependent conditionals inside a 32-round loop"},
      {"subbytes", base + "/subbytes.tir",
       "AES byte substitution over a 256-byte S-box indexed by secret state"},
      {"subcell", base + "/subcell.tir",
       "LED nibble substitution over a 16-byte S-box (fits one cache line)"},
      {"rc5_rotate", base + "/rc5_rotate.tir",
       "rotate-by-secret-amount distilled from RC5, shifts done by "
       "data-dependent loops"},
      {"badbranch", base + "/badbranch.tir",
       "counted loop with two secret-dependent early exits"},
      {"keysched_bug", base + "/keysched_bug.tir",
       "AES-style key schedule that preloads its round tables but forgets "
       "one S-box"},
      {"expand_key", base + "/expand_key.tir",
       "key expansion writing a secret into one record field; the branch on "
       "the public length field stays clean"},
  };
  return entries;
}

Module load_corpus_module(const std::string& name, const std::string& dir) {
  for (const CorpusEntry& e : corpus_entries(dir)) {
    if (e.name != name) continue;
    std::ifstream in(e.path);
    if (!in) {
      Diag d;
      d.invariant = "corpus file missing";
      d.message = e.path;
      throw PassError(d);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_module(ss.str());
  }
  Diag d;
  d.invariant = "unknown corpus entry";
  d.message = name;
  throw PassError(d);
}

}  // namespace ctrepair
