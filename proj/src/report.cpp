#include "ctrepair/report.hpp"

#include "ctrepair/diagnostics.hpp"

#include <sstream>

namespace ctrepair {

namespace {

std::string block_name(const Module& m, const SiteId& site) {
  const Function* f = m.function(site.function);
  if (!f || site.block >= static_cast<int>(f->blocks.size()))
    return std::to_string(site.block);
  return f->blocks[site.block].name;
}

const Instr* site_instr(const Module& m, const SiteId& site) {
  const Function* f = m.function(site.function);
  if (!f || site.block >= static_cast<int>(f->blocks.size())) return nullptr;
  const BasicBlock& bb = f->blocks[site.block];
  if (site.index >= static_cast<int>(bb.instrs.size())) return nullptr;
  return &bb.instrs[site.index];
}

}  // namespace

Json site_json(const Module& m, const SiteId& site) {
  Json j;
  j["function"] = site.function;
  j["block"] = block_name(m, site);
  j["index"] = site.index;
  if (const Instr* in = site_instr(m, site)) {
    j["kind"] = opcode_name(in->op);
    if (is_memory_access(in->op)) j["array"] = in->mem.str();
  }
  return j;
}

Json leak_report_json(const Module& m, const LeakReport& rep) {
  Json j;
  j["schema"] = kschema_version;
  j["totals"] = {
      {"if", rep.totals.ifs},
      {"lut", rep.totals.luts},
      {"lut_access", rep.totals.lut_accesses},
      {"sensitive_if", rep.totals.sensitive_ifs},
      {"sensitive_lut", rep.totals.sensitive_luts},
      {"sensitive_lut_access", rep.totals.sensitive_lut_accesses},
  };
  j["sensitive_conditionals"] = Json::array();
  for (const SiteId& s : rep.conds)
    j["sensitive_conditionals"].push_back(site_json(m, s));
  j["sensitive_accesses"] = Json::array();
  for (const LeakSite& s : rep.accesses) {
    Json a = site_json(m, s.site);
    a["array"] = s.array;
    a["is_table"] = s.is_table;
    a["contexts"] = s.contexts;
    j["sensitive_accesses"].push_back(std::move(a));
  }
  return j;
}

Json classification_json(const Module& m, const CacheAnalysis& a) {
  Json sites = Json::array();
  for (const auto& [site, sc] : a.sites) {
    Json s = site_json(m, site);
    s["class"] = sc.must_hit ? "must_hit" : "unknown";
    s["uniform"] = sc.uniform;
    sites.push_back(std::move(s));
  }
  Json j;
  j["schema"] = kschema_version;
  j["sites"] = std::move(sites);
  return j;
}

Json plan_json(const Module& m, const MitigationPlan& plan) {
  Json j;
  j["schema"] = kschema_version;
  j["strategy"] = strategy_name(plan.strategy);
  j["optimize"] = plan.optimize;
  j["peeled_loops"] = plan.peeled_loops;
  Json sites = Json::array();
  for (const PlanEntry& e : plan.sites) {
    Json s = site_json(m, e.site);
    s["table"] = e.table;
    s["contexts"] = e.contexts;
    s["table_lines"] = e.table_lines;
    const char* d = "";
    switch (e.decision) {
      case PlanEntry::Decision::Rewritten: d = "rewritten"; break;
      case PlanEntry::Decision::SkippedMustHit: d = "skipped_must_hit"; break;
      case PlanEntry::Decision::SkippedSingleLine: d = "skipped_single_line"; break;
      case PlanEntry::Decision::CoveredByPreload: d = "covered_by_preload"; break;
      case PlanEntry::Decision::FallbackLineAccess: d = "fallback_line"; break;
    }
    s["decision"] = d;
    sites.push_back(std::move(s));
  }
  j["sites"] = std::move(sites);
  j["summary"] = {
      {"rewritten_sites", plan.rewritten_sites()},
      {"rewritten_contexts", plan.rewritten_contexts()},
      {"skipped_sites", plan.skipped_sites()},
      {"skipped_contexts", plan.skipped_contexts()},
  };
  return j;
}

Json trace_json(const TimingTrace& tr, const Module& m, bool with_memory) {
  Json j;
  j["schema"] = kschema_version;
  j["cycles"] = tr.cycles;
  j["cpu_cycles"] = tr.cpu_cycles;
  j["hits"] = tr.hits;
  j["misses"] = tr.misses;
  j["steps"] = tr.steps;
  if (tr.ret) j["ret"] = *tr.ret;
  j["trapped"] = tr.trapped;
  if (tr.trapped) j["trap_reason"] = tr.trap_reason;
  Json sites = Json::array();
  for (const auto& [site, tally] : tr.site_tallies) {
    Json s = site_json(m, site);
    s["hits"] = tally.hits;
    s["misses"] = tally.misses;
    sites.push_back(std::move(s));
  }
  j["site_tallies"] = std::move(sites);
  j["blocks_executed"] = tr.block_seq.size();
  if (with_memory) {
    Json mem;
    for (const auto& [name, vals] : tr.array_memory) mem[name] = vals;
    for (const auto& [name, fields] : tr.record_memory) {
      Json rec;
      for (const auto& [fname, vals] : fields) rec[fname] = vals;
      mem[name] = std::move(rec);
    }
    j["memory"] = std::move(mem);
  }
  return j;
}

Json verdict_json(const LeakVerdict& v) {
  Json j;
  j["schema"] = kschema_version;
  j["constant_time"] = v.constant_time;
  j["max_cycle_delta"] = v.max_cycle_delta;
  j["min_cycles"] = v.min_cycles;
  j["max_cycles"] = v.max_cycles;
  j["trials"] = v.trials;
  j["block_seqs_equal"] = v.block_seqs_equal;
  j["site_tallies_equal"] = v.site_tallies_equal;
  if (v.witness) {
    j["witness"] = {{"secrets_low", inputs_to_json(v.witness->first)},
                    {"secrets_high", inputs_to_json(v.witness->second)}};
  }
  return j;
}

Json analysis_report_json(const Module& m, const AnalysisResult& r) {
  Json j = leak_report_json(r.flattened, r.leaks);
  j["classification"] = classification_json(r.flattened, r.classification);
  j["instruction_leaks"] = r.instruction_leaks;
  j["cache_leaks"] = r.cache_leaks;
  (void)m;
  return j;
}

Json predict_json(uint64_t k, uint64_t n, uint32_t cls) {
  Json j;
  j["schema"] = kschema_version;
  j["k"] = k;
  j["n"] = n;
  j["cls"] = cls;
  j["m"] = (n + cls - 1) / cls;
  OriginalPrediction o = predict_original(k, n, cls);
  j["original"] = {{"accesses", o.accesses},
                   {"misses_min", o.misses_min},
                   {"misses_max", o.misses_max},
                   {"hits_min", o.hits_min},
                   {"hits_max", o.hits_max}};
  for (Strategy s : {Strategy::ByteAccess, Strategy::LineAccess,
                     Strategy::PreloadAll, Strategy::PreloadFirstIter}) {
    OverheadPrediction p = predict_overhead(k, n, cls, s);
    j[strategy_name(s)] = {
        {"accesses", p.accesses}, {"misses", p.misses}, {"hits", p.hits}};
  }
  return j;
}

std::string leak_table_text(const LeakReport& rep) {
  std::ostringstream os;
  os << "              total   sensitive\n";
  os << "  IF          " << rep.totals.ifs << "       " << rep.totals.sensitive_ifs
     << "\n";
  os << "  LUT         " << rep.totals.luts << "       "
     << rep.totals.sensitive_luts << "\n";
  os << "  LUT-access  " << rep.totals.lut_accesses << "       "
     << rep.totals.sensitive_lut_accesses << "\n";
  return os.str();
}

std::string predict_table_text(uint64_t k, uint64_t n, uint32_t cls) {
  uint64_t m = (n + cls - 1) / cls;
  std::ostringstream os;
  os << "K=" << k << " N=" << n << " CLS=" << cls << " M=" << m << "\n";
  os << "  version      accesses  misses  hits\n";
  OriginalPrediction o = predict_original(k, n, cls);
  os << "  original     " << o.accesses << "  " << o.misses_max << ".."
     << o.misses_min << "  " << o.hits_min << ".." << o.hits_max << "\n";
  for (Strategy s : {Strategy::ByteAccess, Strategy::LineAccess,
                     Strategy::PreloadAll, Strategy::PreloadFirstIter}) {
    OverheadPrediction p = predict_overhead(k, n, cls, s);
    os << "  " << strategy_name(s) << "  " << p.accesses << "  " << p.misses
       << "  " << p.hits << "\n";
  }
  return os.str();
}

Inputs inputs_from_json(const Json& j) {
  Inputs in;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const Json& v = it.value();
    if (v.is_number_integer() || v.is_number_unsigned()) {
      in.scalars[it.key()] = v.get<int64_t>();
    } else if (v.is_array()) {
      std::vector<uint64_t> vals;
      for (const Json& x : v) vals.push_back(static_cast<uint64_t>(x.get<int64_t>()));
      in.arrays[it.key()] = std::move(vals);
    } else if (v.is_object()) {
      std::map<std::string, std::vector<uint64_t>> rec;
      for (auto fit = v.begin(); fit != v.end(); ++fit) {
        std::vector<uint64_t> vals;
        if (fit.value().is_array())
          for (const Json& x : fit.value())
            vals.push_back(static_cast<uint64_t>(x.get<int64_t>()));
        else
          vals.push_back(static_cast<uint64_t>(fit.value().get<int64_t>()));
        rec[fit.key()] = std::move(vals);
      }
      in.records[it.key()] = std::move(rec);
    } else {
      Diag d;
      d.invariant = "bad input value";
      d.message = "parameter '" + it.key() + "' must be int, array, or object";
      throw PassError(d);
    }
  }
  return in;
}

Json inputs_to_json(const Inputs& in) {
  Json j = Json::object();
  for (const auto& [k, v] : in.scalars) j[k] = v;
  for (const auto& [k, v] : in.arrays) j[k] = v;
  for (const auto& [k, rec] : in.records) {
    Json r;
    for (const auto& [fk, fv] : rec) r[fk] = fv;
    j[k] = std::move(r);
  }
  return j;
}

}  // namespace ctrepair
