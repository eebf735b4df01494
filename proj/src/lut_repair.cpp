#include "ctrepair/lut_repair.hpp"

#include <algorithm>
#include <set>

#include "ctrepair/cfg.hpp"
#include "ctrepair/loops.hpp"
#include "ctrepair/must_hit.hpp"
#include "ctrepair/transform_ir.hpp"
#include "ctrepair/validate.hpp"

namespace ctrepair {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::ByteAccess: return "byte";
    case Strategy::LineAccess: return "line";
    case Strategy::PreloadAll: return "preload";
    case Strategy::PreloadFirstIter: return "first-iter";
  }
  return "?";
}

std::optional<Strategy> strategy_from_name(const std::string& s) {
  if (s == "byte") return Strategy::ByteAccess;
  if (s == "line") return Strategy::LineAccess;
  if (s == "preload") return Strategy::PreloadAll;
  if (s == "first-iter") return Strategy::PreloadFirstIter;
  return std::nullopt;
}

OverheadPrediction predict_overhead(uint64_t k, uint64_t n_bytes, uint32_t cls,
                                    Strategy strategy) {
  uint64_t m = (n_bytes + cls - 1) / cls;
  OverheadPrediction p;
  switch (strategy) {
    case Strategy::ByteAccess:
      p.accesses = k * n_bytes;
      p.misses = m;
      break;
    case Strategy::LineAccess:
      p.accesses = k * m;
      p.misses = m;
      break;
    case Strategy::PreloadAll:
      p.accesses = k + m;
      p.misses = m;
      break;
    case Strategy::PreloadFirstIter:
      p.accesses = k + m - 1;
      p.misses = m;
      break;
  }
  p.hits = p.accesses - p.misses;
  return p;
}

OriginalPrediction predict_original(uint64_t k, uint64_t n_bytes, uint32_t cls) {
  uint64_t m = (n_bytes + cls - 1) / cls;
  OriginalPrediction p;
  p.accesses = k;
  p.misses_min = k == 0 ? 0 : 1;
  p.misses_max = std::min(m, k);
  p.hits_min = k - p.misses_max;
  p.hits_max = k - p.misses_min;
  return p;
}

uint64_t MitigationPlan::rewritten_sites() const {
  uint64_t n = 0;
  for (const PlanEntry& e : sites)
    n += e.decision == PlanEntry::Decision::Rewritten ||
         e.decision == PlanEntry::Decision::FallbackLineAccess;
  return n;
}

uint64_t MitigationPlan::rewritten_contexts() const {
  uint64_t n = 0;
  for (const PlanEntry& e : sites)
    if (e.decision == PlanEntry::Decision::Rewritten ||
        e.decision == PlanEntry::Decision::FallbackLineAccess)
      n += e.contexts;
  return n;
}

uint64_t MitigationPlan::skipped_sites() const {
  uint64_t n = 0;
  for (const PlanEntry& e : sites)
    n += e.decision == PlanEntry::Decision::SkippedMustHit ||
         e.decision == PlanEntry::Decision::SkippedSingleLine;
  return n;
}

uint64_t MitigationPlan::skipped_contexts() const {
  uint64_t n = 0;
  for (const PlanEntry& e : sites)
    if (e.decision == PlanEntry::Decision::SkippedMustHit ||
        e.decision == PlanEntry::Decision::SkippedSingleLine)
      n += e.contexts;
  return n;
}

namespace {

Diag make_diag(const std::string& where, const std::string& invariant,
               const std::string& message) {
  Diag d;
  d.where = where;
  d.invariant = invariant;
  d.message = message;
  return d;
}

struct TableInfo {
  Type elem;
  uint64_t length;
};

TableInfo table_info(const Module& m, const Function& f, const MemRef& mem) {
  auto sig = resolve_array_ref(m, f, mem);
  if (!sig)
    throw PassError(make_diag(f.name, "unknown array", mem.str()));
  return {sig->elem, sig->length};
}

std::map<std::string, Type> reg_types(const Function& f) {
  std::map<std::string, Type> t;
  for (const Param& p : f.params)
    if (p.kind == Param::Kind::Scalar) t[p.name] = p.elem;
  for (const BasicBlock& bb : f.blocks)
    for (const Instr& in : bb.instrs)
      if (in.has_dst()) t[in.dst] = in.type;
  return t;
}

Instr make_load(const MemRef& mem, Type elem, std::string dst, Operand idx) {
  Instr in;
  in.op = Opcode::Load;
  in.mem = mem;
  in.type = elem;
  in.dst = std::move(dst);
  in.args = {std::move(idx)};
  return in;
}

Instr make_icmp_eq(Type t, std::string dst, Operand a, Operand b) {
  Instr in;
  in.op = Opcode::ICmp;
  in.pred = CmpPred::Eq;
  in.type = Type::I1;
  in.dst = std::move(dst);
  in.args = {std::move(a), std::move(b)};
  (void)t;
  return in;
}

Instr make_ctsel(Type t, std::string dst, Operand c, Operand tv, Operand ev) {
  Instr in;
  in.op = Opcode::CtSel;
  in.type = t;
  in.dst = std::move(dst);
  in.args = {std::move(c), std::move(tv), std::move(ev)};
  return in;
}

Instr make_const(Type t, std::string dst, uint64_t v) {
  Instr in;
  in.op = Opcode::Const;
  in.type = t;
  in.dst = std::move(dst);
  in.args = {Operand::make_imm(v)};
  return in;
}

Instr make_binop(Opcode op, Type t, std::string dst, Operand a, Operand b) {
  Instr in;
  in.op = op;
  in.type = t;
  in.dst = std::move(dst);
  in.args = {std::move(a), std::move(b)};
  return in;
}

// Registers produced by sweeps this pass emitted; such loads are uniform by
// construction and are never themselves rewritten.
using SyntheticRegs = std::set<std::string>;

// Replace the instruction at `site` with `replacement` instructions; when
// the original defined a register, `result` carries the substitute value.
void splice_site(Function& f, const SiteId& site, std::vector<Instr> replacement,
                 const std::optional<Operand>& result) {
  BasicBlock& bb = f.blocks[site.block];
  Instr orig = bb.instrs[site.index];
  bb.instrs.erase(bb.instrs.begin() + site.index);
  bb.instrs.insert(bb.instrs.begin() + site.index, replacement.begin(),
                   replacement.end());
  if (orig.has_dst() && result) replace_all_uses(f, orig.dst, *result);
}

// ---- the sweeps ----

Function byte_sweep(const Module& m, const Function& fin, const SiteId& site,
                    SyntheticRegs* synthetic) {
  Function f = fin;
  const Instr in = f.blocks[site.block].instrs[site.index];
  TableInfo ti = table_info(m, f, in.mem);
  if (!in.args[0].is_reg())
    throw PassError(make_diag(f.name, "rewrite inapplicable",
                              "constant index needs no mitigation"));
  NameGen names(f);
  auto types = reg_types(f);
  Operand idx = in.args[0];
  Type idx_type = types.count(idx.reg) ? types[idx.reg] : Type::I64;
  (void)idx_type;

  std::vector<Instr> body;
  if (in.op == Opcode::Load) {
    std::string acc = names.fresh_reg();
    body.push_back(make_const(ti.elem, acc, 0));
    for (uint64_t j = 0; j < ti.length; ++j) {
      std::string l = names.fresh_reg(), c = names.fresh_reg(),
                  nx = names.fresh_reg();
      if (synthetic) synthetic->insert(l);
      body.push_back(make_load(in.mem, ti.elem, l, Operand::make_imm(j)));
      body.push_back(make_icmp_eq(ti.elem, c, idx, Operand::make_imm(j)));
      body.push_back(make_ctsel(ti.elem, nx, Operand::make_reg(c),
                                Operand::make_reg(l), Operand::make_reg(acc)));
      acc = nx;
    }
    Function out = f;
    splice_site(out, site, std::move(body), Operand::make_reg(acc));
    return out;
  }
  // Store site: read every element, conditionally replace, write back.
  Operand value = in.args[1];
  for (uint64_t j = 0; j < ti.length; ++j) {
    std::string l = names.fresh_reg(), c = names.fresh_reg(),
                nv = names.fresh_reg();
    if (synthetic) {
      synthetic->insert(l);
      synthetic->insert(nv);
    }
    body.push_back(make_load(in.mem, ti.elem, l, Operand::make_imm(j)));
    body.push_back(make_icmp_eq(ti.elem, c, idx, Operand::make_imm(j)));
    body.push_back(make_ctsel(ti.elem, nv, Operand::make_reg(c), value,
                              Operand::make_reg(l)));
    Instr st;
    st.op = Opcode::Store;
    st.mem = in.mem;
    st.type = ti.elem;
    st.args = {Operand::make_imm(j), Operand::make_reg(nv)};
    body.push_back(std::move(st));
  }
  Function out = f;
  splice_site(out, site, std::move(body), std::nullopt);
  return out;
}

Function line_sweep(const Module& m, const Function& fin, const SiteId& site,
                    const CacheConfig& cache, SyntheticRegs* synthetic) {
  Function f = fin;
  const Instr in = f.blocks[site.block].instrs[site.index];
  TableInfo ti = table_info(m, f, in.mem);
  if (!in.args[0].is_reg())
    throw PassError(make_diag(f.name, "rewrite inapplicable",
                              "constant index needs no mitigation"));
  uint64_t ew = byte_width(ti.elem);
  uint64_t line_elems = cache.cls / ew;
  uint64_t lines = (ti.length + line_elems - 1) / line_elems;
  NameGen names(f);
  auto types = reg_types(f);
  Operand idx = in.args[0];
  Type idx_type = types.count(idx.reg) ? types[idx.reg] : Type::I64;

  std::vector<Instr> body;
  std::string jb = names.fresh_reg();
  body.push_back(make_binop(Opcode::And, idx_type, jb, idx,
                            Operand::make_imm(line_elems - 1)));
  auto line_index = [&](uint64_t s) -> Operand {
    if (s == 0) return Operand::make_reg(jb);
    std::string js = names.fresh_reg();
    body.push_back(make_binop(Opcode::Or, idx_type, js, Operand::make_reg(jb),
                              Operand::make_imm(s * line_elems)));
    Operand j = Operand::make_reg(js);
    if (s + 1 == lines && ti.length % line_elems != 0) {
      // Partial last line: clamp the probe into bounds. The clamped read
      // still touches the last line and never equals a foreign index.
      std::string cb = names.fresh_reg(), jc = names.fresh_reg();
      Instr cmp;
      cmp.op = Opcode::ICmp;
      cmp.pred = CmpPred::Ult;
      cmp.type = Type::I1;
      cmp.dst = cb;
      cmp.args = {j, Operand::make_imm(ti.length)};
      body.push_back(std::move(cmp));
      body.push_back(make_ctsel(idx_type, jc, Operand::make_reg(cb), j,
                                Operand::make_imm(ti.length - 1)));
      j = Operand::make_reg(jc);
    }
    return j;
  };

  if (in.op == Opcode::Load) {
    std::string acc = names.fresh_reg();
    body.push_back(make_const(ti.elem, acc, 0));
    for (uint64_t s = 0; s < lines; ++s) {
      Operand j = line_index(s);
      std::string l = names.fresh_reg(), c = names.fresh_reg(),
                  nx = names.fresh_reg();
      if (synthetic) synthetic->insert(l);
      body.push_back(make_load(in.mem, ti.elem, l, j));
      body.push_back(make_icmp_eq(ti.elem, c, idx, j));
      body.push_back(make_ctsel(ti.elem, nx, Operand::make_reg(c),
                                Operand::make_reg(l), Operand::make_reg(acc)));
      acc = nx;
    }
    Function out = f;
    splice_site(out, site, std::move(body), Operand::make_reg(acc));
    return out;
  }
  Operand value = in.args[1];
  for (uint64_t s = 0; s < lines; ++s) {
    Operand j = line_index(s);
    std::string l = names.fresh_reg(), c = names.fresh_reg(),
                nv = names.fresh_reg();
    if (synthetic) {
      synthetic->insert(l);
      synthetic->insert(nv);
    }
    body.push_back(make_load(in.mem, ti.elem, l, j));
    body.push_back(make_icmp_eq(ti.elem, c, idx, j));
    body.push_back(make_ctsel(ti.elem, nv, Operand::make_reg(c), value,
                              Operand::make_reg(l)));
    Instr st;
    st.op = Opcode::Store;
    st.mem = in.mem;
    st.type = ti.elem;
    st.args = {j, Operand::make_reg(nv)};
    body.push_back(std::move(st));
  }
  Function out = f;
  splice_site(out, site, std::move(body), std::nullopt);
  return out;
}

Function preload_entry(const Module& m, const Function& fin,
                       const std::string& table, const CacheConfig& cache,
                       SyntheticRegs* synthetic) {
  Function f = fin;
  MemRef mem;
  auto dot = table.find('.');
  mem.base = dot == std::string::npos ? table : table.substr(0, dot);
  if (dot != std::string::npos) mem.field = table.substr(dot + 1);
  TableInfo ti = table_info(m, f, mem);
  uint64_t line_elems = cache.cls / byte_width(ti.elem);
  uint64_t lines = (ti.length + line_elems - 1) / line_elems;
  NameGen names(f);
  std::vector<Instr> sweep;
  for (uint64_t s = 0; s < lines; ++s) {
    std::string l = names.fresh_reg();
    if (synthetic) synthetic->insert(l);
    sweep.push_back(
        make_load(mem, ti.elem, l, Operand::make_imm(s * line_elems)));
  }
  BasicBlock& entry = f.blocks[0];
  entry.instrs.insert(entry.instrs.begin(), sweep.begin(), sweep.end());
  return f;
}

// Sensitive table-access sites of `f` in program order, with classification.
struct SensitiveSite {
  SiteId site;
  std::string table;
  uint64_t contexts = 1;
  uint64_t table_lines = 1;
  bool must_hit = false;
  bool uniform = false;
  bool synthetic = false;
};

std::vector<SensitiveSite> sensitive_sites(const Module& m, const Function& f,
                                           const CacheConfig& cache,
                                           bool with_analysis,
                                           const SyntheticRegs& synthetic) {
  Module tmp = m;
  if (Function* slot = tmp.function(f.name)) *slot = f;
  std::vector<Diag> ds = validate(tmp);
  if (!ds.empty())
    throw PassError(make_diag(f.name, "internal transform error", ds[0].str()));
  SensitivityMap taint = propagate_taint(tmp);
  const Function& fv = *tmp.function(f.name);

  MemoryLayout layout = MemoryLayout::build(tmp, fv);
  CacheAnalysis analysis;
  auto intervals = compute_intervals(fv);
  if (with_analysis) analysis = analyze_must_hit(tmp, fv, layout, cache);

  LoopInfo li = analyze_loops(fv);

  std::vector<SensitiveSite> out;
  for (size_t b = 0; b < fv.blocks.size(); ++b) {
    for (size_t i = 0; i < fv.blocks[b].instrs.size(); ++i) {
      const Instr& in = fv.blocks[b].instrs[i];
      if (in.op != Opcode::Load && in.op != Opcode::Store) continue;
      if (!taint.operand_tainted(fv.name, in.args[0])) continue;
      SensitiveSite s;
      s.site = SiteId{fv.name, static_cast<int>(b), static_cast<int>(i)};
      s.table = in.mem.str();
      s.contexts = li.context_count(static_cast<int>(b)).value_or(1);
      auto sig = resolve_array_ref(tmp, fv, in.mem);
      if (sig) {
        uint64_t bytes = sig->length * byte_width(sig->elem);
        s.table_lines = (bytes + cache.cls - 1) / cache.cls;
      }
      auto ev = classify_access(layout, fv, in, intervals, cache);
      s.uniform = ev && ev->kind == AccessEvent::Kind::Deterministic;
      if (with_analysis) s.must_hit = analysis.must_hit(s.site);
      if (in.op == Opcode::Load)
        s.synthetic = synthetic.count(in.dst) != 0;
      else
        s.synthetic = in.args[1].is_reg() && synthetic.count(in.args[1].reg) != 0;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

Function rewrite_byte_access(const Module& m, const Function& f,
                             const SiteId& site) {
  return byte_sweep(m, f, site, nullptr);
}

Function rewrite_line_access(const Module& m, const Function& f,
                             const SiteId& site, const CacheConfig& cache) {
  return line_sweep(m, f, site, cache, nullptr);
}

Function rewrite_preload(const Module& m, const Function& fin,
                         const std::string& table, PreloadWhere where,
                         const CacheConfig& cache) {
  if (where == PreloadWhere::FunctionEntry)
    return preload_entry(m, fin, table, cache, nullptr);
  // First iteration: peel the loop around the first access of `table` and
  // fuse a line sweep into the peeled copy of that access.
  Function f = fin;
  for (size_t b = 0; b < f.blocks.size(); ++b)
    for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
      const Instr& in = f.blocks[b].instrs[i];
      if (in.op != Opcode::Load || in.mem.str() != table) continue;
      std::string block_name = f.blocks[b].name;
      std::string clone;
      try {
        clone = peel_loop_containing(f, block_name);
      } catch (const PassError&) {
        return preload_entry(m, fin, table, cache, nullptr);
      }
      // The peeled twin holds the same instruction at a possibly shifted
      // index; find the first load of the table in the clone.
      int cb = f.block_index(clone);
      for (size_t ci = 0; ci < f.blocks[cb].instrs.size(); ++ci) {
        const Instr& cin = f.blocks[cb].instrs[ci];
        if (cin.op == Opcode::Load && cin.mem.str() == table &&
            cin.args[0].is_reg())
          return line_sweep(m, f,
                            SiteId{f.name, cb, static_cast<int>(ci)}, cache,
                            nullptr);
      }
      return preload_entry(m, fin, table, cache, nullptr);
    }
  return f;
}

std::pair<Module, MitigationPlan> lut_repair_pass(const Module& m,
                                                  Strategy strategy, bool optimize,
                                                  const CacheConfig& cache) {
  Module out = m;
  MitigationPlan plan;
  plan.strategy = strategy;
  plan.optimize = optimize;

  for (Function& f : out.functions) {
    SyntheticRegs synthetic;

    // PreloadFirstIter: peel every statically bounded loop holding a
    // sensitive multi-line table access, so the first iteration becomes its
    // own mitigation context.
    if (strategy == Strategy::PreloadFirstIter) {
      bool peeled = true;
      while (peeled) {
        peeled = false;
        auto sites = sensitive_sites(out, f, cache, false, synthetic);
        LoopInfo li = analyze_loops(f);
        for (const SensitiveSite& s : sites) {
          if (s.uniform || s.synthetic || s.table_lines <= 1) continue;
          auto ctx = li.context_count(s.site.block);
          if (!ctx || *ctx <= 1) continue;  // not in a (bounded) loop
          std::string header;
          try {
            std::string block_name = f.blocks[s.site.block].name;
            int bidx = s.site.block;
            const Loop* innermost = nullptr;
            for (const Loop& l : li.loops)
              if (l.contains(bidx) &&
                  (!innermost || l.body.size() < innermost->body.size()))
                innermost = &l;
            if (!innermost || !innermost->trip_bound ||
                *innermost->trip_bound < 2)
              continue;
            header = f.blocks[innermost->header].name;
            peel_loop_containing(f, block_name);
            plan.peeled_loops.push_back(f.name + ":" + header);
            peeled = true;
            break;
          } catch (const PassError&) {
            continue;  // unpeelable: the site falls back to a line sweep
          }
        }
      }
    }

    // Preload-all inserts one sweep per sensitive table; accesses stay put.
    if (strategy == Strategy::PreloadAll) {
      auto sites = sensitive_sites(out, f, cache, optimize, synthetic);
      std::set<std::string> tables;
      for (const SensitiveSite& s : sites) {
        if (s.synthetic) continue;
        if (s.uniform) {
          plan.sites.push_back({s.site, s.table,
                                PlanEntry::Decision::SkippedSingleLine,
                                s.contexts, s.table_lines});
          continue;
        }
        if (optimize && s.must_hit) {
          plan.sites.push_back({s.site, s.table,
                                PlanEntry::Decision::SkippedMustHit, s.contexts,
                                s.table_lines});
          continue;
        }
        tables.insert(s.table);
        plan.sites.push_back({s.site, s.table,
                              PlanEntry::Decision::CoveredByPreload, s.contexts,
                              s.table_lines});
      }
      for (const std::string& t : tables)
        f = preload_entry(out, f, t, cache, &synthetic);
      continue;
    }

    // Iterate: analyze, rewrite the first access that is neither uniform nor
    // (with optimization) a proven hit, repeat until a fixed point.
    while (true) {
      auto sites = sensitive_sites(out, f, cache, optimize, synthetic);
      const SensitiveSite* pick = nullptr;
      for (const SensitiveSite& s : sites) {
        if (s.synthetic || s.uniform) continue;
        if (optimize && s.must_hit) continue;
        pick = &s;
        break;
      }
      if (!pick) {
        // Fixed point: record the final disposition of surviving sites.
        for (const SensitiveSite& s : sites) {
          if (s.synthetic) continue;
          PlanEntry e;
          e.site = s.site;
          e.table = s.table;
          e.contexts = s.contexts;
          e.table_lines = s.table_lines;
          e.decision = s.uniform ? PlanEntry::Decision::SkippedSingleLine
                                 : PlanEntry::Decision::SkippedMustHit;
          plan.sites.push_back(std::move(e));
        }
        break;
      }
      PlanEntry e;
      e.site = pick->site;
      e.table = pick->table;
      e.contexts = pick->contexts;
      e.table_lines = pick->table_lines;
      e.decision = PlanEntry::Decision::Rewritten;
      switch (strategy) {
        case Strategy::ByteAccess:
          f = byte_sweep(out, f, pick->site, &synthetic);
          break;
        case Strategy::LineAccess:
          f = line_sweep(out, f, pick->site, cache, &synthetic);
          break;
        case Strategy::PreloadFirstIter:
          // Peeling already isolated first iterations; each remaining
          // context gets the fused line sweep.
          f = line_sweep(out, f, pick->site, cache, &synthetic);
          break;
        case Strategy::PreloadAll:
          break;  // handled above
      }
      plan.sites.push_back(std::move(e));
    }
  }

  // Deterministic plan order.
  std::sort(plan.sites.begin(), plan.sites.end(),
            [](const PlanEntry& a, const PlanEntry& b) { return a.site < b.site; });
  return {out, plan};
}

}  // namespace ctrepair
