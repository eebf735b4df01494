#include "ctrepair/taint.hpp"

#include <map>

#include "ctrepair/cfg.hpp"
#include "ctrepair/loops.hpp"

namespace ctrepair {

namespace {

struct FnTaint {
  const Module& m;
  const Function& f;
  SensitivityMap& out;
  Cfg cfg;
  PostDomTree pdt;
  // Control-dependence region of each branch block, computed once.
  std::map<int, std::vector<int>> cd_cache;

  FnTaint(const Module& mod, const Function& fn, SensitivityMap& o)
      : m(mod), f(fn), out(o), cfg(Cfg::build(fn)), pdt(post_dominator_tree(cfg)) {}

  bool reg(const std::string& r) const { return out.reg_tainted(f.name, r); }
  bool op(const Operand& o) const { return out.operand_tainted(f.name, o); }

  bool taint_reg(const std::string& r) {
    return out.regs.insert({f.name, r}).second;
  }
  bool taint_loc(const std::string& l) { return out.locations.insert(l).second; }

  const std::vector<int>& cd_region(int branch_block) {
    auto it = cd_cache.find(branch_block);
    if (it != cd_cache.end()) return it->second;
    return cd_cache
        .emplace(branch_block,
                 control_dependent_blocks(cfg, pdt, branch_block))
        .first->second;
  }

  void seed() {
    for (const Param& p : f.params) {
      if (!p.secret) continue;
      switch (p.kind) {
        case Param::Kind::Scalar:
          taint_reg(p.name);
          break;
        case Param::Kind::ArrayRef:
          taint_loc(p.name);
          break;
        case Param::Kind::RecordRef:
          if (const RecordType* rt = m.record_type(p.record))
            for (const RecordField& fl : rt->fields)
              taint_loc(p.name + "." + fl.name);
          break;
      }
    }
  }

  bool data_step() {
    bool changed = false;
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs) {
        switch (in.op) {
          case Opcode::Load:
            if (op(in.args[0]) || out.loc_tainted(in.mem.str()))
              changed |= taint_reg(in.dst);
            break;
          case Opcode::LoadField:
            if (out.loc_tainted(in.mem.str())) changed |= taint_reg(in.dst);
            break;
          case Opcode::Store:
            if (op(in.args[0]) || op(in.args[1]))
              changed |= taint_loc(in.mem.str());
            break;
          case Opcode::StoreField:
            if (op(in.args[0])) changed |= taint_loc(in.mem.str());
            break;
          case Opcode::Call: {
            // Conservative: analysis normally runs on inlined modules.
            bool any = false;
            for (const Operand& a : in.args)
              if (a.is_reg() && (reg(a.reg) || out.loc_tainted(a.reg)))
                any = true;
            if (any) {
              if (in.has_dst()) changed |= taint_reg(in.dst);
              const Function* callee = m.function(in.callee);
              for (size_t i = 0; callee && i < callee->params.size(); ++i)
                if (callee->params[i].kind != Param::Kind::Scalar &&
                    i < in.args.size())
                  changed |= taint_loc(in.args[i].reg);
            }
            break;
          }
          default: {
            if (!in.has_dst()) break;
            bool any = false;
            for_each_use(in, [&](const Operand& o) { any |= op(o); });
            if (any) changed |= taint_reg(in.dst);
            break;
          }
        }
      }
    return changed;
  }

  bool control_step() {
    bool changed = false;
    std::vector<char> in_region(f.blocks.size(), 0);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const Instr* term = f.blocks[b].terminator();
      if (!term || term->op != Opcode::CondBr) continue;
      if (!op(term->args[0])) continue;
      SiteId site{f.name, static_cast<int>(b),
                  static_cast<int>(f.blocks[b].instrs.size()) - 1};
      if (out.branches.insert(site).second) changed = true;
      for (int r : cd_region(static_cast<int>(b))) in_region[r] = 1;
    }
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      for (const Instr& in : f.blocks[b].instrs) {
        // A phi chooses by the path taken: taint it when any incoming edge
        // originates inside a tainted-branch region.
        if (in.op == Opcode::Phi) {
          for (const PhiArm& arm : in.phi) {
            int p = cfg.index(arm.pred);
            if (p >= 0 && in_region[p]) changed |= taint_reg(in.dst);
          }
          continue;
        }
        if (!in_region[b]) continue;
        if (in.has_dst()) changed |= taint_reg(in.dst);
        if (in.op == Opcode::Store || in.op == Opcode::StoreField)
          changed |= taint_loc(in.mem.str());
      }
    }
    return changed;
  }

  void run() {
    seed();
    bool changed = true;
    while (changed) {
      changed = false;
      changed |= data_step();
      changed |= control_step();
    }
  }
};

}  // namespace

SensitivityMap propagate_taint(const Module& m) {
  SensitivityMap s;
  // Location taint crosses functions through shared globals, so iterate the
  // per-function analyses to a joint fixed point.
  size_t before;
  do {
    before = s.regs.size() + s.locations.size() + s.branches.size();
    for (const Function& f : m.functions) {
      FnTaint ft(m, f, s);
      ft.run();
    }
  } while (s.regs.size() + s.locations.size() + s.branches.size() != before);
  return s;
}

LeakReport detect_leaks(const Module& m, const SensitivityMap& s) {
  LeakReport rep;
  for (const Function& f : m.functions) {
    Cfg cfg = Cfg::build(f);
    DomTree dt = dominator_tree(cfg);
    LoopInfo li = analyze_loops(f, cfg, dt);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      auto contexts = li.context_count(static_cast<int>(b));
      uint64_t weight = contexts.value_or(1);
      for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
        const Instr& in = f.blocks[b].instrs[i];
        if (in.op == Opcode::CondBr) {
          rep.totals.ifs++;
          if (s.operand_tainted(f.name, in.args[0])) {
            rep.totals.sensitive_ifs++;
            rep.conds.push_back(
                SiteId{f.name, static_cast<int>(b), static_cast<int>(i)});
          }
        }
        if (in.op != Opcode::Load && in.op != Opcode::Store) continue;
        const GlobalArray* g =
            in.mem.is_field() ? nullptr : m.array(in.mem.base);
        bool is_table = g && g->init.has_value();
        bool sensitive = s.operand_tainted(f.name, in.args[0]);
        if (is_table) {
          rep.totals.lut_accesses += weight;
          if (sensitive) rep.totals.sensitive_lut_accesses += weight;
        }
        if (sensitive) {
          LeakSite site;
          site.site = SiteId{f.name, static_cast<int>(b), static_cast<int>(i)};
          site.op = in.op;
          site.array = in.mem.str();
          site.is_table = is_table;
          site.contexts = weight;
          rep.accesses.push_back(std::move(site));
        }
      }
    }
  }
  std::set<std::string> tables, sensitive_tables;
  for (const GlobalArray& g : m.arrays)
    if (g.init) tables.insert(g.name);
  for (const LeakSite& a : rep.accesses)
    if (a.is_table) sensitive_tables.insert(a.array);
  rep.totals.luts = tables.size();
  rep.totals.sensitive_luts = sensitive_tables.size();
  return rep;
}

}  // namespace ctrepair
