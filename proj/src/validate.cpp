#include "ctrepair/validate.hpp"

#include <functional>
#include <map>
#include <set>

#include "ctrepair/cfg.hpp"

namespace ctrepair {

namespace {

struct Checker {
  Module& m;
  std::vector<Diag> diags;

  void err(const Instr* in, std::string where, std::string invariant,
           std::string message) {
    Diag d;
    if (in) {
      d.line = in->line;
      d.col = in->col;
    }
    d.where = std::move(where);
    d.invariant = std::move(invariant);
    d.message = std::move(message);
    diags.push_back(std::move(d));
  }

  void run() {
    check_toplevel_names();
    check_globals();
    check_records();
    check_callgraph();
    for (Function& f : m.functions) check_function(f);
  }

  void check_toplevel_names() {
    std::set<std::string> names;
    auto add = [&](const std::string& n, const char* what) {
      if (!names.insert(n).second)
        err(nullptr, n, "duplicate name",
            std::string(what) + " '" + n + "' redeclares an existing name");
    };
    for (const RecordType& r : m.records) add(r.name, "record");
    for (const GlobalArray& g : m.arrays) add(g.name, "global");
    for (const GlobalRecord& g : m.record_globals) add(g.name, "global");
    for (const Function& f : m.functions) add(f.name, "function");
    if (!m.function(m.entry))
      err(nullptr, m.entry, "entry function", "entry function does not exist");
  }

  void check_globals() {
    for (const GlobalArray& g : m.arrays) {
      if (g.length < 1)
        err(nullptr, g.name, "array length", "array length must be >= 1");
      if (g.init && g.init->size() != g.length)
        err(nullptr, g.name, "init length",
            "initializer has " + std::to_string(g.init->size()) +
                " elements, array declares " + std::to_string(g.length));
      if (g.init)
        for (uint64_t v : *g.init)
          if (truncate_to(g.elem, v) != v && sign_extend(g.elem, v) != static_cast<int64_t>(v))
            err(nullptr, g.name, "init value",
                "initializer value does not fit element type");
    }
    for (const GlobalRecord& g : m.record_globals)
      if (!m.record_type(g.type_name))
        err(nullptr, g.name, "unknown record type",
            "record type '" + g.type_name + "' is not declared");
  }

  void check_records() {
    for (const RecordType& r : m.records) {
      std::set<std::string> names;
      for (const RecordField& f : r.fields) {
        if (!names.insert(f.name).second)
          err(nullptr, r.name, "duplicate field", "field '" + f.name + "'");
        if (f.is_array && f.length < 1)
          err(nullptr, r.name + "." + f.name, "array length",
              "array field length must be >= 1");
      }
    }
  }

  void check_callgraph() {
    // DFS cycle detection; unknown targets reported once here.
    std::map<std::string, int> state;  // 0 unvisited, 1 on stack, 2 done
    bool reported_cycle = false;
    std::function<void(const Function&)> dfs = [&](const Function& f) {
      state[f.name] = 1;
      for (const BasicBlock& bb : f.blocks)
        for (const Instr& in : bb.instrs) {
          if (in.op != Opcode::Call) continue;
          const Function* callee = m.function(in.callee);
          if (!callee) {
            err(&in, f.name, "unknown call target",
                "function '" + in.callee + "' does not exist");
            continue;
          }
          int s = state[callee->name];
          if (s == 1 && !reported_cycle) {
            reported_cycle = true;
            err(&in, f.name, "recursion rejected",
                "call graph cycle through '" + in.callee + "'");
          } else if (s == 0) {
            dfs(*callee);
          }
        }
      state[f.name] = 2;
    };
    for (const Function& f : m.functions)
      if (state[f.name] == 0) dfs(f);
  }

  // ---- per-function ----

  void check_function(Function& f) {
    std::set<std::string> pnames;
    for (const Param& p : f.params) {
      if (!pnames.insert(p.name).second)
        err(nullptr, f.name, "duplicate name", "parameter '" + p.name + "'");
      if (m.array(p.name) || m.record_global(p.name) || m.function(p.name))
        err(nullptr, f.name, "duplicate name",
            "parameter '" + p.name + "' shadows a global");
      if (p.kind == Param::Kind::RecordRef && !m.record_type(p.record))
        err(nullptr, f.name, "unknown record type",
            "record type '" + p.record + "' is not declared");
    }

    if (f.blocks.empty()) {
      err(nullptr, f.name, "empty function", "function has no blocks");
      return;
    }
    std::set<std::string> bnames;
    for (const BasicBlock& bb : f.blocks)
      if (!bnames.insert(bb.name).second)
        err(nullptr, f.name, "duplicate name", "block '" + bb.name + "'");

    bool structure_ok = true;
    for (const BasicBlock& bb : f.blocks) {
      std::string where = f.name + ":" + bb.name;
      if (bb.instrs.empty()) {
        err(nullptr, where, "missing terminator", "block is empty");
        structure_ok = false;
        continue;
      }
      bool past_phis = false;
      for (size_t i = 0; i < bb.instrs.size(); ++i) {
        const Instr& in = bb.instrs[i];
        bool last = i + 1 == bb.instrs.size();
        if (is_terminator(in.op) && !last) {
          err(&in, where, "instructions after terminator", print_pos(i));
          structure_ok = false;
        }
        if (!is_terminator(in.op) && last) {
          err(&in, where, "missing terminator",
              "block does not end in br/condbr/ret");
          structure_ok = false;
        }
        if (in.op == Opcode::Phi) {
          if (past_phis) err(&in, where, "phi not at block head", print_pos(i));
        } else {
          past_phis = true;
        }
        for (const std::string& t : successors(in))
          if (!bnames.count(t)) {
            err(&in, where, "unknown branch target", "block '" + t + "'");
            structure_ok = false;
          }
      }
    }
    if (!structure_ok) return;

    Cfg cfg = Cfg::build(f);
    if (!cfg.preds[cfg.entry].empty())
      err(nullptr, f.name + ":" + f.blocks[0].name, "entry block has predecessors",
          "the first block must not be a branch target");
    std::vector<bool> reach = reachable_from_entry(cfg);
    bool all_reachable = true;
    for (size_t i = 0; i < reach.size(); ++i)
      if (!reach[i]) {
        all_reachable = false;
        err(nullptr, f.name + ":" + f.blocks[i].name, "unreachable block",
            "block is not reachable from the entry");
      }

    check_phis(f, cfg);
    DefMap defs = collect_defs(f);
    check_uses_and_types(f, cfg, defs);
    if (all_reachable && diags.empty()) check_dominance(f, cfg, defs);
  }

  static std::string print_pos(size_t i) {
    return "instruction #" + std::to_string(i);
  }

  void check_phis(const Function& f, const Cfg& cfg) {
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const BasicBlock& bb = f.blocks[b];
      std::set<int> preds(cfg.preds[b].begin(), cfg.preds[b].end());
      for (const Instr& in : bb.instrs) {
        if (in.op != Opcode::Phi) continue;
        std::string where = f.name + ":" + bb.name;
        std::set<int> seen;
        for (const PhiArm& arm : in.phi) {
          int p = cfg.index(arm.pred);
          if (p < 0 || !preds.count(p)) {
            err(&in, where, "phi has arm for non-predecessor",
                "'" + arm.pred + "'");
            continue;
          }
          if (!seen.insert(p).second)
            err(&in, where, "phi duplicate predecessor", "'" + arm.pred + "'");
        }
        for (int p : preds)
          if (!seen.count(p))
            err(&in, where, "phi incomplete",
                "missing incoming value for predecessor '" + cfg.names[p] + "'");
      }
    }
  }

  struct DefSite {
    int block = -1;   // -1 => parameter
    int index = -1;
    Type type = Type::I32;
    bool typed = false;
  };
  using DefMap = std::map<std::string, DefSite>;

  DefMap collect_defs(const Function& f) {
    DefMap defs;
    for (const Param& p : f.params)
      if (p.kind == Param::Kind::Scalar)
        defs[p.name] = DefSite{-1, -1, p.elem, true};
    for (size_t b = 0; b < f.blocks.size(); ++b)
      for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
        const Instr& in = f.blocks[b].instrs[i];
        if (!in.has_dst()) continue;
        auto [it, inserted] =
            defs.insert({in.dst, DefSite{(int)b, (int)i, Type::I32, false}});
        if (!inserted)
          err(&in, f.name + ":" + f.blocks[b].name,
              "SSA single assignment violated",
              "register '%" + in.dst + "' defined more than once");
      }
    return defs;
  }

  // Operand register uses of an instruction. Call ref-arguments name memory
  // regions rather than registers, so they are resolved separately.
  template <typename Fn>
  void for_each_reg_use(const Function& f, const Instr& in, Fn&& fn) {
    if (in.op == Opcode::Call) {
      const Function* callee = m.function(in.callee);
      for (size_t i = 0; i < in.args.size(); ++i) {
        bool is_ref = false;
        if (callee && i < callee->params.size())
          is_ref = callee->params[i].kind != Param::Kind::Scalar;
        if (!is_ref && in.args[i].is_reg()) fn(in.args[i]);
      }
      return;
    }
    for_each_use(in, [&](const Operand& o) { fn(o); });
  }

  void check_uses_and_types(Function& f, const Cfg& cfg, DefMap& defs) {
    infer_types(f, defs);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      BasicBlock& bb = f.blocks[b];
      std::string where = f.name + ":" + bb.name;
      for (Instr& in : bb.instrs) {
        for_each_reg_use(f, in, [&](const Operand& o) {
          if (!defs.count(o.reg))
            err(&in, where, "unknown register",
                "'%" + o.reg + "' is never defined");
        });
        check_instr_types(f, in, where, defs);
      }
    }
    (void)cfg;
  }

  std::optional<Type> operand_type(const DefMap& defs, const Operand& o) {
    if (o.is_imm()) return std::nullopt;
    auto it = defs.find(o.reg);
    if (it == defs.end() || !it->second.typed) return std::nullopt;
    return it->second.type;
  }

  void infer_types(Function& f, DefMap& defs) {
    bool changed = true;
    while (changed) {
      changed = false;
      for (BasicBlock& bb : f.blocks)
        for (Instr& in : bb.instrs) {
          if (!in.has_dst()) continue;
          DefSite& d = defs[in.dst];
          if (d.typed) continue;
          std::optional<Type> t;
          switch (in.op) {
            case Opcode::Const:
            case Opcode::Zext:
              t = in.type;
              break;
            case Opcode::ICmp:
              t = Type::I1;
              break;
            case Opcode::Load: {
              auto sig = resolve_array_ref(m, f, in.mem);
              if (sig) t = sig->elem;
              break;
            }
            case Opcode::LoadField: {
              auto sig = resolve_scalar_field(m, f, in.mem);
              if (sig) t = sig->elem;
              break;
            }
            case Opcode::Call: {
              const Function* callee = m.function(in.callee);
              if (callee && callee->ret) t = *callee->ret;
              break;
            }
            case Opcode::CtSel:
              if (auto tt = operand_type(defs, in.args[1]))
                t = tt;
              else if (auto te = operand_type(defs, in.args[2]))
                t = te;
              break;
            case Opcode::Phi:
              for (const PhiArm& arm : in.phi)
                if (auto ta = operand_type(defs, arm.value)) {
                  t = ta;
                  break;
                }
              break;
            default:
              if (is_binop(in.op)) {
                if (auto ta = operand_type(defs, in.args[0]))
                  t = ta;
                else if (auto tb = operand_type(defs, in.args[1]))
                  t = tb;
              }
              break;
          }
          if (t) {
            d.type = *t;
            d.typed = true;
            in.type = *t;
            changed = true;
          }
        }
    }
  }

  void require_type(const Instr& in, const std::string& where,
                    const DefMap& defs, const Operand& o, Type want,
                    const char* what) {
    auto t = operand_type(defs, o);
    if (t && *t != want)
      err(&in, where, "type mismatch",
          std::string(what) + " has type " + type_name(*t) + ", expected " +
              type_name(want));
  }

  void check_instr_types(const Function& f, Instr& in, const std::string& where,
                         const DefMap& defs) {
    switch (in.op) {
      case Opcode::Const:
        break;
      case Opcode::Zext: {
        auto ts = operand_type(defs, in.args[0]);
        if (in.args[0].is_imm())
          err(&in, where, "type mismatch", "zext of an immediate");
        else if (ts && bit_width(*ts) >= bit_width(in.type))
          err(&in, where, "type mismatch", "zext must widen");
        break;
      }
      case Opcode::ICmp: {
        auto ta = operand_type(defs, in.args[0]);
        auto tb = operand_type(defs, in.args[1]);
        if (ta && tb && *ta != *tb)
          err(&in, where, "type mismatch", "icmp operand types differ");
        if (!ta && !tb)
          err(&in, where, "untyped immediate operands",
              "icmp needs at least one register operand");
        break;
      }
      case Opcode::Load: {
        auto sig = resolve_array_ref(m, f, in.mem);
        if (!sig) {
          err(&in, where, "unknown array", "'" + in.mem.str() + "'");
          break;
        }
        check_index(in, where, defs, in.args[0], sig->length);
        break;
      }
      case Opcode::Store: {
        auto sig = resolve_array_ref(m, f, in.mem);
        if (!sig) {
          err(&in, where, "unknown array", "'" + in.mem.str() + "'");
          break;
        }
        check_index(in, where, defs, in.args[0], sig->length);
        require_type(in, where, defs, in.args[1], sig->elem, "stored value");
        break;
      }
      case Opcode::LoadField: {
        if (!resolve_scalar_field(m, f, in.mem))
          err(&in, where, "unknown field", "'" + in.mem.str() + "'");
        break;
      }
      case Opcode::StoreField: {
        auto sig = resolve_scalar_field(m, f, in.mem);
        if (!sig) {
          err(&in, where, "unknown field", "'" + in.mem.str() + "'");
          break;
        }
        require_type(in, where, defs, in.args[0], sig->elem, "stored value");
        break;
      }
      case Opcode::Phi: {
        auto t = operand_type(defs, Operand::make_reg(in.dst));
        for (const PhiArm& arm : in.phi)
          if (t) require_type(in, where, defs, arm.value, *t, "phi arm");
        break;
      }
      case Opcode::CtSel: {
        require_type(in, where, defs, in.args[0], Type::I1, "ctsel condition");
        if (in.args[0].is_imm())
          err(&in, where, "type mismatch", "ctsel condition must be an i1 register");
        auto tt = operand_type(defs, in.args[1]);
        auto te = operand_type(defs, in.args[2]);
        if (tt && te && *tt != *te)
          err(&in, where, "type mismatch", "ctsel value types differ");
        if (!tt && !te)
          err(&in, where, "untyped immediate operands",
              "ctsel needs a typed value operand");
        break;
      }
      case Opcode::Call:
        check_call(f, in, where, defs);
        break;
      case Opcode::CondBr:
        require_type(in, where, defs, in.args[0], Type::I1, "branch condition");
        if (in.args[0].is_imm())
          err(&in, where, "type mismatch", "condbr condition must be an i1 register");
        break;
      case Opcode::Ret: {
        if (f.ret && in.args.empty())
          err(&in, where, "type mismatch", "ret needs a value");
        if (!f.ret && !in.args.empty())
          err(&in, where, "type mismatch", "ret of a value in a void function");
        if (f.ret && !in.args.empty())
          require_type(in, where, defs, in.args[0], *f.ret, "returned value");
        break;
      }
      case Opcode::Br:
        break;
      default:
        if (is_binop(in.op)) {
          auto ta = operand_type(defs, in.args[0]);
          auto tb = operand_type(defs, in.args[1]);
          if (ta && tb && *ta != *tb)
            err(&in, where, "type mismatch", "operand types differ");
          if (!ta && !tb)
            err(&in, where, "untyped immediate operands",
                "binary op needs at least one register operand");
        }
        break;
    }
  }

  void check_index(const Instr& in, const std::string& where, const DefMap& defs,
                   const Operand& idx, uint64_t length) {
    if (idx.is_imm() && idx.imm >= length)
      err(&in, where, "index out of bounds",
          "constant index " + std::to_string(idx.imm) + " >= length " +
              std::to_string(length));
    if (idx.is_reg()) {
      auto t = operand_type(defs, idx);
      if (t && *t == Type::I1)
        err(&in, where, "type mismatch", "array index must not be i1");
    }
  }

  void check_call(const Function& f, const Instr& in, const std::string& where,
                  const DefMap& defs) {
    const Function* callee = m.function(in.callee);
    if (!callee) return;  // reported by check_callgraph
    if (in.has_dst() && !callee->ret) {
      err(&in, where, "type mismatch", "call result of a void function");
      return;
    }
    if (in.args.size() != callee->params.size()) {
      err(&in, where, "call arity",
          "expected " + std::to_string(callee->params.size()) + " arguments, got " +
              std::to_string(in.args.size()));
      return;
    }
    for (size_t i = 0; i < in.args.size(); ++i) {
      const Param& p = callee->params[i];
      const Operand& a = in.args[i];
      if (p.kind == Param::Kind::Scalar) {
        require_type(in, where, defs, a, p.elem, "call argument");
        continue;
      }
      if (!a.is_reg()) {
        err(&in, where, "type mismatch", "reference argument must name a region");
        continue;
      }
      // Resolve the named region against this function's scope.
      MemRef ref;
      auto dot = a.reg.find('.');
      ref.base = dot == std::string::npos ? a.reg : a.reg.substr(0, dot);
      if (dot != std::string::npos) ref.field = a.reg.substr(dot + 1);
      if (p.kind == Param::Kind::ArrayRef) {
        auto sig = resolve_array_ref(m, f, ref);
        if (!sig)
          err(&in, where, "unknown array", "'" + a.reg + "'");
        else if (sig->elem != p.elem || sig->length != p.length)
          err(&in, where, "type mismatch",
              "array argument '" + a.reg + "' does not match ptr<" +
                  type_name(p.elem) + ", " + std::to_string(p.length) + ">");
      } else {
        const GlobalRecord* g = m.record_global(ref.base);
        const Param* fp = f.param(ref.base);
        std::string rt;
        if (!ref.field.empty()) {
          err(&in, where, "type mismatch", "record argument cannot be a field");
          continue;
        }
        if (g) rt = g->type_name;
        else if (fp && fp->kind == Param::Kind::RecordRef) rt = fp->record;
        if (rt.empty())
          err(&in, where, "unknown record", "'" + a.reg + "'");
        else if (rt != p.record)
          err(&in, where, "type mismatch",
              "record argument '" + a.reg + "' has type " + rt + ", expected " +
                  p.record);
      }
    }
  }

  void check_dominance(const Function& f, const Cfg& cfg, const DefMap& defs) {
    DomTree dt = dominator_tree(cfg);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const BasicBlock& bb = f.blocks[b];
      std::string where = f.name + ":" + bb.name;
      for (size_t i = 0; i < bb.instrs.size(); ++i) {
        const Instr& in = bb.instrs[i];
        if (in.op == Opcode::Phi) {
          for (const PhiArm& arm : in.phi) {
            if (!arm.value.is_reg()) continue;
            auto it = defs.find(arm.value.reg);
            if (it == defs.end()) continue;
            int p = cfg.index(arm.pred);
            if (p < 0) continue;
            const DefSite& d = it->second;
            if (d.block >= 0 && !dt.dominates(d.block, p))
              err(&in, where, "SSA dominance violated",
                  "'%" + arm.value.reg + "' does not dominate edge from '" +
                      arm.pred + "'");
          }
          continue;
        }
        for_each_reg_use(f, in, [&](const Operand& o) {
          auto it = defs.find(o.reg);
          if (it == defs.end()) return;
          const DefSite& d = it->second;
          bool ok;
          if (d.block < 0) {
            ok = true;  // parameter
          } else if (d.block == static_cast<int>(b)) {
            ok = d.index < static_cast<int>(i);
          } else {
            ok = dt.dominates(d.block, static_cast<int>(b));
          }
          if (!ok)
            err(&in, where, "SSA dominance violated",
                "'%" + o.reg + "' used before its definition dominates the use");
        });
      }
    }
  }
};

}  // namespace

std::optional<RegionSig> resolve_array_ref(const Module& m, const Function& f,
                                           const MemRef& mem) {
  if (mem.is_field()) {
    const RecordType* rt = nullptr;
    if (const GlobalRecord* g = m.record_global(mem.base)) {
      rt = m.record_type(g->type_name);
    } else if (const Param* p = f.param(mem.base)) {
      if (p->kind == Param::Kind::RecordRef) rt = m.record_type(p->record);
    }
    if (!rt) return std::nullopt;
    const RecordField* fl = rt->field(mem.field);
    if (!fl || !fl->is_array) return std::nullopt;
    return RegionSig{fl->elem, fl->length, false};
  }
  if (const GlobalArray* g = m.array(mem.base))
    return RegionSig{g->elem, g->length, false};
  if (const Param* p = f.param(mem.base))
    if (p->kind == Param::Kind::ArrayRef)
      return RegionSig{p->elem, p->length, false};
  return std::nullopt;
}

std::optional<RegionSig> resolve_scalar_field(const Module& m, const Function& f,
                                              const MemRef& mem) {
  if (!mem.is_field()) return std::nullopt;
  const RecordType* rt = nullptr;
  if (const GlobalRecord* g = m.record_global(mem.base)) {
    rt = m.record_type(g->type_name);
  } else if (const Param* p = f.param(mem.base)) {
    if (p->kind == Param::Kind::RecordRef) rt = m.record_type(p->record);
  }
  if (!rt) return std::nullopt;
  const RecordField* fl = rt->field(mem.field);
  if (!fl || fl->is_array) return std::nullopt;
  return RegionSig{fl->elem, 1, true};
}

std::vector<Diag> validate(Module& m) {
  Checker c{m};
  c.run();
  return std::move(c.diags);
}

}  // namespace ctrepair
