#include "ctrepair/transform_ir.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>

#include "ctrepair/cfg.hpp"

namespace ctrepair {

namespace {

Diag make_diag(const std::string& where, const std::string& invariant,
               const std::string& message) {
  Diag d;
  d.where = where;
  d.invariant = invariant;
  d.message = message;
  return d;
}

// Register types of a validated function (instruction types are filled in).
std::map<std::string, Type> reg_types(const Function& f) {
  std::map<std::string, Type> t;
  for (const Param& p : f.params)
    if (p.kind == Param::Kind::Scalar) t[p.name] = p.elem;
  for (const BasicBlock& bb : f.blocks)
    for (const Instr& in : bb.instrs)
      if (in.has_dst()) t[in.dst] = in.type;
  return t;
}

// Shared cloning machinery used by inlining and loop peeling: rewrites
// registers, block labels and memory bases, folding instructions whose
// operands become all-immediate.
struct CloneCtx {
  std::map<std::string, Operand> reg_subst;   // old reg -> operand
  std::map<std::string, std::string> block_map;
  std::map<std::string, std::string> region_map;  // memory base -> new base[.field]
  const std::map<std::string, Type>* src_types = nullptr;

  Operand map_operand(const Operand& o) const {
    if (!o.is_reg()) return o;
    auto it = reg_subst.find(o.reg);
    return it == reg_subst.end() ? o : it->second;
  }

  std::string map_block(const std::string& b) const {
    auto it = block_map.find(b);
    return it == block_map.end() ? b : it->second;
  }

  MemRef map_mem(const MemRef& m) const {
    auto it = region_map.find(m.base);
    if (it == region_map.end()) return m;
    MemRef out;
    auto dot = it->second.find('.');
    if (dot == std::string::npos) {
      out.base = it->second;
      out.field = m.field;
    } else {
      out.base = it->second.substr(0, dot);
      out.field = it->second.substr(dot + 1);
    }
    return out;
  }

  // Clone one instruction. Pure all-immediate instructions fold to Const.
  Instr clone(const Instr& src) const {
    Instr in = src;
    for (Operand& o : in.args) o = map_operand(o);
    for (PhiArm& arm : in.phi) {
      arm.pred = map_block(arm.pred);
      arm.value = map_operand(arm.value);
    }
    if (is_memory_access(in.op)) in.mem = map_mem(in.mem);
    if (in.op == Opcode::Br) in.t1 = map_block(in.t1);
    if (in.op == Opcode::CondBr) {
      in.t1 = map_block(in.t1);
      in.t2 = map_block(in.t2);
    }
    fold_if_constant(src, in);
    return in;
  }

  void fold_if_constant(const Instr& src, Instr& in) const {
    auto as_const = [&](uint64_t v) {
      Instr c;
      c.op = Opcode::Const;
      c.type = in.type;
      c.dst = in.dst;
      c.args = {Operand::make_imm(truncate_to(in.type, v))};
      c.line = in.line;
      c.col = in.col;
      in = c;
    };
    if (is_binop(in.op) && in.args[0].is_imm() && in.args[1].is_imm()) {
      as_const(eval_binop(in.op, in.type, in.args[0].imm, in.args[1].imm));
    } else if (in.op == Opcode::ICmp && in.args[0].is_imm() && in.args[1].is_imm()) {
      Type t = Type::I32;
      if (src.args[0].is_reg() && src_types && src_types->count(src.args[0].reg))
        t = src_types->at(src.args[0].reg);
      else if (src.args[1].is_reg() && src_types && src_types->count(src.args[1].reg))
        t = src_types->at(src.args[1].reg);
      in.type = Type::I1;
      as_const(eval_icmp(in.pred, t, in.args[0].imm, in.args[1].imm));
    } else if (in.op == Opcode::Zext && in.args[0].is_imm()) {
      Type st = Type::I32;
      if (src.args[0].is_reg() && src_types && src_types->count(src.args[0].reg))
        st = src_types->at(src.args[0].reg);
      as_const(truncate_to(st, in.args[0].imm));
    }
  }
};

// ---- inlining ----

struct Inliner {
  Module& m;

  void inline_function_calls(Function& f) {
    bool again = true;
    while (again) {
      again = false;
      for (size_t b = 0; b < f.blocks.size() && !again; ++b)
        for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i)
          if (f.blocks[b].instrs[i].op == Opcode::Call) {
            inline_one(f, b, i);
            again = true;
            break;
          }
    }
  }

  void inline_one(Function& f, size_t bidx, size_t iidx) {
    Instr call = f.blocks[bidx].instrs[iidx];
    const Function* callee = m.function(call.callee);
    NameGen names(f);
    auto callee_types = reg_types(*callee);

    CloneCtx ctx;
    ctx.src_types = &callee_types;
    for (size_t p = 0; p < callee->params.size(); ++p) {
      const Param& prm = callee->params[p];
      if (prm.kind == Param::Kind::Scalar)
        ctx.reg_subst[prm.name] = call.args[p];
      else
        ctx.region_map[prm.name] = call.args[p].reg;
    }
    for (const BasicBlock& bb : callee->blocks) {
      ctx.block_map[bb.name] = names.fresh_block();
      for (const Instr& in : bb.instrs)
        if (in.has_dst() && !ctx.reg_subst.count(in.dst))
          ctx.reg_subst[in.dst] = Operand::make_reg(names.fresh_reg());
    }

    std::string cont_name = names.fresh_block();

    // Split the calling block.
    BasicBlock head;
    head.name = f.blocks[bidx].name;
    head.instrs.assign(f.blocks[bidx].instrs.begin(),
                       f.blocks[bidx].instrs.begin() + iidx);
    BasicBlock cont;
    cont.name = cont_name;
    cont.instrs.assign(f.blocks[bidx].instrs.begin() + iidx + 1,
                       f.blocks[bidx].instrs.end());

    Instr jump;
    jump.op = Opcode::Br;
    jump.t1 = ctx.block_map[callee->blocks[0].name];
    head.instrs.push_back(jump);

    // Clone callee bodies, turning rets into jumps to the continuation.
    std::vector<BasicBlock> clones;
    std::vector<std::pair<std::string, Operand>> ret_values;  // (block, value)
    for (const BasicBlock& bb : callee->blocks) {
      BasicBlock nb;
      nb.name = ctx.block_map[bb.name];
      for (const Instr& in : bb.instrs) {
        if (in.op == Opcode::Ret) {
          if (!in.args.empty())
            ret_values.push_back({nb.name, ctx.map_operand(in.args[0])});
          else
            ret_values.push_back({nb.name, Operand::make_imm(0)});
          Instr j;
          j.op = Opcode::Br;
          j.t1 = cont_name;
          nb.instrs.push_back(j);
        } else {
          nb.instrs.push_back(ctx.clone(in));
        }
      }
      clones.push_back(std::move(nb));
    }

    // Deliver the return value.
    std::optional<Operand> single_ret;
    if (call.has_dst()) {
      if (ret_values.size() == 1) {
        single_ret = ret_values[0].second;
      } else {
        Instr phi;
        phi.op = Opcode::Phi;
        phi.dst = call.dst;
        phi.type = *callee->ret;
        for (auto& [blk, val] : ret_values) phi.phi.push_back({blk, val});
        cont.instrs.insert(cont.instrs.begin(), phi);
      }
    }

    std::string head_name = head.name;

    // Reassemble: head, clones..., cont in place of the original block.
    std::vector<BasicBlock> out;
    out.reserve(f.blocks.size() + clones.size() + 1);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      if (b == bidx) {
        out.push_back(std::move(head));
        for (BasicBlock& c : clones) out.push_back(std::move(c));
        out.push_back(std::move(cont));
      } else {
        out.push_back(std::move(f.blocks[b]));
      }
    }
    f.blocks = std::move(out);

    if (single_ret) replace_all_uses(f, call.dst, *single_ret);

    // Phis in successors of the split block now come from `cont`.
    const Instr* term = f.block(cont_name)->terminator();
    if (term)
      for (const std::string& s : successors(*term))
        if (BasicBlock* sb = f.block(s))
          for (Instr& in : sb->instrs)
            if (in.op == Opcode::Phi)
              for (PhiArm& arm : in.phi)
                if (arm.pred == head_name) arm.pred = cont_name;
  }
};

}  // namespace

Module inline_all(const Module& m) {
  Module out = m;
  // Topological order: callees before callers.
  std::map<std::string, int> order_state;
  std::vector<std::string> order;
  std::function<void(const Function&)> dfs = [&](const Function& f) {
    order_state[f.name] = 1;
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs)
        if (in.op == Opcode::Call) {
          const Function* callee = out.function(in.callee);
          if (callee && order_state[callee->name] == 0) dfs(*callee);
        }
    order_state[f.name] = 2;
    order.push_back(f.name);
  };
  for (const Function& f : out.functions)
    if (order_state[f.name] == 0) dfs(f);

  Inliner inliner{out};
  for (const std::string& name : order)
    inliner.inline_function_calls(*out.function(name));
  return out;
}

Module keep_entry_only(const Module& m) {
  Module out = m;
  std::vector<Function> kept;
  for (Function& f : out.functions)
    if (f.name == out.entry) kept.push_back(std::move(f));
  out.functions = std::move(kept);
  return out;
}

void peel_first_iteration(Function& f, const Loop& loop) {
  if (!loop.counted || !loop.trip_bound)
    throw PassError(make_diag(f.name, "unboundable loop",
                              "loop has no static trip bound"));
  if (*loop.trip_bound < 2)
    throw PassError(make_diag(f.name, "unpeelable loop",
                              "trip bound must be >= 2"));
  if (loop.exits.size() != 1 || loop.exits[0].first != loop.header)
    throw PassError(make_diag(f.name, "unpeelable loop",
                              "loop must exit only through its header test"));
  if (loop.latches.size() != 1)
    throw PassError(make_diag(f.name, "unpeelable loop",
                              "loop must have a single latch"));

  const Loop::CountedShape& cs = *loop.counted;
  Cfg cfg = Cfg::build(f);
  NameGen names(f);
  auto types = reg_types(f);

  CloneCtx ctx;
  ctx.src_types = &types;

  const BasicBlock& header = f.blocks[loop.header];
  std::set<std::string> header_phis;
  for (const Instr& in : header.instrs) {
    if (in.op != Opcode::Phi) continue;
    header_phis.insert(in.dst);
    for (const PhiArm& arm : in.phi)
      if (cfg.index(arm.pred) == cs.preheader)
        ctx.reg_subst[in.dst] = arm.value;  // iteration 0 value
  }
  // A header phi used as a branch condition cannot be operand-substituted.
  for (int b : loop.body) {
    const Instr* t = f.blocks[b].terminator();
    if (t && t->op == Opcode::CondBr && t->args[0].is_reg() &&
        header_phis.count(t->args[0].reg))
      throw PassError(make_diag(f.name, "unpeelable loop",
                                "header phi feeds a branch condition"));
  }

  for (int b : loop.body) {
    ctx.block_map[f.blocks[b].name] = names.fresh_block();
    for (const Instr& in : f.blocks[b].instrs)
      if (in.has_dst() && !ctx.reg_subst.count(in.dst))
        ctx.reg_subst[in.dst] = Operand::make_reg(names.fresh_reg());
  }

  std::vector<BasicBlock> clones;
  std::map<std::string, uint64_t> folded;  // cloned const reg -> value
  for (int b : loop.body) {
    const BasicBlock& src = f.blocks[b];
    BasicBlock nb;
    nb.name = ctx.block_map[src.name];
    bool is_hdr = b == loop.header;
    for (const Instr& in : src.instrs) {
      if (is_hdr && in.op == Opcode::Phi) continue;  // replaced by init values
      if (is_hdr && is_terminator(in.op)) {
        // Iteration 0 always runs: the trip test is known true.
        Instr j;
        j.op = Opcode::Br;
        j.t1 = ctx.map_block(f.blocks[cs.body_succ].name);
        nb.instrs.push_back(j);
        continue;
      }
      Instr cloned = ctx.clone(in);
      if (cloned.op == Opcode::Const && in.op != Opcode::Const)
        folded[cloned.dst] = cloned.args[0].imm;
      nb.instrs.push_back(std::move(cloned));
    }
    clones.push_back(std::move(nb));
  }

  std::string cloned_latch = ctx.block_map[f.blocks[loop.latches[0]].name];
  std::string cloned_header = ctx.block_map[f.blocks[loop.header].name];

  // The cloned back edge becomes the entry of the residual loop.
  for (BasicBlock& nb : clones)
    if (nb.name == cloned_latch) {
      Instr* t = &nb.instrs.back();
      t->t1 = f.blocks[loop.header].name;
    }

  // Rewire residual header phis: the preheader arm now comes from the cloned
  // latch, carrying the iteration-0 iterate.
  for (Instr& in : f.blocks[loop.header].instrs) {
    if (in.op != Opcode::Phi) continue;
    for (PhiArm& arm : in.phi) {
      if (cfg.index(arm.pred) != cs.preheader) continue;
      arm.pred = cloned_latch;
      Operand latch_val;
      for (const PhiArm& a2 : in.phi)
        if (cfg.index(a2.pred) == loop.latches[0] && a2.pred != arm.pred)
          latch_val = a2.value;
      Operand mapped = ctx.map_operand(latch_val);
      if (mapped.is_reg() && folded.count(mapped.reg))
        mapped = Operand::make_imm(folded.at(mapped.reg));
      arm.value = mapped;
    }
  }

  // Preheader now enters the cloned header.
  BasicBlock& pre = f.blocks[cs.preheader];
  Instr* pterm = &pre.instrs.back();
  if (pterm->op == Opcode::Br) {
    pterm->t1 = cloned_header;
  } else {
    if (pterm->t1 == f.blocks[loop.header].name) pterm->t1 = cloned_header;
    if (pterm->t2 == f.blocks[loop.header].name) pterm->t2 = cloned_header;
  }

  // Insert clones between the preheader and the loop.
  std::vector<BasicBlock> out;
  for (size_t b = 0; b < f.blocks.size(); ++b) {
    out.push_back(std::move(f.blocks[b]));
    if (static_cast<int>(b) == cs.preheader)
      for (BasicBlock& c : clones) out.push_back(std::move(c));
  }
  f.blocks = std::move(out);
  remove_dead_pure_instrs(f);
}

std::string peel_loop_containing(Function& f, const std::string& block) {
  LoopInfo li = analyze_loops(f);
  int bidx = f.block_index(block);
  const Loop* target = nullptr;
  for (const Loop& l : li.loops)
    if (l.contains(bidx) && (!target || l.body.size() < target->body.size()))
      target = &l;
  if (!target)
    throw PassError(make_diag(f.name, "unpeelable loop",
                              "block '" + block + "' is not inside a loop"));
  Loop copy = *target;
  peel_first_iteration(f, copy);
  // Clones are inserted right after the preheader in body order, and blocks
  // before the insertion point keep their indices.
  int pos = copy.counted->preheader;
  for (size_t k = 0; k < copy.body.size(); ++k)
    if (copy.body[k] == bidx)
      return f.blocks[pos + 1 + k].name;
  return "";
}

void simplify_cfg(Function& f) {
  bool changed = true;
  while (changed) {
    changed = false;
    Cfg cfg = Cfg::build(f);
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const Instr* term = f.blocks[b].terminator();
      if (!term || term->op != Opcode::Br) continue;
      int s = cfg.index(term->t1);
      if (s < 0 || s == static_cast<int>(b) || s == cfg.entry) continue;
      if (cfg.preds[s].size() != 1) continue;
      BasicBlock& from = f.blocks[b];
      BasicBlock& into = f.blocks[s];
      // Single-predecessor phis become direct definitions.
      std::vector<std::pair<std::string, Operand>> renames;
      std::vector<Instr> rest;
      for (Instr& in : into.instrs) {
        if (in.op == Opcode::Phi)
          renames.push_back({in.dst, in.phi[0].value});
        else
          rest.push_back(std::move(in));
      }
      from.instrs.pop_back();
      for (Instr& in : rest) from.instrs.push_back(std::move(in));
      for (auto& [reg, val] : renames) replace_all_uses(f, reg, val);
      // Phi arms in successors referring to the merged block.
      const Instr* nt = from.terminator();
      if (nt)
        for (const std::string& sn : successors(*nt))
          if (BasicBlock* sb = f.block(sn))
            for (Instr& in : sb->instrs)
              if (in.op == Opcode::Phi)
                for (PhiArm& arm : in.phi)
                  if (arm.pred == into.name) arm.pred = from.name;
      f.blocks.erase(f.blocks.begin() + s);
      changed = true;
      break;
    }
  }
}

void remove_dead_pure_instrs(Function& f) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::set<std::string> used;
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs)
        for_each_use(in, [&](const Operand& o) { used.insert(o.reg); });
    for (BasicBlock& bb : f.blocks) {
      auto it = std::remove_if(bb.instrs.begin(), bb.instrs.end(), [&](const Instr& in) {
        if (!in.has_dst() || used.count(in.dst)) return false;
        switch (in.op) {
          case Opcode::Const:
          case Opcode::ICmp:
          case Opcode::Zext:
          case Opcode::CtSel:
          case Opcode::Phi:
            return true;
          default:
            return is_binop(in.op);
        }
      });
      if (it != bb.instrs.end()) {
        bb.instrs.erase(it, bb.instrs.end());
        changed = true;
      }
    }
  }
}

}  // namespace ctrepair
