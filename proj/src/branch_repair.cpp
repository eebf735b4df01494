#include "ctrepair/branch_repair.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "ctrepair/cfg.hpp"
#include "ctrepair/intervals.hpp"
#include "ctrepair/loops.hpp"
#include "ctrepair/transform_ir.hpp"
#include "ctrepair/validate.hpp"

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

std::map<std::string, Type> reg_types(const Function& f) {
  std::map<std::string, Type> t;
  for (const Param& p : f.params)
    if (p.kind == Param::Kind::Scalar) t[p.name] = p.elem;
  for (const BasicBlock& bb : f.blocks)
    for (const Instr& in : bb.instrs)
      if (in.has_dst()) t[in.dst] = in.type;
  return t;
}

Instr make_binop(Opcode op, Type t, std::string dst, Operand a, Operand b) {
  Instr in;
  in.op = op;
  in.type = t;
  in.dst = std::move(dst);
  in.args = {std::move(a), std::move(b)};
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

Instr make_br(std::string target) {
  Instr in;
  in.op = Opcode::Br;
  in.t1 = std::move(target);
  return in;
}

Instr make_condbr(Operand c, std::string t, std::string e) {
  Instr in;
  in.op = Opcode::CondBr;
  in.args = {std::move(c)};
  in.t1 = std::move(t);
  in.t2 = std::move(e);
  return in;
}

Instr make_phi(Type t, std::string dst, std::vector<PhiArm> arms) {
  Instr in;
  in.op = Opcode::Phi;
  in.type = t;
  in.dst = std::move(dst);
  in.phi = std::move(arms);
  return in;
}

std::string def_block_of(const Function& f, const std::string& reg) {
  for (const BasicBlock& bb : f.blocks)
    for (const Instr& in : bb.instrs)
      if (in.dst == reg) return bb.name;
  return "";
}

void insert_block_before(Function& f, const std::string& before, BasicBlock bb) {
  int pos = f.block_index(before);
  f.blocks.insert(f.blocks.begin() + pos, std::move(bb));
}

// Give the function a unique return block so arms containing returns still
// merge somewhere.
void unify_returns(Function& f) {
  std::vector<std::pair<std::string, Instr>> rets;
  for (BasicBlock& bb : f.blocks)
    if (bb.terminator() && bb.terminator()->op == Opcode::Ret)
      rets.push_back({bb.name, *bb.terminator()});
  if (rets.size() <= 1) return;

  NameGen names(f);
  std::string exit_name = names.fresh_block();
  BasicBlock exit_bb;
  exit_bb.name = exit_name;
  Instr ret;
  ret.op = Opcode::Ret;
  if (f.ret) {
    std::vector<PhiArm> arms;
    for (auto& [blk, r] : rets) arms.push_back({blk, r.args[0]});
    std::string rv = names.fresh_reg();
    exit_bb.instrs.push_back(make_phi(*f.ret, rv, std::move(arms)));
    ret.args = {Operand::make_reg(rv)};
  }
  exit_bb.instrs.push_back(ret);
  for (BasicBlock& bb : f.blocks)
    if (bb.terminator() && bb.terminator()->op == Opcode::Ret)
      bb.instrs.back() = make_br(exit_name);
  f.blocks.push_back(std::move(exit_bb));
}

// ---- loop standardization ----

struct ChainBlock {
  std::string name;
  bool has_break = false;
  bool break_on_true = false;  // condbr c, exit, next
  Operand break_cond;
};

struct LoopShape {
  std::string header, latch, preheader, exit, body_head;
  std::vector<ChainBlock> chain;  // body blocks between header and latch
  Loop::CountedShape counted;
  std::optional<uint64_t> trip_bound;
};

// Resolve a loop into the supported straight-chain shape, by block names.
LoopShape resolve_chain_shape(const Function& f, const Cfg& cfg, const Loop& loop) {
  LoopShape sh;
  sh.counted = *loop.counted;
  sh.trip_bound = loop.trip_bound;
  sh.header = cfg.names[loop.header];
  sh.latch = cfg.names[loop.latches[0]];
  sh.preheader = cfg.names[sh.counted.preheader];
  sh.exit = cfg.names[sh.counted.exit_succ];
  sh.body_head = cfg.names[sh.counted.body_succ];

  for (auto& [from, to] : loop.exits)
    if (cfg.names[to] != sh.exit)
      throw PassError(make_diag(f.name, "unsupported loop shape",
                                "loop exits lead to different blocks"));

  int cur = sh.counted.body_succ;
  std::set<int> seen;
  while (cur != loop.latches[0]) {
    if (!loop.contains(cur) || !seen.insert(cur).second)
      throw PassError(make_diag(f.name, "unsupported loop shape",
                                "loop body is not a linear chain"));
    const BasicBlock& bb = f.blocks[cur];
    for (const Instr& in : bb.instrs)
      if (in.op == Opcode::Phi)
        throw PassError(make_diag(f.name, "unsupported loop shape",
                                  "phi inside loop body chain"));
    const Instr* t = bb.terminator();
    ChainBlock cb;
    cb.name = bb.name;
    int next;
    if (t->op == Opcode::Br) {
      next = cfg.index(t->t1);
    } else if (t->op == Opcode::CondBr) {
      int t1 = cfg.index(t->t1), t2 = cfg.index(t->t2);
      cb.break_cond = t->args[0];
      if (t->t1 == sh.exit && loop.contains(t2)) {
        cb.has_break = true;
        cb.break_on_true = true;
        next = t2;
      } else if (t->t2 == sh.exit && loop.contains(t1)) {
        cb.has_break = true;
        cb.break_on_true = false;
        next = t1;
      } else {
        throw PassError(make_diag(f.name, "unsupported loop shape",
                                  "conditional inside loop body chain"));
      }
    } else {
      throw PassError(make_diag(f.name, "unsupported loop shape",
                                "return inside loop body"));
    }
    sh.chain.push_back(cb);
    cur = next;
  }
  if (sh.chain.empty())
    throw PassError(make_diag(f.name, "unsupported loop shape",
                              "loop body is empty"));

  const BasicBlock& latch = f.blocks[loop.latches[0]];
  for (const Instr& in : latch.instrs)
    if (!is_terminator(in.op) && in.op != Opcode::Add && in.op != Opcode::Const)
      throw PassError(make_diag(f.name, "unsupported loop shape",
                                "latch must only advance the counter"));
  return sh;
}

// Rewrite a counted loop with secret-dependent break edges: every break
// becomes a guard-flag clear, the body runs under the conjunction of all
// flags, and the loop always performs its full static trip count.
void rewrite_breaks(Function& f, const LoopShape& sh) {
  NameGen names(f);
  std::string gate_name = names.fresh_block();
  std::string merge_name = names.fresh_block();

  struct Flag {
    int chain_pos;
    std::string phi, updated, merged;
  };
  std::vector<Flag> flags;
  for (size_t k = 0; k < sh.chain.size(); ++k)
    if (sh.chain[k].has_break)
      flags.push_back({static_cast<int>(k), names.fresh_reg(),
                       names.fresh_reg(), names.fresh_reg()});

  // Carried variables: header phis whose latch value is defined in the chain.
  struct Carried {
    std::string phi;
    Operand latch_value;
    int def_pos;
    Type type;
    std::string merged;
  };
  std::vector<Carried> carried;
  {
    const BasicBlock* header = f.block(sh.header);
    for (const Instr& in : header->instrs) {
      if (in.op != Opcode::Phi) continue;
      for (const PhiArm& arm : in.phi) {
        if (arm.pred != sh.latch || !arm.value.is_reg()) continue;
        std::string db = def_block_of(f, arm.value.reg);
        for (size_t k = 0; k < sh.chain.size(); ++k)
          if (sh.chain[k].name == db)
            carried.push_back({in.dst, arm.value, static_cast<int>(k), in.type,
                               names.fresh_reg()});
      }
    }
  }

  // Exit phis: values leaving through breaks ride fresh carrier registers.
  struct ExitCarrier {
    std::string phi_dst;
    Type type;
    Operand header_value;
    std::map<int, Operand> break_values;
    std::string carrier, carrier_merged;
  };
  std::vector<ExitCarrier> exit_carriers;
  {
    const BasicBlock* exit_bb = f.block(sh.exit);
    for (const Instr& in : exit_bb->instrs) {
      if (in.op != Opcode::Phi) continue;
      ExitCarrier ec;
      ec.phi_dst = in.dst;
      ec.type = in.type;
      size_t known = 0;
      for (const PhiArm& arm : in.phi) {
        if (arm.pred == sh.header) {
          ec.header_value = arm.value;
          ++known;
          continue;
        }
        for (size_t k = 0; k < sh.chain.size(); ++k)
          if (sh.chain[k].name == arm.pred) {
            ec.break_values[static_cast<int>(k)] = arm.value;
            ++known;
          }
      }
      if (known != in.phi.size())
        throw PassError(make_diag(f.name, "unsupported loop shape",
                                  "loop exit merges paths from outside"));
      ec.carrier = names.fresh_reg();
      ec.carrier_merged = names.fresh_reg();
      exit_carriers.push_back(std::move(ec));
    }
  }

  // Value of a tracked register on an edge leaving after chain position k.
  auto value_at = [](const std::string& phi, const Operand& updated,
                     int def_pos, int at_pos) {
    return at_pos >= def_pos ? updated : Operand::make_reg(phi);
  };

  // 1. Header: flag and carrier phis; the body edge goes through the gate.
  {
    BasicBlock* header = f.block(sh.header);
    std::vector<Instr> prefix;
    for (const Flag& fl : flags)
      prefix.push_back(make_phi(Type::I1, fl.phi,
                                {{sh.preheader, Operand::make_imm(1)},
                                 {sh.latch, Operand::make_reg(fl.merged)}}));
    for (const ExitCarrier& ec : exit_carriers)
      prefix.push_back(
          make_phi(ec.type, ec.carrier,
                   {{sh.preheader, Operand::make_imm(0)},
                    {sh.latch, Operand::make_reg(ec.carrier_merged)}}));
    header->instrs.insert(header->instrs.begin(), prefix.begin(), prefix.end());
    Instr* term = &header->instrs.back();
    if (term->t1 == sh.body_head) term->t1 = gate_name;
    if (term->t2 == sh.body_head) term->t2 = gate_name;
    for (Instr& in : header->instrs) {
      if (in.op != Opcode::Phi) continue;
      for (const Carried& cv : carried)
        if (in.dst == cv.phi)
          for (PhiArm& arm : in.phi)
            if (arm.pred == sh.latch) arm.value = Operand::make_reg(cv.merged);
    }
  }

  // 2. Gate block: enter the body only while every flag is still set.
  Operand gate_cond;
  {
    BasicBlock gate;
    gate.name = gate_name;
    Operand all = Operand::make_reg(flags[0].phi);
    for (size_t i = 1; i < flags.size(); ++i) {
      std::string dst = names.fresh_reg();
      gate.instrs.push_back(make_binop(Opcode::And, Type::I1, dst, all,
                                       Operand::make_reg(flags[i].phi)));
      all = Operand::make_reg(dst);
    }
    gate_cond = all;
    gate.instrs.push_back(make_condbr(all, sh.body_head, merge_name));
    insert_block_before(f, sh.body_head, std::move(gate));
  }

  // 3. Break blocks: clear the flag and guard the rest of the chain on it.
  for (const Flag& fl : flags) {
    const ChainBlock& cb = sh.chain[fl.chain_pos];
    BasicBlock* bb = f.block(cb.name);
    bb->instrs.pop_back();  // the break condbr
    Operand keep = cb.break_cond;
    if (cb.break_on_true) {
      std::string inv = names.fresh_reg();
      bb->instrs.push_back(make_binop(Opcode::Xor, Type::I1, inv, cb.break_cond,
                                      Operand::make_imm(1)));
      keep = Operand::make_reg(inv);
    }
    bb->instrs.push_back(make_binop(Opcode::And, Type::I1, fl.updated,
                                    Operand::make_reg(fl.phi), keep));
    bool is_last = fl.chain_pos + 1 == static_cast<int>(sh.chain.size());
    if (is_last) {
      // Fall-through and break meet immediately; carrier selection happens
      // here instead of on separate edges.
      bb->instrs.push_back(make_br(merge_name));
    } else {
      bb->instrs.push_back(make_condbr(Operand::make_reg(fl.updated),
                                       sh.chain[fl.chain_pos + 1].name,
                                       merge_name));
    }
  }
  // The last chain block falls through to the merge.
  {
    BasicBlock* last = f.block(sh.chain.back().name);
    Instr* term = &last->instrs.back();
    if (term->op == Opcode::Br && term->t1 == sh.latch) term->t1 = merge_name;
  }

  // Carrier updates for a break in the last chain block need an in-block
  // select: the same edge covers both break and fall-through.
  std::map<int, std::map<std::string, Operand>> last_break_select;
  for (const Flag& fl : flags) {
    if (fl.chain_pos + 1 != static_cast<int>(sh.chain.size())) continue;
    BasicBlock* bb = f.block(sh.chain[fl.chain_pos].name);
    for (ExitCarrier& ec : exit_carriers) {
      auto it = ec.break_values.find(fl.chain_pos);
      if (it == ec.break_values.end()) continue;
      std::string sel = names.fresh_reg();
      Instr cs = make_ctsel(ec.type, sel, Operand::make_reg(fl.updated),
                            Operand::make_reg(ec.carrier), it->second);
      bb->instrs.insert(bb->instrs.end() - 1, std::move(cs));
      last_break_select[fl.chain_pos][ec.phi_dst] = Operand::make_reg(sel);
    }
  }

  // 4. Merge block: rejoin early-outs with the fall-through path.
  {
    struct Incoming {
      std::string pred;
      int chain_pos;  // -1 for the gate edge
      bool is_fall;
    };
    std::vector<Incoming> incoming;
    incoming.push_back({gate_name, -1, false});
    for (const Flag& fl : flags)
      if (fl.chain_pos + 1 < static_cast<int>(sh.chain.size()))
        incoming.push_back({sh.chain[fl.chain_pos].name, fl.chain_pos, false});
    incoming.push_back({sh.chain.back().name,
                        static_cast<int>(sh.chain.size()) - 1, true});

    BasicBlock merge;
    merge.name = merge_name;
    for (const Carried& cv : carried) {
      std::vector<PhiArm> arms;
      for (const Incoming& inc : incoming) {
        Operand v = inc.chain_pos < 0
                        ? Operand::make_reg(cv.phi)
                        : value_at(cv.phi, cv.latch_value, cv.def_pos,
                                   inc.chain_pos);
        arms.push_back({inc.pred, v});
      }
      merge.instrs.push_back(make_phi(cv.type, cv.merged, std::move(arms)));
    }
    for (const Flag& fl : flags) {
      std::vector<PhiArm> arms;
      for (const Incoming& inc : incoming) {
        Operand v = inc.chain_pos < 0
                        ? Operand::make_reg(fl.phi)
                        : value_at(fl.phi, Operand::make_reg(fl.updated),
                                   fl.chain_pos, inc.chain_pos);
        arms.push_back({inc.pred, v});
      }
      merge.instrs.push_back(make_phi(Type::I1, fl.merged, std::move(arms)));
    }
    for (const ExitCarrier& ec : exit_carriers) {
      std::vector<PhiArm> arms;
      for (const Incoming& inc : incoming) {
        Operand v = Operand::make_reg(ec.carrier);
        if (inc.chain_pos >= 0) {
          if (!inc.is_fall && ec.break_values.count(inc.chain_pos))
            v = ec.break_values.at(inc.chain_pos);
          auto lb = last_break_select.find(inc.chain_pos);
          if (inc.is_fall && lb != last_break_select.end() &&
              lb->second.count(ec.phi_dst))
            v = lb->second.at(ec.phi_dst);
        }
        arms.push_back({inc.pred, v});
      }
      merge.instrs.push_back(make_phi(ec.type, ec.carrier_merged, std::move(arms)));
    }
    merge.instrs.push_back(make_br(sh.latch));
    insert_block_before(f, sh.latch, std::move(merge));
  }

  // 5. Exit block: break-merging phis become guarded selections.
  {
    BasicBlock* exit_bb = f.block(sh.exit);
    std::vector<Instr> phis, selects, rest;
    for (Instr& in : exit_bb->instrs) {
      const ExitCarrier* ec = nullptr;
      for (const ExitCarrier& c : exit_carriers)
        if (in.op == Opcode::Phi && in.dst == c.phi_dst) ec = &c;
      if (!ec) {
        (in.op == Opcode::Phi ? phis : rest).push_back(std::move(in));
        continue;
      }
      Operand all = Operand::make_reg(flags[0].phi);
      for (size_t i = 1; i < flags.size(); ++i) {
        std::string dst = names.fresh_reg();
        selects.push_back(make_binop(Opcode::And, Type::I1, dst, all,
                                     Operand::make_reg(flags[i].phi)));
        all = Operand::make_reg(dst);
      }
      selects.push_back(make_ctsel(ec->type, ec->phi_dst, all, ec->header_value,
                                   Operand::make_reg(ec->carrier)));
    }
    exit_bb->instrs.clear();
    for (auto* vec : {&phis, &selects, &rest})
      for (Instr& in : *vec) exit_bb->instrs.push_back(std::move(in));
  }
}

// Rewrite `for (i = init; i ult/ule C; i += step)` with a secret bound C:
// the loop runs to C's static maximum and the body is guarded by the
// original compare.
void rewrite_guarded_bound(Function& f, const LoopShape& sh) {
  const BasicBlock* header_ro = f.block(sh.header);
  const Instr* cmp = nullptr;
  for (const Instr& in : header_ro->instrs)
    if (in.dst == sh.counted.compare) cmp = &in;
  if (!cmp || (cmp->pred != CmpPred::Ult && cmp->pred != CmpPred::Ule))
    throw PassError(make_diag(f.name, "unboundable loop",
                              "data-dependent bound needs a ult/ule compare"));

  auto types = reg_types(f);
  Type ind_type =
      types.count(sh.counted.induction) ? types[sh.counted.induction] : Type::I32;
  auto iv = compute_intervals(f);
  uint64_t worst = operand_interval(iv, sh.counted.bound, ind_type).hi;
  uint64_t init = sh.counted.init, step = sh.counted.step;
  uint64_t max_trips;
  if (cmp->pred == CmpPred::Ult)
    max_trips = worst <= init ? 0 : (worst - init + step - 1) / step;
  else
    max_trips = worst < init ? 0 : (worst - init) / step + 1;
  if (step == 0 || max_trips == 0 || max_trips > (uint64_t(1) << 16))
    throw PassError(make_diag(f.name, "unboundable loop",
                              "no usable static bound for sensitive loop"));
  uint64_t new_bound = init + step * max_trips;
  if (new_bound > truncate_to(ind_type, ~uint64_t(0)))
    throw PassError(make_diag(f.name, "unboundable loop",
                              "static bound overflows the counter type"));

  NameGen names(f);
  std::string guard_name = names.fresh_block();
  std::string merge_name = names.fresh_block();

  struct Carried {
    std::string phi;
    Operand latch_value;
    Type type;
    std::string merged;
  };
  std::vector<Carried> carried;
  for (const Instr& in : header_ro->instrs) {
    if (in.op != Opcode::Phi) continue;
    for (const PhiArm& arm : in.phi) {
      if (arm.pred != sh.latch || !arm.value.is_reg()) continue;
      std::string db = def_block_of(f, arm.value.reg);
      for (const ChainBlock& cb : sh.chain)
        if (cb.name == db)
          carried.push_back({in.dst, arm.value, in.type, names.fresh_reg()});
    }
  }

  // Header: compare against the static bound instead.
  {
    BasicBlock* header = f.block(sh.header);
    header->instrs.pop_back();  // condbr
    std::string cmax = names.fresh_reg();
    Instr mx;
    mx.op = Opcode::ICmp;
    mx.pred = CmpPred::Ult;
    mx.type = Type::I1;
    mx.dst = cmax;
    mx.args = {Operand::make_reg(sh.counted.induction),
               Operand::make_imm(new_bound)};
    header->instrs.push_back(std::move(mx));
    header->instrs.push_back(
        make_condbr(Operand::make_reg(cmax), guard_name, sh.exit));
    for (Instr& in : header->instrs) {
      if (in.op != Opcode::Phi) continue;
      for (const Carried& cv : carried)
        if (in.dst == cv.phi)
          for (PhiArm& arm : in.phi)
            if (arm.pred == sh.latch) arm.value = Operand::make_reg(cv.merged);
    }
  }

  // Guard: the original (secret) compare decides whether the body runs.
  {
    BasicBlock guard;
    guard.name = guard_name;
    guard.instrs.push_back(make_condbr(Operand::make_reg(sh.counted.compare),
                                       sh.body_head, merge_name));
    insert_block_before(f, sh.body_head, std::move(guard));
  }

  // Chain tail now reaches the latch through the merge.
  {
    BasicBlock* last = f.block(sh.chain.back().name);
    Instr* term = &last->instrs.back();
    if (term->op == Opcode::Br && term->t1 == sh.latch) term->t1 = merge_name;
  }

  // Merge block.
  {
    BasicBlock merge;
    merge.name = merge_name;
    for (const Carried& cv : carried)
      merge.instrs.push_back(
          make_phi(cv.type, cv.merged,
                   {{guard_name, Operand::make_reg(cv.phi)},
                    {sh.chain.back().name, cv.latch_value}}));
    merge.instrs.push_back(make_br(sh.latch));
    insert_block_before(f, sh.latch, std::move(merge));
  }
}

// One standardization step; returns false when nothing was rewritten.
bool standardize_one_loop(Function& f, const Module& m, const SensitivityMap& s) {
  (void)m;
  Cfg cfg = Cfg::build(f);
  DomTree dt = dominator_tree(cfg);
  LoopInfo li = analyze_loops(f, cfg, dt);
  for (const Loop& loop : li.loops) {
    bool sensitive_exit = false;
    for (auto& [from, to] : loop.exits) {
      (void)to;
      const Instr* t = f.blocks[from].terminator();
      if (t && t->op == Opcode::CondBr && s.operand_tainted(f.name, t->args[0]))
        sensitive_exit = true;
    }
    if (!sensitive_exit) continue;
    if (!loop.counted || loop.latches.size() != 1)
      throw PassError(make_diag(f.name, "unboundable loop",
                                "sensitive loop exit without a counted form"));
    bool has_breaks = false;
    for (auto& [from, to] : loop.exits) {
      (void)to;
      if (from != loop.header) has_breaks = true;
    }
    LoopShape sh = resolve_chain_shape(f, cfg, loop);
    if (loop.trip_bound && has_breaks) {
      rewrite_breaks(f, sh);
      return true;
    }
    if (!loop.trip_bound && !has_breaks && !loop.counted->bound.is_imm()) {
      rewrite_guarded_bound(f, sh);
      return true;
    }
    if (loop.trip_bound && !has_breaks) continue;  // body-only sensitivity
    throw PassError(make_diag(f.name, "unboundable loop",
                              "unsupported sensitive loop shape"));
  }
  return false;
}

// Sensitivity of `f` within module `m`, with `f` replacing its original.
SensitivityMap taint_with(const Module& m, const Function& f) {
  Module tmp = m;
  if (Function* slot = tmp.function(f.name)) *slot = f;
  std::vector<Diag> ds = validate(tmp);
  if (!ds.empty())
    throw PassError(make_diag(f.name, "internal transform error", ds[0].str()));
  return propagate_taint(tmp);
}

}  // namespace

Function standardize(const Module& m, const Function& fin,
                     const SensitivityMap& s) {
  bool any_sensitive_branch = false;
  for (const BasicBlock& bb : fin.blocks) {
    const Instr* t = bb.terminator();
    if (t && t->op == Opcode::CondBr && s.operand_tainted(fin.name, t->args[0]))
      any_sensitive_branch = true;
  }
  if (!any_sensitive_branch) return fin;

  Function f = fin;
  unify_returns(f);
  SensitivityMap cur = taint_with(m, f);
  while (standardize_one_loop(f, m, cur)) cur = taint_with(m, f);
  return f;
}

std::optional<BranchRegion> find_branch_region(const Function& f,
                                               const std::string& entry_block) {
  Cfg cfg = Cfg::build(f);
  int A = cfg.index(entry_block);
  if (A < 0) return std::nullopt;
  const Instr* term = f.blocks[A].terminator();
  if (!term || term->op != Opcode::CondBr || !term->args[0].is_reg())
    return std::nullopt;
  if (term->t1 == term->t2) return std::nullopt;
  PostDomTree pdt = post_dominator_tree(cfg);
  DomTree dt = dominator_tree(cfg);
  int M = pdt.ipdom[A];
  if (M < 0) return std::nullopt;
  int Th = cfg.index(term->t1), Eh = cfg.index(term->t2);

  auto collect = [&](int head, std::vector<int>& out) -> bool {
    if (head == M) return true;  // empty arm
    std::vector<int> stack{head};
    std::set<int> seen;
    while (!stack.empty()) {
      int b = stack.back();
      stack.pop_back();
      if (b == M || seen.count(b)) continue;
      seen.insert(b);
      if (!dt.dominates(head, b)) return false;  // side entrance
      for (int succ : cfg.succs[b]) stack.push_back(succ);
    }
    out.assign(seen.begin(), seen.end());
    std::sort(out.begin(), out.end());
    return true;
  };

  BranchRegion r;
  r.entry = entry_block;
  r.cond = term->args[0].reg;
  r.merge = cfg.names[M];
  std::vector<int> tb, eb;
  if (!collect(Th, tb) || !collect(Eh, eb)) return std::nullopt;
  for (int b : tb)
    if (std::binary_search(eb.begin(), eb.end(), b)) return std::nullopt;

  // Each arm needs a unique edge into the merge.
  auto arm_exit = [&](const std::vector<int>& blocks,
                      std::string& out) -> bool {
    int exit = -1;
    for (int b : blocks)
      for (int succ : cfg.succs[b])
        if (succ == M) {
          if (exit >= 0 && exit != b) return false;
          exit = b;
        }
    if (!blocks.empty() && exit < 0) return false;
    out = exit < 0 ? "" : cfg.names[exit];
    return true;
  };
  if (!arm_exit(tb, r.then_exit) || !arm_exit(eb, r.else_exit))
    return std::nullopt;
  for (int b : tb) r.then_blocks.push_back(cfg.names[b]);
  for (int b : eb) r.else_blocks.push_back(cfg.names[b]);
  return r;
}

namespace {

void guard_arm_stores(Function& f, NameGen& names,
                      const std::vector<std::string>& arm, const Operand& cond,
                      bool is_then) {
  auto types = reg_types(f);
  for (const std::string& bname : arm) {
    BasicBlock* bb = f.block(bname);
    std::vector<Instr> out;
    for (Instr& in : bb->instrs) {
      if (in.op == Opcode::Call)
        throw PassError(make_diag(f.name + ":" + bname, "call in region",
                                  "calls must be inlined before mitigation"));
      if (in.op != Opcode::Store && in.op != Opcode::StoreField) {
        out.push_back(std::move(in));
        continue;
      }
      bool is_field = in.op == Opcode::StoreField;
      Operand value = is_field ? in.args[0] : in.args[1];
      Type vt = in.type;
      if (value.is_reg() && types.count(value.reg)) vt = types[value.reg];

      Instr old_load;
      old_load.op = is_field ? Opcode::LoadField : Opcode::Load;
      old_load.mem = in.mem;
      old_load.type = vt;
      old_load.dst = names.fresh_reg();
      if (!is_field) old_load.args = {in.args[0]};
      types[old_load.dst] = vt;

      std::string sel = names.fresh_reg();
      Instr ctsel = is_then
                        ? make_ctsel(vt, sel, cond, value,
                                     Operand::make_reg(old_load.dst))
                        : make_ctsel(vt, sel, cond,
                                     Operand::make_reg(old_load.dst), value);
      types[sel] = vt;
      if (is_field)
        in.args[0] = Operand::make_reg(sel);
      else
        in.args[1] = Operand::make_reg(sel);
      out.push_back(std::move(old_load));
      out.push_back(std::move(ctsel));
      out.push_back(std::move(in));
    }
    bb->instrs = std::move(out);
  }
}

}  // namespace

Function mitigate_branch(const Function& fin, const BranchRegion& r) {
  Function f = fin;
  NameGen names(f);
  Operand cond = Operand::make_reg(r.cond);

  // Degenerate conditional with two equal targets.
  if (r.then_blocks.empty() && r.else_blocks.empty()) {
    f.block(r.entry)->instrs.back() = make_br(r.merge);
    return f;
  }

  guard_arm_stores(f, names, r.then_blocks, cond, /*is_then=*/true);
  guard_arm_stores(f, names, r.else_blocks, cond, /*is_then=*/false);

  const Instr& term = *fin.block(r.entry)->terminator();
  std::string then_head = term.t1, else_head = term.t2;
  std::string then_pred = r.then_blocks.empty() ? r.entry : r.then_exit;
  std::string else_pred = r.else_blocks.empty() ? r.entry : r.else_exit;
  std::string final_block = r.else_blocks.empty() ? r.then_exit : r.else_exit;

  // Merge phis over the two region edges become selects in the final block.
  BasicBlock* merge = f.block(r.merge);
  std::vector<Instr> selects, phis, rest;
  for (Instr& in : merge->instrs) {
    if (in.op != Opcode::Phi) {
      rest.push_back(std::move(in));
      continue;
    }
    std::optional<Operand> vt, ve;
    std::vector<PhiArm> other_arms;
    for (PhiArm& arm : in.phi) {
      if (arm.pred == then_pred && !vt)
        vt = arm.value;
      else if (arm.pred == else_pred && !ve)
        ve = arm.value;
      else
        other_arms.push_back(arm);
    }
    if (!vt && !ve) {
      phis.push_back(std::move(in));
      continue;
    }
    if (!vt || !ve)
      throw PassError(make_diag(f.name + ":" + r.merge,
                                "region not standardized",
                                "merge phi lacks a value for one arm"));
    if (other_arms.empty()) {
      selects.push_back(make_ctsel(in.type, in.dst, cond, *vt, *ve));
    } else {
      std::string sel = names.fresh_reg();
      selects.push_back(make_ctsel(in.type, sel, cond, *vt, *ve));
      in.phi = std::move(other_arms);
      in.phi.push_back({final_block, Operand::make_reg(sel)});
      phis.push_back(std::move(in));
    }
  }
  merge->instrs.clear();
  for (Instr& in : phis) merge->instrs.push_back(std::move(in));
  for (Instr& in : rest) merge->instrs.push_back(std::move(in));

  BasicBlock* fb = f.block(final_block);
  for (Instr& sel : selects)
    fb->instrs.insert(fb->instrs.end() - 1, std::move(sel));

  // Linearize: entry -> THEN... -> ELSE... -> merge.
  BasicBlock* entry = f.block(r.entry);
  if (r.then_blocks.empty()) {
    entry->instrs.back() = make_br(else_head);
  } else {
    entry->instrs.back() = make_br(then_head);
    if (!r.else_blocks.empty())
      f.block(r.then_exit)->instrs.back() = make_br(else_head);
  }
  return f;
}

Function branch_repair_fn(const Module& m, const Function& fin,
                          const SensitivityMap& s) {
  Function f = standardize(m, fin, s);
  bool changed = !(f == fin);
  SensitivityMap cur = changed ? taint_with(m, f) : s;

  while (true) {
    Cfg cfg = Cfg::build(f);
    DomTree dt = dominator_tree(cfg);
    int best = -1, best_depth = -1;
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      const Instr* t = f.blocks[b].terminator();
      if (!t || t->op != Opcode::CondBr) continue;
      if (!cur.operand_tainted(f.name, t->args[0])) continue;
      int depth = dt.depth(static_cast<int>(b));
      if (depth > best_depth ||
          (depth == best_depth && static_cast<int>(b) > best)) {
        best = static_cast<int>(b);
        best_depth = depth;
      }
    }
    if (best < 0) break;
    auto region = find_branch_region(f, f.blocks[best].name);
    if (!region)
      throw PassError(make_diag(f.name + ":" + f.blocks[best].name,
                                "region not standardized",
                                "sensitive conditional has no unique merge"));
    f = mitigate_branch(f, *region);
  }
  simplify_cfg(f);
  remove_dead_pure_instrs(f);
  return f;
}

Module branch_repair_pass(const Module& m, const SensitivityMap& s) {
  Module out = m;
  for (Function& f : out.functions) f = branch_repair_fn(m, f, s);
  return out;
}

Function fold_ctsel(const Function& fin) {
  Function f = fin;
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<std::string, int> use_count;
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs)
        for_each_use(in, [&](const Operand& o) { use_count[o.reg]++; });

    for (BasicBlock& bb : f.blocks) {
      auto def_at = [&](const std::string& reg, size_t before) -> int {
        for (size_t i = 0; i < before; ++i)
          if (bb.instrs[i].dst == reg) return static_cast<int>(i);
        return -1;
      };
      // S2 store fed by ctsel(c, load, vE); find the matching earlier
      // S1 store fed by ctsel(c, vT, load) on the same cell.
      for (size_t s2 = 0; s2 < bb.instrs.size() && !changed; ++s2) {
        const Instr& st2 = bb.instrs[s2];
        if (st2.op != Opcode::Store || !st2.args[1].is_reg()) continue;
        int sel2 = def_at(st2.args[1].reg, s2);
        if (sel2 < 0 || bb.instrs[sel2].op != Opcode::CtSel) continue;
        const Instr& cs2 = bb.instrs[sel2];
        if (!cs2.args[1].is_reg()) continue;
        int ld2 = def_at(cs2.args[1].reg, sel2);
        if (ld2 < 0 || bb.instrs[ld2].op != Opcode::Load) continue;
        if (!(bb.instrs[ld2].mem == st2.mem) ||
            !(bb.instrs[ld2].args[0] == st2.args[0]))
          continue;
        if (use_count[cs2.dst] != 1 || use_count[bb.instrs[ld2].dst] != 1)
          continue;
        // Search backwards for S1.
        for (int s1 = static_cast<int>(s2) - 1; s1 >= 0; --s1) {
          const Instr& st1 = bb.instrs[s1];
          if (is_memory_access(st1.op)) {
            if (static_cast<int>(s1) == ld2) continue;
            if (st1.op == Opcode::Store && st1.mem == st2.mem &&
                st1.args[0] == st2.args[0]) {
              // candidate pair
            } else if (st1.mem.base == st2.mem.base) {
              break;  // intervening access to the same region
            } else {
              continue;
            }
          } else {
            continue;
          }
          if (!st1.args[1].is_reg()) break;
          int sel1 = def_at(st1.args[1].reg, s1);
          if (sel1 < 0 || bb.instrs[sel1].op != Opcode::CtSel) break;
          const Instr& cs1 = bb.instrs[sel1];
          if (!(cs1.args[0] == cs2.args[0])) break;
          if (!cs1.args[2].is_reg()) break;
          int ld1 = def_at(cs1.args[2].reg, sel1);
          if (ld1 < 0 || bb.instrs[ld1].op != Opcode::Load) break;
          if (!(bb.instrs[ld1].mem == st1.mem) ||
              !(bb.instrs[ld1].args[0] == st1.args[0]))
            break;
          if (use_count[cs1.dst] != 1 || use_count[bb.instrs[ld1].dst] != 1)
            break;

          Operand val_t = cs1.args[1];
          Operand val_e = cs2.args[2];
          Operand cond = cs1.args[0];
          Type t = cs1.type;
          // Rebuild: drop ld1, sel1, st1, ld2; rewrite sel2/st2.
          std::set<int> dead{ld1, sel1, static_cast<int>(s1), ld2};
          std::vector<Instr> out;
          for (size_t i = 0; i < bb.instrs.size(); ++i) {
            if (dead.count(static_cast<int>(i))) continue;
            if (i == static_cast<size_t>(sel2)) {
              if (val_t == val_e) continue;  // both sides equal: plain store
              out.push_back(make_ctsel(t, cs2.dst, cond, val_t, val_e));
              continue;
            }
            if (i == s2 && val_t == val_e) {
              Instr st = bb.instrs[i];
              st.args[1] = val_t;
              out.push_back(std::move(st));
              continue;
            }
            out.push_back(bb.instrs[i]);
          }
          bb.instrs = std::move(out);
          changed = true;
          break;
        }
      }
      if (changed) break;
    }
  }
  return f;
}

Function lower_ctsel(const Function& fin, CtselMode mode) {
  if (mode == CtselMode::Native) return fin;
  Function f = fin;
  NameGen names(f);
  for (BasicBlock& bb : f.blocks) {
    std::vector<Instr> out;
    for (Instr& in : bb.instrs) {
      if (in.op != Opcode::CtSel) {
        out.push_back(std::move(in));
        continue;
      }
      Type t = in.type;
      Operand c = in.args[0], tv = in.args[1], ev = in.args[2];
      Operand wide = c;
      if (t != Type::I1) {
        std::string cw = names.fresh_reg();
        Instr z;
        z.op = Opcode::Zext;
        z.type = t;
        z.dst = cw;
        z.args = {c};
        out.push_back(std::move(z));
        wide = Operand::make_reg(cw);
      }
      std::string c0 = names.fresh_reg();
      out.push_back(make_binop(Opcode::Sub, t, c0, wide, Operand::make_imm(1)));
      std::string c1 = names.fresh_reg();
      out.push_back(make_binop(Opcode::Xor, t, c1, Operand::make_reg(c0),
                               Operand::make_imm(~uint64_t(0))));
      std::string a0 = names.fresh_reg();
      out.push_back(make_binop(Opcode::And, t, a0, Operand::make_reg(c0), ev));
      std::string a1 = names.fresh_reg();
      out.push_back(make_binop(Opcode::And, t, a1, Operand::make_reg(c1), tv));
      out.push_back(
          make_binop(Opcode::Or, t, in.dst, Operand::make_reg(a0),
                     Operand::make_reg(a1)));
    }
    bb.instrs = std::move(out);
  }
  return f;
}

}  // namespace ctrepair
