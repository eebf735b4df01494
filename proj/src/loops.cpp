#include "ctrepair/loops.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace ctrepair {

namespace {

// Evaluate the counted-loop recurrence to an exact trip count. Returns
// nullopt when the loop does not terminate within the cap.
std::optional<uint64_t> simulate_trip(Type t, uint64_t init, uint64_t step,
                                      CmpPred pred, uint64_t bound,
                                      bool continue_on_true) {
  constexpr uint64_t kMaxTrips = 1u << 20;
  uint64_t i = truncate_to(t, init);
  uint64_t b = truncate_to(t, bound);
  for (uint64_t n = 0; n <= kMaxTrips; ++n) {
    bool c;
    switch (pred) {
      case CmpPred::Eq: c = i == b; break;
      case CmpPred::Ne: c = i != b; break;
      case CmpPred::Ult: c = i < b; break;
      case CmpPred::Ule: c = i <= b; break;
      case CmpPred::Slt: c = sign_extend(t, i) < sign_extend(t, b); break;
      case CmpPred::Sle: c = sign_extend(t, i) <= sign_extend(t, b); break;
      default: return std::nullopt;
    }
    if (c != continue_on_true) return n;
    i = truncate_to(t, i + step);
  }
  return std::nullopt;
}

const Instr* find_def(const Function& f, int block, const std::string& reg) {
  for (const Instr& in : f.blocks[block].instrs)
    if (in.dst == reg) return &in;
  return nullptr;
}

// Recognize `i = phi [pre: init] [latch: j]; j = add i, step` and the header
// compare, then compute the exact trip count.
void recognize_counted(const Function& f, const Cfg& cfg, Loop& loop) {
  if (loop.latches.size() != 1) return;
  int latch = loop.latches[0];
  const BasicBlock& hdr = f.blocks[loop.header];
  const Instr* term = hdr.terminator();
  if (!term || term->op != Opcode::CondBr || !term->args[0].is_reg()) return;

  int t1 = cfg.index(term->t1), t2 = cfg.index(term->t2);
  bool t1_in = loop.contains(t1), t2_in = loop.contains(t2);
  if (t1_in == t2_in) return;  // need exactly one exit successor
  int body_succ = t1_in ? t1 : t2;
  int exit_succ = t1_in ? t2 : t1;

  // Unique preheader: the only non-latch predecessor of the header.
  int preheader = -1;
  for (int p : cfg.preds[loop.header]) {
    if (p == latch) continue;
    if (preheader >= 0) return;
    preheader = p;
  }
  if (preheader < 0) return;

  const Instr* cmp = find_def(f, loop.header, term->args[0].reg);
  if (!cmp || cmp->op != Opcode::ICmp) return;

  // One side of the compare must be a canonical induction phi.
  for (int side = 0; side < 2; ++side) {
    const Operand& iv_op = cmp->args[side];
    const Operand& bound = cmp->args[1 - side];
    if (side == 1) continue;  // keep `icmp pred i, bound` orientation only
    if (!iv_op.is_reg()) continue;
    const Instr* phi = find_def(f, loop.header, iv_op.reg);
    if (!phi || phi->op != Opcode::Phi || phi->phi.size() != 2) continue;
    Operand init, next;
    bool ok = true;
    for (const PhiArm& arm : phi->phi) {
      int p = cfg.index(arm.pred);
      if (p == preheader) init = arm.value;
      else if (p == latch) next = arm.value;
      else ok = false;
    }
    if (!ok || !init.is_imm() || !next.is_reg()) continue;
    const Instr* inc = nullptr;
    for (int b : loop.body)
      if (const Instr* d = find_def(f, b, next.reg)) inc = d;
    if (!inc || inc->op != Opcode::Add) continue;
    Operand step;
    if (inc->args[0].is_reg() && inc->args[0].reg == iv_op.reg)
      step = inc->args[1];
    else if (inc->args[1].is_reg() && inc->args[1].reg == iv_op.reg)
      step = inc->args[0];
    else
      continue;
    if (!step.is_imm()) continue;

    Loop::CountedShape cs;
    cs.induction = iv_op.reg;
    cs.compare = cmp->dst;
    cs.bound = bound;
    cs.init = init.imm;
    cs.step = step.imm;
    cs.preheader = preheader;
    cs.body_succ = body_succ;
    cs.exit_succ = exit_succ;
    loop.counted = cs;

    if (bound.is_imm()) {
      bool continue_on_true = (body_succ == cfg.index(term->t1));
      loop.trip_bound = simulate_trip(phi->type, init.imm, step.imm, cmp->pred,
                                      bound.imm, continue_on_true);
    }
    return;
  }
}

}  // namespace

bool Loop::contains(int b) const {
  return std::binary_search(body.begin(), body.end(), b);
}

std::optional<uint64_t> LoopInfo::context_count(int block) const {
  uint64_t n = 1;
  for (const Loop& l : loops)
    if (l.contains(block)) {
      if (!l.trip_bound) return std::nullopt;
      n *= *l.trip_bound;
    }
  return n;
}

LoopInfo analyze_loops(const Function& f, const Cfg& cfg, const DomTree& dt) {
  LoopInfo li;
  std::map<int, std::set<int>> header_latches;
  for (size_t b = 0; b < cfg.succs.size(); ++b)
    for (int s : cfg.succs[b])
      if (dt.dominates(s, static_cast<int>(b)))
        header_latches[s].insert(static_cast<int>(b));

  for (auto& [header, latches] : header_latches) {
    Loop loop;
    loop.header = header;
    loop.latches.assign(latches.begin(), latches.end());
    // Body: blocks that reach a latch without passing through the header.
    std::set<int> body{header};
    std::vector<int> work(latches.begin(), latches.end());
    while (!work.empty()) {
      int b = work.back();
      work.pop_back();
      if (!body.insert(b).second) continue;
      for (int p : cfg.preds[b])
        if (!body.count(p)) work.push_back(p);
    }
    loop.body.assign(body.begin(), body.end());
    for (int b : loop.body)
      for (int s : cfg.succs[b])
        if (!body.count(s)) loop.exits.push_back({b, s});
    recognize_counted(f, cfg, loop);
    li.loops.push_back(std::move(loop));
  }
  std::sort(li.loops.begin(), li.loops.end(),
            [](const Loop& a, const Loop& b) {
              if (a.body.size() != b.body.size())
                return a.body.size() > b.body.size();
              return a.header < b.header;
            });
  return li;
}

LoopInfo analyze_loops(const Function& f) {
  Cfg cfg = Cfg::build(f);
  DomTree dt = dominator_tree(cfg);
  return analyze_loops(f, cfg, dt);
}

}  // namespace ctrepair
