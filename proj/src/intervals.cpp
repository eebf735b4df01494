#include "ctrepair/intervals.hpp"

namespace ctrepair {

namespace {

int bit_length(uint64_t v) {
  int n = 0;
  while (v) {
    ++n;
    v >>= 1;
  }
  return n;
}

uint64_t low_mask(int bits) {
  return bits >= 64 ? ~uint64_t(0) : (uint64_t(1) << bits) - 1;
}

Interval clamp(Type t, Interval v) {
  uint64_t max = truncate_to(t, ~uint64_t(0));
  if (v.lo > max || v.hi > max || v.lo > v.hi) return Interval::full(t);
  return v;
}

Interval binop_interval(Opcode op, Type t, Interval a, Interval b) {
  uint64_t max = truncate_to(t, ~uint64_t(0));
  switch (op) {
    case Opcode::Add:
      if (a.hi > max - b.hi) return Interval::full(t);  // may wrap
      return {a.lo + b.lo, a.hi + b.hi};
    case Opcode::Sub:
      if (a.lo < b.hi) return Interval::full(t);
      return {a.lo - b.hi, a.hi - b.lo};
    case Opcode::Mul:
      if (b.hi != 0 && a.hi > max / b.hi) return Interval::full(t);
      return {a.lo * b.lo, a.hi * b.hi};
    case Opcode::And:
      return {0, a.hi < b.hi ? a.hi : b.hi};
    case Opcode::Or: {
      int bits = bit_length(a.hi | b.hi);
      return {a.lo > b.lo ? a.lo : b.lo, low_mask(bits) & max};
    }
    case Opcode::Xor: {
      int bits = bit_length(a.hi | b.hi);
      return {0, low_mask(bits) & max};
    }
    case Opcode::Shl: {
      if (b.lo != b.hi) return Interval::full(t);
      uint64_t sh = b.lo & 63;
      if (sh >= 64 || bit_length(a.hi) + static_cast<int>(sh) > bit_width(t))
        return Interval::full(t);
      return {a.lo << sh, a.hi << sh};
    }
    case Opcode::LShr:
      if (b.lo == b.hi) {
        uint64_t sh = b.lo & 63;
        return {a.lo >> sh, a.hi >> sh};
      }
      return {0, a.hi};
    default:
      return Interval::full(t);
  }
}

}  // namespace

Interval operand_interval(const std::map<std::string, Interval>& iv,
                          const Operand& o, Type context) {
  if (o.is_imm()) return Interval::point(truncate_to(context, o.imm));
  auto it = iv.find(o.reg);
  return it == iv.end() ? Interval::full(context) : it->second;
}

std::map<std::string, Interval> compute_intervals(const Function& f) {
  std::map<std::string, Interval> iv;
  std::map<std::string, char> computed;
  for (const Param& p : f.params)
    if (p.kind == Param::Kind::Scalar) {
      iv[p.name] = Interval::full(p.elem);
      computed[p.name] = 1;
    }

  auto op_iv = [&](const Operand& o, Type ctx) -> std::optional<Interval> {
    if (o.is_imm()) return Interval::point(truncate_to(ctx, o.imm));
    if (!computed.count(o.reg)) return std::nullopt;  // bottom
    return iv[o.reg];
  };

  auto step = [&]() {
    bool changed = false;
    auto update = [&](const std::string& dst, Interval v) {
      if (!computed.count(dst) || !(iv[dst] == v)) {
        // Ascend only: hull with the previous value.
        if (computed.count(dst)) v = v.hull(iv[dst]);
        if (!computed.count(dst) || !(iv[dst] == v)) {
          iv[dst] = v;
          computed[dst] = 1;
          changed = true;
        }
      }
    };
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs) {
        if (!in.has_dst()) continue;
        switch (in.op) {
          case Opcode::Const:
            update(in.dst, Interval::point(truncate_to(in.type, in.args[0].imm)));
            break;
          case Opcode::ICmp:
            update(in.dst, {0, 1});
            break;
          case Opcode::Zext: {
            auto a = op_iv(in.args[0], in.type);
            if (a) update(in.dst, *a);
            break;
          }
          case Opcode::Load:
          case Opcode::LoadField:
          case Opcode::Call:
            update(in.dst, Interval::full(in.type));
            break;
          case Opcode::CtSel: {
            auto t = op_iv(in.args[1], in.type);
            auto e = op_iv(in.args[2], in.type);
            if (t && e) update(in.dst, t->hull(*e));
            else if (t) update(in.dst, *t);
            else if (e) update(in.dst, *e);
            break;
          }
          case Opcode::Phi: {
            std::optional<Interval> acc;
            for (const PhiArm& arm : in.phi) {
              auto a = op_iv(arm.value, in.type);
              if (!a) continue;
              acc = acc ? acc->hull(*a) : *a;
            }
            if (acc) update(in.dst, *acc);
            break;
          }
          default:
            if (is_binop(in.op)) {
              auto a = op_iv(in.args[0], in.type);
              auto b = op_iv(in.args[1], in.type);
              if (a && b)
                update(in.dst, clamp(in.type, binop_interval(in.op, in.type, *a, *b)));
            }
            break;
        }
      }
    return changed;
  };

  // Ascending passes, then widen whatever is still moving to the full type
  // range and run to a (now guaranteed) fixpoint.
  bool moving = true;
  for (int pass = 0; pass < 6 && moving; ++pass) moving = step();
  if (moving) {
    std::map<std::string, Interval> before = iv;
    step();
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs)
        if (in.op == Opcode::Phi && in.has_dst() && computed.count(in.dst) &&
            !(before.count(in.dst) && before[in.dst] == iv[in.dst]))
          iv[in.dst] = Interval::full(in.type);
    for (int pass = 0; pass < 8 && step(); ++pass) {
    }
    // Anything still unstable (deep dependence chains) goes to type range.
    if (step())
      for (const BasicBlock& bb : f.blocks)
        for (const Instr& in : bb.instrs)
          if (in.has_dst() && in.op != Opcode::Const)
            iv[in.dst] = Interval::full(in.type);
  }
  return iv;
}

}  // namespace ctrepair
