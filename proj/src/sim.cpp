#include "ctrepair/sim.hpp"

#include <algorithm>
#include <cstring>

#include "ctrepair/validate.hpp"

namespace ctrepair {

SiteTally region_tally(const Module& m, const TimingTrace& tr,
                       const std::string& region) {
  SiteTally t;
  const Function* f = m.entry_function();
  if (!f) return t;
  for (const auto& [site, tally] : tr.site_tallies) {
    if (site.function != f->name) continue;
    if (site.block >= static_cast<int>(f->blocks.size())) continue;
    const BasicBlock& bb = f->blocks[site.block];
    if (site.index >= static_cast<int>(bb.instrs.size())) continue;
    const Instr& in = bb.instrs[site.index];
    if (!is_memory_access(in.op) || in.mem.str() != region) continue;
    t.hits += tally.hits;
    t.misses += tally.misses;
  }
  return t;
}

namespace {

struct POperand {
  bool imm = true;
  uint64_t value = 0;  // immediate (pre-truncated) or slot index
};

struct PPhi {
  int pred_block;
  POperand value;
};

struct PInstr {
  Opcode op;
  Type type = Type::I32;
  Type cmp_type = Type::I32;  // icmp operand type
  CmpPred pred = CmpPred::Eq;
  int dst = -1;
  POperand a, b, c;
  std::vector<PPhi> phi;
  int t1 = -1, t2 = -1;
  // memory
  int region = -1;
  int field = -1;           // field slot index, -1 for plain arrays
  uint64_t base_off = 0;    // byte offset of the accessed field
  uint64_t length = 0;      // element count
  Type elem = Type::I8;
  uint32_t elem_bytes = 1;
  SiteId site;
};

struct PBlock {
  std::vector<PInstr> phis;
  std::vector<PInstr> body;  // includes terminator
  int id = 0;
};

struct RegionStore {
  // Arrays use fields[0]; records one entry per field slot.
  std::vector<std::vector<uint64_t>> fields;
};

class ConcreteCache {
 public:
  explicit ConcreteCache(const CacheConfig& cfg) : n_(cfg.lines) {}

  bool access(MemBlock b) {
    for (size_t i = 0; i < order_.size(); ++i) {
      if (order_[i] == b) {
        order_.erase(order_.begin() + i);
        order_.insert(order_.begin(), b);
        return true;
      }
    }
    order_.insert(order_.begin(), b);
    if (order_.size() > n_) order_.pop_back();
    return false;
  }

  const std::vector<MemBlock>& blocks() const { return order_; }

 private:
  size_t n_;
  std::vector<MemBlock> order_;  // most recently used first
};

}  // namespace

struct PreparedModule::Impl {
  Module module;  // keep a copy: prepared operands point into its layout
  SimConfig cfg;
  MemoryLayout layout;
  std::vector<PBlock> blocks;
  int entry_block = 0;
  int num_slots = 0;
  std::map<std::string, int> slot_of;
  std::vector<std::pair<std::string, Type>> scalar_params;  // name, type

  const Function* fn = nullptr;

  Impl(const Module& m, const SimConfig& c) : module(m), cfg(c) {
    fn = module.entry_function();
    if (!fn) {
      Diag d;
      d.invariant = "entry function";
      d.message = "module has no entry function '" + module.entry + "'";
      throw PassError(d);
    }
    layout = MemoryLayout::build(module, *fn);
    prepare();
  }

  int slot(const std::string& reg) {
    auto it = slot_of.find(reg);
    if (it != slot_of.end()) return it->second;
    slot_of[reg] = num_slots;
    return num_slots++;
  }

  POperand prep_operand(const Operand& o, Type t) {
    POperand p;
    if (o.is_imm()) {
      p.imm = true;
      p.value = truncate_to(t, o.imm);
    } else {
      p.imm = false;
      p.value = static_cast<uint64_t>(slot(o.reg));
    }
    return p;
  }

  void prepare() {
    const Function& f = *fn;
    std::map<std::string, Type> types;
    for (const Param& p : f.params)
      if (p.kind == Param::Kind::Scalar) {
        types[p.name] = p.elem;
        scalar_params.push_back({p.name, p.elem});
        slot(p.name);
      }
    for (const BasicBlock& bb : f.blocks)
      for (const Instr& in : bb.instrs)
        if (in.has_dst()) types[in.dst] = in.type;

    auto operand_type = [&](const Instr& in) {
      for (const Operand& o : in.args)
        if (o.is_reg() && types.count(o.reg)) return types[o.reg];
      return in.type;
    };

    blocks.resize(f.blocks.size());
    for (size_t b = 0; b < f.blocks.size(); ++b) {
      PBlock& pb = blocks[b];
      pb.id = static_cast<int>(b);
      for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
        const Instr& in = f.blocks[b].instrs[i];
        PInstr pi;
        pi.op = in.op;
        pi.type = in.type;
        pi.pred = in.pred;
        pi.site = SiteId{f.name, static_cast<int>(b), static_cast<int>(i)};
        if (in.has_dst()) pi.dst = slot(in.dst);
        switch (in.op) {
          case Opcode::Const:
            pi.a = prep_operand(in.args[0], in.type);
            break;
          case Opcode::ICmp:
            pi.cmp_type = operand_type(in);
            pi.a = prep_operand(in.args[0], pi.cmp_type);
            pi.b = prep_operand(in.args[1], pi.cmp_type);
            break;
          case Opcode::Zext:
            pi.a = prep_operand(in.args[0], in.type);
            break;
          case Opcode::CtSel:
            pi.a = prep_operand(in.args[0], Type::I1);
            pi.b = prep_operand(in.args[1], in.type);
            pi.c = prep_operand(in.args[2], in.type);
            break;
          case Opcode::Phi:
            for (const PhiArm& arm : in.phi) {
              PPhi pa;
              pa.pred_block = f.block_index(arm.pred);
              pa.value = prep_operand(arm.value, in.type);
              pi.phi.push_back(pa);
            }
            break;
          case Opcode::Load:
          case Opcode::Store:
          case Opcode::LoadField:
          case Opcode::StoreField:
            prep_memory(f, in, pi);
            break;
          case Opcode::Br:
            pi.t1 = f.block_index(in.t1);
            break;
          case Opcode::CondBr:
            pi.a = prep_operand(in.args[0], Type::I1);
            pi.t1 = f.block_index(in.t1);
            pi.t2 = f.block_index(in.t2);
            break;
          case Opcode::Ret:
            if (!in.args.empty())
              pi.a = prep_operand(in.args[0], f.ret.value_or(Type::I64));
            else
              pi.dst = -2;  // void marker
            break;
          case Opcode::Call: {
            Diag d;
            d.invariant = "module not inlined";
            d.message = "call to '" + in.callee + "' reached the simulator";
            throw PassError(d);
          }
          default:
            if (is_binop(in.op)) {
              pi.a = prep_operand(in.args[0], in.type);
              pi.b = prep_operand(in.args[1], in.type);
            }
            break;
        }
        if (in.op == Opcode::Phi)
          pb.phis.push_back(std::move(pi));
        else
          pb.body.push_back(std::move(pi));
      }
    }
    entry_block = 0;
  }

  void prep_memory(const Function& f, const Instr& in, PInstr& pi) {
    pi.region = layout.region_index(in.mem.base);
    const Region& r = layout.regions[pi.region];
    if (in.op == Opcode::LoadField || in.op == Opcode::StoreField) {
      for (size_t s = 0; s < r.fields.size(); ++s)
        if (r.fields[s].name == in.mem.field) {
          pi.field = static_cast<int>(s);
          pi.base_off = r.fields[s].offset;
          pi.elem = r.fields[s].elem;
          pi.length = 1;
        }
      if (in.op == Opcode::StoreField) pi.a = prep_operand(in.args[0], pi.elem);
    } else {
      if (in.mem.is_field()) {
        for (size_t s = 0; s < r.fields.size(); ++s)
          if (r.fields[s].name == in.mem.field) {
            pi.field = static_cast<int>(s);
            pi.base_off = r.fields[s].offset;
            pi.elem = r.fields[s].elem;
            pi.length = r.fields[s].length;
          }
      } else {
        pi.field = -1;
        pi.base_off = 0;
        pi.elem = r.elem;
        pi.length = r.length;
      }
      pi.a = prep_operand(in.args[0], Type::I64);
      if (in.op == Opcode::Store) pi.b = prep_operand(in.args[1], pi.elem);
    }
    pi.elem_bytes = static_cast<uint32_t>(byte_width(pi.elem));
  }

  // ---- execution ----

  std::vector<RegionStore> init_memory(const Inputs& inputs) const {
    std::vector<RegionStore> mem(layout.regions.size());
    for (size_t r = 0; r < layout.regions.size(); ++r) {
      const Region& reg = layout.regions[r];
      if (reg.kind == Region::Kind::Array) {
        mem[r].fields.resize(1);
        mem[r].fields[0].assign(reg.length, 0);
        if (!reg.from_param) {
          if (const GlobalArray* g = module.array(reg.name); g && g->init)
            for (size_t i = 0; i < g->init->size(); ++i)
              mem[r].fields[0][i] = truncate_to(g->elem, (*g->init)[i]);
        }
        auto it = inputs.arrays.find(reg.name);
        if (it != inputs.arrays.end())
          for (size_t i = 0; i < it->second.size() && i < reg.length; ++i)
            mem[r].fields[0][i] = truncate_to(reg.elem, it->second[i]);
      } else {
        mem[r].fields.resize(reg.fields.size());
        for (size_t s = 0; s < reg.fields.size(); ++s)
          mem[r].fields[s].assign(reg.fields[s].length, 0);
        auto it = inputs.records.find(reg.name);
        if (it != inputs.records.end())
          for (size_t s = 0; s < reg.fields.size(); ++s) {
            auto fit = it->second.find(reg.fields[s].name);
            if (fit == it->second.end()) continue;
            for (size_t i = 0; i < fit->second.size() && i < reg.fields[s].length; ++i)
              mem[r].fields[s][i] = truncate_to(reg.fields[s].elem, fit->second[i]);
          }
      }
    }
    return mem;
  }

  TimingTrace run(const Inputs& inputs) const {
    TimingTrace tr;
    std::vector<uint64_t> slots(num_slots, 0);
    for (const auto& [name, type] : scalar_params) {
      uint64_t v = 0;
      auto it = inputs.scalars.find(name);
      if (it != inputs.scalars.end()) v = it->second;
      slots[slot_of.at(name)] = truncate_to(type, v);
    }
    std::vector<RegionStore> mem = init_memory(inputs);
    ConcreteCache cache(cfg.cache);
    const CostModel& cm = cfg.cost;

    auto val = [&](const POperand& o) {
      return o.imm ? o.value : slots[o.value];
    };

    std::vector<uint64_t> phi_buf;
    int cur = entry_block, prev = -1;
    while (true) {
      const PBlock& pb = blocks[cur];
      tr.block_seq.push_back(cur);
      // Parallel phi semantics: read all incoming values, then commit.
      if (!pb.phis.empty()) {
        phi_buf.clear();
        for (const PInstr& pi : pb.phis) {
          uint64_t v = 0;
          for (const PPhi& arm : pi.phi)
            if (arm.pred_block == prev) v = val(arm.value);
          phi_buf.push_back(truncate_to(pi.type, v));
          tr.cpu_cycles += cm.phi;
          ++tr.steps;
        }
        for (size_t i = 0; i < pb.phis.size(); ++i)
          slots[pb.phis[i].dst] = phi_buf[i];
      }
      int next = -1;
      for (const PInstr& pi : pb.body) {
        ++tr.steps;
        if (tr.steps > cfg.max_steps) {
          tr.trapped = true;
          tr.trap_reason = "step limit exceeded (nontermination guard)";
          tr.trap_site = pi.site;
          finish(tr, mem);
          return tr;
        }
        switch (pi.op) {
          case Opcode::Const:
            slots[pi.dst] = val(pi.a);
            tr.cpu_cycles += cm.constant;
            break;
          case Opcode::ICmp:
            slots[pi.dst] = eval_icmp(pi.pred, pi.cmp_type, val(pi.a), val(pi.b));
            tr.cpu_cycles += cm.alu;
            break;
          case Opcode::Zext:
            slots[pi.dst] = val(pi.a);  // stored values are zero-extended
            tr.cpu_cycles += cm.alu;
            break;
          case Opcode::CtSel:
            slots[pi.dst] = val(pi.a) ? val(pi.b) : val(pi.c);
            tr.cpu_cycles += cm.ctsel;
            break;
          case Opcode::Load:
          case Opcode::Store:
          case Opcode::LoadField:
          case Opcode::StoreField: {
            uint64_t idx = 0;
            if (pi.op == Opcode::Load || pi.op == Opcode::Store) idx = val(pi.a);
            if (idx >= pi.length) {
              tr.trapped = true;
              tr.trap_reason = "index out of bounds: " + std::to_string(idx) +
                               " >= " + std::to_string(pi.length);
              tr.trap_site = pi.site;
              finish(tr, mem);
              return tr;
            }
            uint64_t byte_off = pi.base_off + idx * pi.elem_bytes;
            MemBlock blk{pi.region, static_cast<uint32_t>(byte_off / cfg.cache.cls)};
            bool hit = cache.access(blk);
            SiteTally& tally = tr.site_tallies[pi.site];
            bool first = tally.hits + tally.misses == 0;
            if (hit) {
              ++tally.hits;
              ++tr.hits;
            } else {
              ++tally.misses;
              ++tr.misses;
              if (first)
                tally.first_is_miss = true;
              else
                ++tally.misses_after_first;
            }
            tr.cpu_cycles += cm.mem_cpu;
            int fslot = pi.field < 0 ? 0 : pi.field;
            if (pi.op == Opcode::Load || pi.op == Opcode::LoadField)
              slots[pi.dst] = mem[pi.region].fields[fslot][idx];
            else if (pi.op == Opcode::Store)
              mem[pi.region].fields[fslot][idx] = truncate_to(pi.elem, val(pi.b));
            else
              mem[pi.region].fields[fslot][0] = truncate_to(pi.elem, val(pi.a));
            break;
          }
          case Opcode::Br:
            tr.cpu_cycles += cm.branch;
            next = pi.t1;
            break;
          case Opcode::CondBr:
            tr.cpu_cycles += cm.branch;
            next = val(pi.a) ? pi.t1 : pi.t2;
            break;
          case Opcode::Ret:
            tr.cpu_cycles += cm.branch;
            if (pi.dst != -2) tr.ret = val(pi.a);
            finish(tr, mem);
            return tr;
          default:
            if (is_binop(pi.op)) {
              slots[pi.dst] = eval_binop(pi.op, pi.type, val(pi.a), val(pi.b));
              tr.cpu_cycles += cm.alu;
            }
            break;
        }
      }
      prev = cur;
      cur = next;
    }
  }

  void finish(TimingTrace& tr, const std::vector<RegionStore>& mem) const {
    tr.cycles = tr.cpu_cycles + tr.hits * cfg.cost.hit + tr.misses * cfg.cost.miss;
    for (size_t r = 0; r < layout.regions.size(); ++r) {
      const Region& reg = layout.regions[r];
      if (reg.kind == Region::Kind::Array) {
        tr.array_memory[reg.name] = mem[r].fields[0];
      } else {
        auto& rec = tr.record_memory[reg.name];
        for (size_t s = 0; s < reg.fields.size(); ++s)
          rec[reg.fields[s].name] = mem[r].fields[s];
      }
    }
  }
};

PreparedModule::PreparedModule(const Module& m, const SimConfig& cfg)
    : impl_(std::make_unique<Impl>(m, cfg)) {}
PreparedModule::~PreparedModule() = default;
PreparedModule::PreparedModule(PreparedModule&&) noexcept = default;

TimingTrace PreparedModule::run(const Inputs& inputs) const {
  return impl_->run(inputs);
}

const Function& PreparedModule::entry() const { return *impl_->fn; }

TimingTrace run(const Module& m, const Inputs& inputs, const SimConfig& cfg) {
  PreparedModule pm(m, cfg);
  return pm.run(inputs);
}

SecretSampler SecretSampler::exhaustive() {
  SecretSampler s;
  s.kind = Kind::Exhaustive;
  return s;
}

SecretSampler SecretSampler::random(uint64_t seed, uint32_t trials) {
  SecretSampler s;
  s.kind = Kind::Random;
  s.seed = seed;
  s.trials = trials;
  return s;
}

std::optional<uint32_t> secret_space_bits(const Function& f) {
  uint64_t bits = 0;
  for (const Param& p : f.params) {
    if (!p.secret) continue;
    switch (p.kind) {
      case Param::Kind::Scalar:
        bits += bit_width(p.elem);
        break;
      case Param::Kind::ArrayRef:
        bits += bit_width(p.elem) * p.length;
        break;
      case Param::Kind::RecordRef:
        return std::nullopt;
    }
    if (bits > 64) return std::nullopt;
  }
  return static_cast<uint32_t>(bits);
}

namespace {

// Assign the bit pattern `v` to the secret parameters (low bits first).
Inputs secrets_from_counter(const Function& f, uint64_t v) {
  Inputs in;
  for (const Param& p : f.params) {
    if (!p.secret) continue;
    if (p.kind == Param::Kind::Scalar) {
      int w = bit_width(p.elem);
      in.scalars[p.name] = truncate_to(p.elem, v);
      v = w >= 64 ? 0 : v >> w;
    } else if (p.kind == Param::Kind::ArrayRef) {
      std::vector<uint64_t> vals(p.length, 0);
      for (uint64_t i = 0; i < p.length; ++i) {
        int w = bit_width(p.elem);
        vals[i] = truncate_to(p.elem, v);
        v = w >= 64 ? 0 : v >> w;
      }
      in.arrays[p.name] = std::move(vals);
    }
  }
  return in;
}

Inputs random_secrets(const Function& f, std::mt19937_64& rng) {
  return random_inputs(f, rng, /*secret_only=*/true);
}

}  // namespace

Inputs random_inputs(const Function& f, std::mt19937_64& rng, bool secret_only) {
  Inputs in;
  for (const Param& p : f.params) {
    if (secret_only && !p.secret) continue;
    switch (p.kind) {
      case Param::Kind::Scalar:
        in.scalars[p.name] = truncate_to(p.elem, rng());
        break;
      case Param::Kind::ArrayRef: {
        std::vector<uint64_t> vals(p.length);
        for (auto& v : vals) v = truncate_to(p.elem, rng());
        in.arrays[p.name] = std::move(vals);
        break;
      }
      case Param::Kind::RecordRef:
        // Record parameters default to zero contents; ports that need
        // random record state use array parameters instead.
        break;
    }
  }
  return in;
}

Inputs zero_inputs(const Function& f) {
  Inputs in;
  for (const Param& p : f.params) {
    switch (p.kind) {
      case Param::Kind::Scalar:
        in.scalars[p.name] = 0;
        break;
      case Param::Kind::ArrayRef:
        in.arrays[p.name] = std::vector<uint64_t>(p.length, 0);
        break;
      case Param::Kind::RecordRef:
        break;
    }
  }
  return in;
}

Inputs merge_inputs(const Inputs& base, const Inputs& over) {
  Inputs out = base;
  for (const auto& [k, v] : over.scalars) out.scalars[k] = v;
  for (const auto& [k, v] : over.arrays) out.arrays[k] = v;
  for (const auto& [k, v] : over.records) out.records[k] = v;
  return out;
}

LeakVerdict check_constant_time(const Module& m, const Inputs& public_inputs,
                                const SecretSampler& sampler, const SimConfig& cfg) {
  PreparedModule pm(m, cfg);
  const Function& f = pm.entry();
  LeakVerdict v;

  std::optional<TimingTrace> first;
  Inputs first_secrets;
  uint64_t min_c = ~uint64_t(0), max_c = 0;
  Inputs min_secrets, max_secrets;

  auto consider = [&](const Inputs& secrets) {
    TimingTrace tr = pm.run(merge_inputs(public_inputs, secrets));
    if (tr.trapped) {
      Diag d;
      d.invariant = "simulation trap";
      d.message = tr.trap_reason;
      throw PassError(d);
    }
    ++v.trials;
    if (tr.cycles < min_c) {
      min_c = tr.cycles;
      min_secrets = secrets;
    }
    if (tr.cycles > max_c) {
      max_c = tr.cycles;
      max_secrets = secrets;
    }
    if (!first) {
      first = tr;
      first_secrets = secrets;
      return;
    }
    if (tr.block_seq != first->block_seq) v.block_seqs_equal = false;
    if (tr.site_tallies != first->site_tallies) v.site_tallies_equal = false;
  };

  if (sampler.kind == SecretSampler::Kind::Exhaustive) {
    auto bits = secret_space_bits(f);
    if (!bits || *bits > 16) {
      Diag d;
      d.invariant = "secret space too large";
      d.message = "exhaustive checking requires <= 16 secret bits";
      throw PassError(d);
    }
    uint64_t count = uint64_t(1) << *bits;
    for (uint64_t i = 0; i < count; ++i) consider(secrets_from_counter(f, i));
  } else {
    std::mt19937_64 rng(sampler.seed);
    for (uint32_t i = 0; i < sampler.trials; ++i)
      consider(random_secrets(f, rng));
  }

  if (v.trials == 0) return v;
  v.min_cycles = min_c;
  v.max_cycles = max_c;
  v.max_cycle_delta = max_c - min_c;
  v.constant_time = v.max_cycle_delta == 0;
  if (!v.constant_time) v.witness = {min_secrets, max_secrets};
  return v;
}

std::map<SiteId, SiteBehavior> classify_site_behavior(
    const std::vector<TimingTrace>& traces) {
  std::map<SiteId, SiteBehavior> out;
  if (traces.empty()) return out;
  std::set<SiteId> sites;
  for (const TimingTrace& tr : traces) {
    std::set<SiteId> these;
    for (const auto& [site, tally] : tr.site_tallies) {
      (void)tally;
      these.insert(site);
    }
    if (sites.empty())
      sites = these;
    else if (sites != these) {
      Diag d;
      d.invariant = "mismatched site sets";
      d.message = "traces come from different programs";
      throw PassError(d);
    }
  }
  for (const SiteId& site : sites) {
    bool always_hit = true, always_miss = true, first_miss_then_hit = true;
    for (const TimingTrace& tr : traces) {
      const SiteTally& t = tr.site_tallies.at(site);
      if (t.misses > 0) always_hit = false;
      if (t.hits > 0) always_miss = false;
      if (!(t.first_is_miss && t.misses_after_first == 0 && t.hits > 0))
        first_miss_then_hit = false;
    }
    if (always_hit)
      out[site] = SiteBehavior::AlwaysHit;
    else if (always_miss)
      out[site] = SiteBehavior::AlwaysMiss;
    else if (first_miss_then_hit)
      out[site] = SiteBehavior::FirstMissThenHit;
    else
      out[site] = SiteBehavior::Mixed;
  }
  return out;
}

}  // namespace ctrepair
