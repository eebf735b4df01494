#include "ctrepair/layout.hpp"

namespace ctrepair {

const Region::FieldSlot* Region::field(const std::string& fname) const {
  for (const FieldSlot& f : fields)
    if (f.name == fname) return &f;
  return nullptr;
}

int MemoryLayout::region_index(const std::string& name) const {
  auto it = by_name.find(name);
  return it == by_name.end() ? -1 : it->second;
}

uint32_t MemoryLayout::region_lines(int region, const CacheConfig& cfg) const {
  const Region& r = regions[region];
  return static_cast<uint32_t>((r.byte_size + cfg.cls - 1) / cfg.cls);
}

namespace {

Region make_record_region(const Module& m, const std::string& name,
                          const std::string& type_name) {
  Region r;
  r.kind = Region::Kind::Record;
  r.name = name;
  r.record_type = type_name;
  const RecordType* rt = m.record_type(type_name);
  uint64_t off = 0;
  if (rt)
    for (const RecordField& f : rt->fields) {
      uint64_t align = byte_width(f.elem);
      off = (off + align - 1) / align * align;
      Region::FieldSlot slot;
      slot.name = f.name;
      slot.offset = off;
      slot.elem = f.elem;
      slot.is_array = f.is_array;
      slot.length = f.is_array ? f.length : 1;
      off += slot.length * byte_width(f.elem);
      r.fields.push_back(std::move(slot));
    }
  r.byte_size = off ? off : 1;
  return r;
}

}  // namespace

MemoryLayout MemoryLayout::build(const Module& m, const Function& entry) {
  MemoryLayout L;
  auto add = [&](Region r) {
    L.by_name[r.name] = static_cast<int>(L.regions.size());
    L.regions.push_back(std::move(r));
  };
  for (const GlobalArray& g : m.arrays) {
    Region r;
    r.kind = Region::Kind::Array;
    r.name = g.name;
    r.elem = g.elem;
    r.length = g.length;
    r.byte_size = g.byte_size();
    add(std::move(r));
  }
  for (const GlobalRecord& g : m.record_globals)
    add(make_record_region(m, g.name, g.type_name));
  for (const Param& p : entry.params) {
    if (p.kind == Param::Kind::ArrayRef) {
      Region r;
      r.kind = Region::Kind::Array;
      r.name = p.name;
      r.elem = p.elem;
      r.length = p.length;
      r.byte_size = p.length * byte_width(p.elem);
      r.from_param = true;
      add(std::move(r));
    } else if (p.kind == Param::Kind::RecordRef) {
      Region r = make_record_region(m, p.name, p.record);
      r.from_param = true;
      add(std::move(r));
    }
  }
  return L;
}

std::optional<MemoryLayout::ByteSpan> MemoryLayout::access_span(
    const Function& f, const Instr& access,
    const std::map<std::string, Interval>& iv) const {
  (void)f;
  int rid = region_index(access.mem.base);
  if (rid < 0) return std::nullopt;
  const Region& r = regions[rid];
  ByteSpan span;
  span.region = rid;
  if (access.op == Opcode::LoadField || access.op == Opcode::StoreField) {
    const Region::FieldSlot* slot = r.field(access.mem.field);
    if (!slot) return std::nullopt;
    span.lo = slot->offset;
    span.hi = slot->offset + byte_width(slot->elem) - 1;
    return span;
  }
  uint64_t base_off = 0, length = r.length;
  Type elem = r.elem;
  if (access.mem.is_field()) {
    const Region::FieldSlot* slot = r.field(access.mem.field);
    if (!slot || !slot->is_array) return std::nullopt;
    base_off = slot->offset;
    length = slot->length;
    elem = slot->elem;
  }
  const Operand& idx = access.args[0];
  Interval ii = operand_interval(iv, idx, Type::I64);
  uint64_t lo = ii.lo, hi = ii.hi;
  if (hi >= length) hi = length - 1;  // in-bounds execution assumed; OOB traps
  if (lo > hi) lo = 0, hi = length - 1;
  uint64_t ew = byte_width(elem);
  span.lo = base_off + lo * ew;
  span.hi = base_off + hi * ew + (ew - 1);
  return span;
}

std::optional<uint64_t> MemoryLayout::concrete_offset(const Function& f,
                                                      const Instr& access,
                                                      uint64_t index) const {
  (void)f;
  int rid = region_index(access.mem.base);
  if (rid < 0) return std::nullopt;
  const Region& r = regions[rid];
  if (access.op == Opcode::LoadField || access.op == Opcode::StoreField) {
    const Region::FieldSlot* slot = r.field(access.mem.field);
    if (!slot) return std::nullopt;
    return slot->offset;
  }
  uint64_t base_off = 0, length = r.length;
  Type elem = r.elem;
  if (access.mem.is_field()) {
    const Region::FieldSlot* slot = r.field(access.mem.field);
    if (!slot || !slot->is_array) return std::nullopt;
    base_off = slot->offset;
    length = slot->length;
    elem = slot->elem;
  }
  if (index >= length) return std::nullopt;
  return base_off + index * byte_width(elem);
}

AccessEvent AccessEvent::deterministic(MemBlock b) {
  AccessEvent e;
  e.kind = Kind::Deterministic;
  e.block = b;
  return e;
}

AccessEvent AccessEvent::nondet(std::vector<MemBlock> cs) {
  AccessEvent e;
  e.kind = Kind::Nondet;
  e.candidates = std::move(cs);
  return e;
}

std::optional<AccessEvent> classify_access(const MemoryLayout& layout,
                                           const Function& f, const Instr& access,
                                           const std::map<std::string, Interval>& iv,
                                           const CacheConfig& cfg) {
  if (!is_memory_access(access.op)) return std::nullopt;
  auto span = layout.access_span(f, access, iv);
  if (!span) return std::nullopt;
  uint32_t line_lo = static_cast<uint32_t>(span->lo / cfg.cls);
  uint32_t line_hi = static_cast<uint32_t>(span->hi / cfg.cls);
  if (line_lo == line_hi)
    return AccessEvent::deterministic(MemBlock{span->region, line_lo});
  std::vector<MemBlock> cs;
  for (uint32_t l = line_lo; l <= line_hi; ++l)
    cs.push_back(MemBlock{span->region, l});
  return AccessEvent::nondet(std::move(cs));
}

}  // namespace ctrepair
