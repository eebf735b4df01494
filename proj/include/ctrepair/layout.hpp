#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctrepair/intervals.hpp"
#include "ctrepair/ir.hpp"

namespace ctrepair {

// Fully associative LRU cache with `lines` lines of `cls` bytes.
struct CacheConfig {
  uint32_t lines = 512;
  uint32_t cls = 64;
  bool valid() const {
    return lines >= 1 && cls >= 8 && (cls & (cls - 1)) == 0;
  }
};

// One addressable memory region: a global array, a global record, or an
// entry-function reference parameter. Regions are cache line aligned and
// padded, so blocks of distinct regions never share a line.
struct Region {
  enum class Kind : uint8_t { Array, Record } kind = Kind::Array;
  std::string name;
  Type elem = Type::I8;          // arrays
  uint64_t length = 0;           // arrays: element count
  std::string record_type;       // records
  struct FieldSlot {
    std::string name;
    uint64_t offset = 0;         // byte offset inside the region
    Type elem = Type::I8;
    uint64_t length = 1;         // 1 for scalar fields
    bool is_array = false;
  };
  std::vector<FieldSlot> fields;  // records
  uint64_t byte_size = 0;
  bool from_param = false;

  const FieldSlot* field(const std::string& fname) const;
};

// A cache block: one line of one region.
struct MemBlock {
  int region = -1;
  uint32_t line = 0;
  bool operator==(const MemBlock&) const = default;
  auto operator<=>(const MemBlock&) const = default;
};

struct MemoryLayout {
  std::vector<Region> regions;
  std::map<std::string, int> by_name;

  int region_index(const std::string& name) const;
  uint32_t region_lines(int region, const CacheConfig& cfg) const;

  // Byte offset range [lo, hi] of an access given the element index range.
  struct ByteSpan {
    int region = -1;
    uint64_t lo = 0, hi = 0;  // inclusive byte offsets
  };
  std::optional<ByteSpan> access_span(const Function& f, const Instr& access,
                                      const std::map<std::string, Interval>& iv) const;

  // Concrete byte offset of an access for the simulator.
  std::optional<uint64_t> concrete_offset(const Function& f, const Instr& access,
                                          uint64_t index) const;

  static MemoryLayout build(const Module& m, const Function& entry);
};

// Classified memory access: either a single statically known cache line or a
// set of candidate lines.
struct AccessEvent {
  enum class Kind : uint8_t { Deterministic, Nondet } kind = Kind::Deterministic;
  MemBlock block;                 // Deterministic
  std::vector<MemBlock> candidates;  // Nondet, sorted

  static AccessEvent deterministic(MemBlock b);
  static AccessEvent nondet(std::vector<MemBlock> cs);
};

// Classify an access site with the interval analysis of its index. Returns
// nullopt for non-memory instructions.
std::optional<AccessEvent> classify_access(const MemoryLayout& layout,
                                           const Function& f, const Instr& access,
                                           const std::map<std::string, Interval>& iv,
                                           const CacheConfig& cfg);

}  // namespace ctrepair
