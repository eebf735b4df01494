#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ctrepair/ir.hpp"

namespace ctrepair {

// Unsigned value interval [lo, hi], always within the type's range.
struct Interval {
  uint64_t lo = 0, hi = 0;
  bool operator==(const Interval&) const = default;
  static Interval full(Type t) { return {0, truncate_to(t, ~uint64_t(0))}; }
  static Interval point(uint64_t v) { return {v, v}; }
  Interval hull(const Interval& o) const {
    return {lo < o.lo ? lo : o.lo, hi > o.hi ? hi : o.hi};
  }
};

// Flow-insensitive unsigned ranges for every register of a validated,
// SSA-form function. Loops are handled by widening, so masked indices such
// as `and %x, 63` stay precise while loop counters fall back to the type
// range. Used for cache line classification and conservative loop bounds.
std::map<std::string, Interval> compute_intervals(const Function& f);

Interval operand_interval(const std::map<std::string, Interval>& iv,
                          const Operand& o, Type context);

}  // namespace ctrepair
