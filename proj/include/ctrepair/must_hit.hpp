#pragma once

#include <map>
#include <optional>

#include "ctrepair/layout.hpp"
#include "ctrepair/taint.hpp"

namespace ctrepair {

// Upper bounds on LRU ages of memory blocks. A block with bound k is in the
// cache on every path whenever k <= lines; blocks without an entry may be
// outside the cache (the bottom bound). Only entries <= lines are stored.
struct AbstractCacheState {
  std::map<MemBlock, uint32_t> bounds;
  bool operator==(const AbstractCacheState&) const = default;

  std::optional<uint32_t> bound(const MemBlock& b) const {
    auto it = bounds.find(b);
    if (it == bounds.end()) return std::nullopt;
    return it->second;
  }
};

AbstractCacheState initial_state(const CacheConfig& cfg);

// LRU aging. A deterministic access renews its block to age 1 and ages
// every block with a smaller bound. A nondeterministic access over a
// candidate set only ages: blocks below the worst candidate bound age by
// one, and no candidate is renewed.
AbstractCacheState transfer(const AbstractCacheState& s, const AccessEvent& e,
                            const CacheConfig& cfg);

// Pointwise maximum; a missing (bottom) bound dominates.
AbstractCacheState join(const AbstractCacheState& a, const AbstractCacheState& b);

struct SiteClassification {
  bool must_hit = false;
  bool reached = false;   // site lies on some path from the entry
  bool uniform = false;   // single statically known cache line
  AccessEvent event;
};

struct CacheAnalysis {
  std::map<SiteId, SiteClassification> sites;

  bool must_hit(const SiteId& s) const {
    auto it = sites.find(s);
    return it != sites.end() && it->second.must_hit;
  }
  bool uniform(const SiteId& s) const {
    auto it = sites.find(s);
    return it != sites.end() && it->second.uniform;
  }
};

// Forward dataflow fixpoint over the function's CFG classifying every
// load/store/loadfield/storefield site as MustHit or Unknown.
CacheAnalysis analyze_must_hit(const Module& m, const Function& f,
                               const MemoryLayout& layout, const CacheConfig& cfg);

}  // namespace ctrepair
