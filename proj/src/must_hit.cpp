#include "ctrepair/must_hit.hpp"

#include <deque>

#include "ctrepair/cfg.hpp"

namespace ctrepair {

AbstractCacheState initial_state(const CacheConfig& cfg) {
  (void)cfg;
  return {};
}

AbstractCacheState transfer(const AbstractCacheState& s, const AccessEvent& e,
                            const CacheConfig& cfg) {
  AbstractCacheState out = s;
  uint32_t N = cfg.lines;
  auto age_below = [&](uint64_t limit) {
    // Increment every bound strictly below `limit`, evicting past N.
    for (auto it = out.bounds.begin(); it != out.bounds.end();) {
      if (it->second < limit) {
        if (++it->second > N) {
          it = out.bounds.erase(it);
          continue;
        }
      }
      ++it;
    }
  };
  if (e.kind == AccessEvent::Kind::Deterministic) {
    auto old = s.bound(e.block);
    uint64_t limit = old ? *old : uint64_t(N) + 1;
    age_below(limit);
    out.bounds[e.block] = 1;
    return out;
  }
  uint64_t worst = 0;
  for (const MemBlock& c : e.candidates) {
    auto b = s.bound(c);
    uint64_t v = b ? *b : uint64_t(N) + 1;
    if (v > worst) worst = v;
  }
  age_below(worst);
  return out;
}

AbstractCacheState join(const AbstractCacheState& a, const AbstractCacheState& b) {
  AbstractCacheState out;
  for (const auto& [blk, bound] : a.bounds) {
    auto other = b.bound(blk);
    if (other) out.bounds[blk] = std::max(bound, *other);
  }
  return out;
}

CacheAnalysis analyze_must_hit(const Module& m, const Function& f,
                               const MemoryLayout& layout, const CacheConfig& cfg) {
  auto intervals = compute_intervals(f);
  Cfg cfg_blocks = Cfg::build(f);
  size_t n = f.blocks.size();

  // Per-site classification (events do not change during fixpointing).
  std::vector<std::vector<std::optional<AccessEvent>>> events(n);
  for (size_t b = 0; b < n; ++b) {
    events[b].resize(f.blocks[b].instrs.size());
    for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i)
      events[b][i] =
          classify_access(layout, f, f.blocks[b].instrs[i], intervals, cfg);
  }

  auto apply_block = [&](size_t b, AbstractCacheState st) {
    for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i)
      if (events[b][i]) st = transfer(st, *events[b][i], cfg);
    return st;
  };

  std::vector<std::optional<AbstractCacheState>> in(n);
  in[cfg_blocks.entry] = initial_state(cfg);
  std::deque<int> work{cfg_blocks.entry};
  std::vector<char> queued(n, 0);
  queued[cfg_blocks.entry] = 1;
  while (!work.empty()) {
    int b = work.front();
    work.pop_front();
    queued[b] = 0;
    AbstractCacheState out = apply_block(b, *in[b]);
    for (int s : cfg_blocks.succs[b]) {
      AbstractCacheState merged = in[s] ? join(*in[s], out) : out;
      if (!in[s] || !(*in[s] == merged)) {
        in[s] = merged;
        if (!queued[s]) {
          queued[s] = 1;
          work.push_back(s);
        }
      }
    }
  }

  // Final pass: classify each site against the converged incoming states.
  CacheAnalysis result;
  for (size_t b = 0; b < n; ++b) {
    SiteId site{f.name, static_cast<int>(b), 0};
    if (!in[b]) {
      // Unreachable in this CFG: record sites as unknown/unreached.
      for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i)
        if (events[b][i]) {
          site.index = static_cast<int>(i);
          SiteClassification sc;
          sc.event = *events[b][i];
          sc.uniform = sc.event.kind == AccessEvent::Kind::Deterministic;
          result.sites[site] = sc;
        }
      continue;
    }
    AbstractCacheState st = *in[b];
    for (size_t i = 0; i < f.blocks[b].instrs.size(); ++i) {
      if (!events[b][i]) continue;
      site.index = static_cast<int>(i);
      const AccessEvent& e = *events[b][i];
      SiteClassification sc;
      sc.event = e;
      sc.reached = true;
      sc.uniform = e.kind == AccessEvent::Kind::Deterministic;
      if (e.kind == AccessEvent::Kind::Deterministic) {
        sc.must_hit = st.bound(e.block).has_value();
      } else {
        sc.must_hit = true;
        for (const MemBlock& c : e.candidates)
          sc.must_hit &= st.bound(c).has_value();
      }
      result.sites[site] = sc;
      st = transfer(st, e, cfg);
    }
  }
  return result;
}

}  // namespace ctrepair
