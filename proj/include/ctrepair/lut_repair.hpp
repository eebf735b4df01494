#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctrepair/layout.hpp"
#include "ctrepair/taint.hpp"

namespace ctrepair {

enum class Strategy { ByteAccess, LineAccess, PreloadAll, PreloadFirstIter };

const char* strategy_name(Strategy s);
std::optional<Strategy> strategy_from_name(const std::string& s);

struct OverheadPrediction {
  uint64_t accesses = 0, misses = 0, hits = 0;
};

struct OriginalPrediction {
  uint64_t accesses = 0;
  uint64_t misses_min = 0, misses_max = 0;
  uint64_t hits_min = 0, hits_max = 0;
};

// Exact access/miss/hit counts for K accesses of an N-byte table under the
// given mitigation, with M = ceil(N / cls) cache lines per table.
OverheadPrediction predict_overhead(uint64_t k, uint64_t n_bytes, uint32_t cls,
                                    Strategy strategy);
OriginalPrediction predict_original(uint64_t k, uint64_t n_bytes, uint32_t cls);

struct PlanEntry {
  SiteId site;
  std::string table;
  enum class Decision {
    Rewritten,
    SkippedMustHit,
    SkippedSingleLine,
    CoveredByPreload,
    FallbackLineAccess,  // strategy not applicable at the site as requested
  } decision = Decision::Rewritten;
  uint64_t contexts = 1;
  uint64_t table_lines = 1;
};

struct MitigationPlan {
  Strategy strategy = Strategy::PreloadFirstIter;
  bool optimize = true;
  std::vector<std::string> peeled_loops;  // "function:header"
  std::vector<PlanEntry> sites;

  uint64_t rewritten_sites() const;
  uint64_t rewritten_contexts() const;
  uint64_t skipped_sites() const;
  uint64_t skipped_contexts() const;
};

// Replace one sensitive table access with a read of every element, selecting
// the wanted one with ctsel. Store sites conditionally write back every
// element instead.
Function rewrite_byte_access(const Module& m, const Function& f, const SiteId& site);

// Replace one sensitive table access with one read per cache line, starting
// at (index mod line) and striding by the line size.
Function rewrite_line_access(const Module& m, const Function& f, const SiteId& site,
                             const CacheConfig& cache);

enum class PreloadWhere { FunctionEntry, FirstIteration };

// Touch every cache line of `table` before its first use, either at the
// function entry or fused into the first iteration of the loop containing
// the first sensitive access (which is peeled).
Function rewrite_preload(const Module& m, const Function& f,
                         const std::string& table, PreloadWhere where,
                         const CacheConfig& cache);

// Full repair: peels loops around sensitive table accesses (PreloadFirstIter),
// skips accesses that are MustHit (with optimize) or confined to one cache
// line, and rewrites the rest with the chosen strategy. Deterministic and
// idempotent: re-running yields a plan with zero rewrites.
std::pair<Module, MitigationPlan> lut_repair_pass(const Module& m,
                                                  Strategy strategy, bool optimize,
                                                  const CacheConfig& cache);

}  // namespace ctrepair
