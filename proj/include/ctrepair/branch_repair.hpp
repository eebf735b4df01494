#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctrepair/taint.hpp"

namespace ctrepair {

enum class CtselMode { Native, Bitwise };

// A standardized conditional statement: unique entry (the block holding the
// branch), single-entry single-exit arm regions, unique merge block.
struct BranchRegion {
  std::string entry;
  std::string cond;  // i1 condition register
  std::vector<std::string> then_blocks, else_blocks;
  std::string then_exit, else_exit;  // last block of each arm ("" if empty)
  std::string merge;
};

// Recognize the region rooted at `entry_block`. Returns nullopt when the
// conditional is not in standardized form.
std::optional<BranchRegion> find_branch_region(const Function& f,
                                               const std::string& entry_block);

// Rewrites loops whose exit conditions depend on secrets:
//  - counted loops with secret-dependent break edges get per-break guard
//    flags and run their full static bound;
//  - `for (i = 0; i < C; i++)` loops with a secret bound C run to C's static
//    upper bound with the body guarded by the original compare.
// Functions with several returns and a sensitive branch get a single exit
// block first. Throws PassError("unboundable loop") when a sensitive loop
// bound cannot be established.
Function standardize(const Module& m, const Function& f, const SensitivityMap& s);

// Replace the conditional statement rooted at the region entry with
// straight-line code: stores become guarded read-modify-writes, merge phis
// become ctsel, and the arms are chained THEN -> ELSE -> merge.
Function mitigate_branch(const Function& f, const BranchRegion& r);

// Standardize, then eliminate every sensitive conditional, innermost first.
// After the pass no condbr condition depends on a secret.
Function branch_repair_fn(const Module& m, const Function& f,
                          const SensitivityMap& s);
Module branch_repair_pass(const Module& m, const SensitivityMap& s);

// Collapse guarded store pairs produced by mitigation: two stores to the
// same cell selected by c and !c become one store.
Function fold_ctsel(const Function& f);

// Bitwise mode expands ctsel into sub/xor/and/or over a widened condition;
// native mode keeps ctsel as a fixed-cost primitive.
Function lower_ctsel(const Function& f, CtselMode mode);

}  // namespace ctrepair
