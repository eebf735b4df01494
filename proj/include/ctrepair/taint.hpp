#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "ctrepair/ir.hpp"

namespace ctrepair {

// Location of one instruction: block and instruction indices inside a
// named function.
struct SiteId {
  std::string function;
  int block = 0;
  int index = 0;
  auto operator<=>(const SiteId&) const = default;
};

// Which values and memory locations depend on secret inputs. Memory is
// tracked per array region and per record field ("base" / "base.field").
struct SensitivityMap {
  std::set<std::pair<std::string, std::string>> regs;  // (function, register)
  std::set<std::string> locations;
  std::set<SiteId> branches;  // condbr sites with tainted conditions

  bool reg_tainted(const std::string& fn, const std::string& reg) const {
    return regs.count({fn, reg}) != 0;
  }
  bool loc_tainted(const std::string& loc) const {
    return locations.count(loc) != 0;
  }
  bool operand_tainted(const std::string& fn, const Operand& o) const {
    return o.is_reg() && reg_tainted(fn, o.reg);
  }
};

// Least fixed point of data- and control-dependency propagation from the
// secret-flagged parameters. Control dependence is post-dominance based.
SensitivityMap propagate_taint(const Module& m);

struct LeakSite {
  SiteId site;
  Opcode op = Opcode::Load;     // Load or Store
  std::string array;            // accessed region ("base" / "base.field")
  bool is_table = false;        // initialized global array
  uint64_t contexts = 1;        // enclosing static loop trip product
};

struct LeakTotals {
  uint64_t ifs = 0, luts = 0, lut_accesses = 0;
  uint64_t sensitive_ifs = 0, sensitive_luts = 0, sensitive_lut_accesses = 0;
};

struct LeakReport {
  std::vector<SiteId> conds;        // sensitive conditionals
  std::vector<LeakSite> accesses;   // sensitive array accesses (tainted index)
  LeakTotals totals;
  bool empty() const { return conds.empty() && accesses.empty(); }
};

// All sensitive conditionals and all array accesses whose index operand is
// tainted, ordered by (function, block, instruction). Totals follow the
// table/LUT accounting documented in the report schema: #IF counts branch
// sites, #LUT counts initialized global arrays, #LUT-access weights each
// table access site by its static iteration count.
LeakReport detect_leaks(const Module& m, const SensitivityMap& s);

}  // namespace ctrepair
