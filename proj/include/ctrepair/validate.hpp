#pragma once

#include <optional>
#include <vector>

#include "ctrepair/diagnostics.hpp"
#include "ctrepair/ir.hpp"

namespace ctrepair {

// Validates every module/function/instruction invariant. Returns an empty
// list iff the module is well-formed. As a side effect, derived instruction
// result types (binops, loads, phis, ...) are filled in, so a module that
// validates cleanly is ready for simulation and analysis.
std::vector<Diag> validate(Module& m);

// Addressable memory region signature used by validation and layout.
struct RegionSig {
  Type elem = Type::I8;
  uint64_t length = 0;
  bool is_scalar_field = false;
};

// Resolve an array-shaped memref (load/store target) or a scalar field
// (loadfield/storefield target) inside `f`. Returns nullopt if it does not
// name addressable memory of the requested shape.
std::optional<RegionSig> resolve_array_ref(const Module& m, const Function& f,
                                           const MemRef& mem);
std::optional<RegionSig> resolve_scalar_field(const Module& m, const Function& f,
                                              const MemRef& mem);

}  // namespace ctrepair
