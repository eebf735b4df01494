#pragma once

#include "ctrepair/ir.hpp"
#include "ctrepair/loops.hpp"

namespace ctrepair {

// Inline every call in every function, callees first. The call graph must be
// acyclic (validated). Functions remain in the module; after the pass none
// of them contains a call instruction.
Module inline_all(const Module& m);

// Drop every function except the entry. Used by the command pipeline after
// inlining so analyses and reports cover the program actually executed.
Module keep_entry_only(const Module& m);

// Clone iteration 0 of a counted loop in front of it; the loop then runs the
// remaining bound-1 iterations. Requires a static trip bound >= 2 and the
// canonical counted shape with the only exit edge at the header.
// Throws PassError otherwise.
void peel_first_iteration(Function& f, const Loop& loop);

// Find the innermost loop containing `block` and peel it. Returns the name
// of the cloned copy of `block` (the peeled-iteration twin).
std::string peel_loop_containing(Function& f, const std::string& block);

// Merge straight-line block chains (b1 ends `br b2`, b2 has one pred).
void simplify_cfg(Function& f);

// Remove side-effect-free instructions whose results are unused.
void remove_dead_pure_instrs(Function& f);

}  // namespace ctrepair
