#pragma once

#include <string>
#include <vector>

#include "ctrepair/diagnostics.hpp"
#include "ctrepair/ir.hpp"

namespace ctrepair {

// Block-index based CFG view of a function. Indices follow f.blocks order.
struct Cfg {
  std::vector<std::vector<int>> succs;
  std::vector<std::vector<int>> preds;
  std::vector<std::string> names;
  int entry = 0;

  int index(const std::string& name) const;
  static Cfg build(const Function& f);
};

// Immediate dominator tree. idom[entry] == entry; -1 for unreachable blocks.
struct DomTree {
  std::vector<int> idom;
  std::vector<std::vector<int>> children;
  int root = 0;

  bool dominates(int a, int b) const;
  int depth(int b) const;
};

// Iterative dataflow dominators (Cooper-Harvey-Kennedy).
DomTree dominator_tree(const Cfg& cfg);

// Dominator tree of a function; throws PassError when some block is
// unreachable from the entry.
DomTree dominator_tree(const Function& f);

// Post-dominators over the reversed CFG with a virtual exit joining all
// ret blocks. ipdom values index blocks; `virtual_exit` marks blocks whose
// immediate post-dominator is the virtual exit.
struct PostDomTree {
  std::vector<int> ipdom;  // -1 => virtual exit (or unreachable-in-reverse)
  bool post_dominates(int a, int b) const;  // a postdom b
};

PostDomTree post_dominator_tree(const Cfg& cfg);

std::vector<bool> reachable_from_entry(const Cfg& cfg);

// Blocks control-dependent on the branch terminating `branch_block`:
// standard post-dominance frontier walk over both successor edges.
std::vector<int> control_dependent_blocks(const Cfg& cfg, const PostDomTree& pdt,
                                          int branch_block);

std::vector<int> reverse_post_order(const Cfg& cfg);

}  // namespace ctrepair
