#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctrepair/cfg.hpp"
#include "ctrepair/ir.hpp"

namespace ctrepair {

// One natural loop. Blocks are indices into the function's block list.
struct Loop {
  int header = -1;
  std::vector<int> latches;      // sources of back edges
  std::vector<int> body;         // includes header, sorted
  std::vector<std::pair<int, int>> exits;  // (from block, to block) edges
  std::optional<uint64_t> trip_bound;      // exact iteration count when static

  // Canonical counted-loop description, when recognized:
  //   header phi `i = phi [preheader: init] [latch: i+step]`
  //   header compare `c = icmp pred i, bound` feeding the header condbr.
  struct CountedShape {
    std::string induction;     // the phi register
    std::string compare;       // the icmp register
    Operand bound;             // compare rhs
    uint64_t init = 0, step = 1;
    int preheader = -1;        // unique out-of-loop predecessor of header
    int body_succ = -1, exit_succ = -1;  // header condbr targets
  };
  std::optional<CountedShape> counted;

  bool contains(int b) const;
};

struct LoopInfo {
  std::vector<Loop> loops;  // outer loops before inner (by body size, desc)

  // Product of static trip bounds of all loops containing `block`;
  // 1 when the block is in no loop; nullopt when some containing loop
  // has no static bound.
  std::optional<uint64_t> context_count(int block) const;
};

LoopInfo analyze_loops(const Function& f, const Cfg& cfg, const DomTree& dt);
LoopInfo analyze_loops(const Function& f);

}  // namespace ctrepair
