#include "ctrepair/cfg.hpp"

#include <algorithm>
#include <functional>

namespace ctrepair {

int Cfg::index(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  return -1;
}

Cfg Cfg::build(const Function& f) {
  Cfg cfg;
  size_t n = f.blocks.size();
  cfg.succs.resize(n);
  cfg.preds.resize(n);
  cfg.names.reserve(n);
  for (const BasicBlock& bb : f.blocks) cfg.names.push_back(bb.name);
  for (size_t i = 0; i < n; ++i) {
    const Instr* term = f.blocks[i].terminator();
    if (!term) continue;
    for (const std::string& s : successors(*term)) {
      int j = cfg.index(s);
      if (j < 0) continue;  // validator reports unknown targets
      cfg.succs[i].push_back(j);
      cfg.preds[j].push_back(static_cast<int>(i));
    }
  }
  return cfg;
}

std::vector<int> reverse_post_order(const Cfg& cfg) {
  std::vector<int> order;
  std::vector<char> seen(cfg.succs.size(), 0);
  std::function<void(int)> dfs = [&](int b) {
    seen[b] = 1;
    for (int s : cfg.succs[b])
      if (!seen[s]) dfs(s);
    order.push_back(b);
  };
  dfs(cfg.entry);
  std::reverse(order.begin(), order.end());
  return order;
}

std::vector<bool> reachable_from_entry(const Cfg& cfg) {
  std::vector<bool> r(cfg.succs.size(), false);
  std::vector<int> stack{cfg.entry};
  r[cfg.entry] = true;
  while (!stack.empty()) {
    int b = stack.back();
    stack.pop_back();
    for (int s : cfg.succs[b])
      if (!r[s]) {
        r[s] = true;
        stack.push_back(s);
      }
  }
  return r;
}

bool DomTree::dominates(int a, int b) const {
  while (true) {
    if (a == b) return true;
    if (b == root || idom[b] < 0) return false;
    b = idom[b];
  }
}

int DomTree::depth(int b) const {
  int d = 0;
  while (b != root && idom[b] >= 0) {
    b = idom[b];
    ++d;
  }
  return d;
}

DomTree dominator_tree(const Cfg& cfg) {
  size_t n = cfg.succs.size();
  DomTree dt;
  dt.root = cfg.entry;
  dt.idom.assign(n, -1);
  dt.idom[cfg.entry] = cfg.entry;

  std::vector<int> rpo = reverse_post_order(cfg);
  std::vector<int> rpo_pos(n, -1);
  for (size_t i = 0; i < rpo.size(); ++i) rpo_pos[rpo[i]] = static_cast<int>(i);

  auto intersect = [&](int a, int b) {
    while (a != b) {
      while (rpo_pos[a] > rpo_pos[b]) a = dt.idom[a];
      while (rpo_pos[b] > rpo_pos[a]) b = dt.idom[b];
    }
    return a;
  };

  bool changed = true;
  while (changed) {
    changed = false;
    for (int b : rpo) {
      if (b == cfg.entry) continue;
      int new_idom = -1;
      for (int p : cfg.preds[b]) {
        if (dt.idom[p] < 0) continue;  // not yet processed / unreachable
        new_idom = new_idom < 0 ? p : intersect(p, new_idom);
      }
      if (new_idom >= 0 && dt.idom[b] != new_idom) {
        dt.idom[b] = new_idom;
        changed = true;
      }
    }
  }

  dt.children.assign(n, {});
  for (size_t b = 0; b < n; ++b)
    if (static_cast<int>(b) != cfg.entry && dt.idom[b] >= 0)
      dt.children[dt.idom[b]].push_back(static_cast<int>(b));
  return dt;
}

DomTree dominator_tree(const Function& f) {
  Cfg cfg = Cfg::build(f);
  std::vector<bool> reach = reachable_from_entry(cfg);
  for (size_t i = 0; i < reach.size(); ++i) {
    if (!reach[i]) {
      Diag d;
      d.where = f.name + ":" + f.blocks[i].name;
      d.invariant = "unreachable block";
      d.message = "block is not reachable from the entry";
      throw PassError(d);
    }
  }
  return dominator_tree(cfg);
}

bool PostDomTree::post_dominates(int a, int b) const {
  while (true) {
    if (a == b) return true;
    if (ipdom[b] < 0) return false;
    b = ipdom[b];
  }
}

PostDomTree post_dominator_tree(const Cfg& cfg) {
  size_t n = cfg.succs.size();
  // Reversed CFG with a virtual exit node (index n) preceding all ret blocks.
  Cfg rev;
  rev.succs.assign(n + 1, {});
  rev.preds.assign(n + 1, {});
  rev.names.assign(n + 1, "");
  rev.entry = static_cast<int>(n);
  for (size_t b = 0; b < n; ++b) {
    for (int s : cfg.succs[b]) {
      rev.succs[s].push_back(static_cast<int>(b));
      rev.preds[b].push_back(s);
    }
    if (cfg.succs[b].empty()) {
      rev.succs[n].push_back(static_cast<int>(b));
      rev.preds[b].push_back(static_cast<int>(n));
    }
  }
  DomTree dt = dominator_tree(rev);
  PostDomTree pdt;
  pdt.ipdom.assign(n, -1);
  for (size_t b = 0; b < n; ++b) {
    int id = dt.idom[b];
    pdt.ipdom[b] = (id == static_cast<int>(n) || id < 0) ? -1 : id;
  }
  return pdt;
}

std::vector<int> control_dependent_blocks(const Cfg& cfg, const PostDomTree& pdt,
                                          int branch_block) {
  std::vector<int> out;
  std::vector<char> marked(cfg.succs.size(), 0);
  int stop = pdt.ipdom[branch_block];
  for (int s : cfg.succs[branch_block]) {
    int runner = s;
    while (runner != stop && runner >= 0) {
      if (!marked[runner]) {
        marked[runner] = 1;
        out.push_back(runner);
      }
      runner = pdt.ipdom[runner];
    }
  }
  return out;
}

}  // namespace ctrepair
