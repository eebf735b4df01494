#pragma once

#include <string>
#include <vector>

namespace ctrepair {

struct Diag {
  int line = 0, col = 0;
  std::string where;      // "function" or "function:block" context, may be empty
  std::string invariant;  // short invariant tag, e.g. "SSA dominance violated"
  std::string message;

  std::string str() const;
};

std::string render_diags(const std::vector<Diag>& ds);

// Thrown by passes on unsatisfiable preconditions (e.g. unboundable loops).
struct PassError : std::exception {
  Diag diag;
  std::string rendered;
  explicit PassError(Diag d) : diag(std::move(d)), rendered(diag.str()) {}
  const char* what() const noexcept override { return rendered.c_str(); }
};

}  // namespace ctrepair
