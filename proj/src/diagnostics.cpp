#include "ctrepair/diagnostics.hpp"

#include <sstream>

namespace ctrepair {

std::string Diag::str() const {
  std::ostringstream os;
  if (line > 0) os << line << ":" << col << ": ";
  if (!where.empty()) os << "[" << where << "] ";
  if (!invariant.empty()) os << invariant << ": ";
  os << message;
  return os.str();
}

std::string render_diags(const std::vector<Diag>& ds) {
  std::ostringstream os;
  for (const Diag& d : ds) os << d.str() << "\n";
  return os.str();
}

}  // namespace ctrepair
