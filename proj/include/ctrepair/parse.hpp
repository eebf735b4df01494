#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ctrepair/diagnostics.hpp"
#include "ctrepair/ir.hpp"

namespace ctrepair {

struct ParseResult {
  std::optional<Module> module;  // present iff diags is empty
  std::vector<Diag> diags;
  bool ok() const { return module.has_value(); }
};

// Parse textual IR. Syntax errors are collected with line/column; the parser
// rejects anything it does not recognize instead of guessing.
ParseResult parse_module(const std::string& text);

// Convenience: parse + validate, throwing PassError on any diagnostic.
Module parse_module_or_throw(const std::string& text);

}  // namespace ctrepair
