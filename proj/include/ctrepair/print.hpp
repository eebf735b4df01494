#pragma once

#include <string>

#include "ctrepair/ir.hpp"

namespace ctrepair {

// Canonical textual form. parse_module(print_module(m)) is structurally
// equal to m for any valid module.
std::string print_module(const Module& m);
std::string print_function(const Function& f);
std::string print_instr(const Instr& in);

}  // namespace ctrepair
