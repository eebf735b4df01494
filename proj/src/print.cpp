#include "ctrepair/print.hpp"

#include <sstream>

namespace ctrepair {

namespace {

void print_imm(std::ostream& os, uint64_t v) {
  // Small negatives read better in two's-complement decimal form.
  int64_t s = static_cast<int64_t>(v);
  if (s < 0 && s >= -65536)
    os << s;
  else
    os << v;
}

void print_operand(std::ostream& os, const Operand& o) {
  if (o.is_reg())
    os << "%" << o.reg;
  else
    print_imm(os, o.imm);
}

void print_instr_to(std::ostream& os, const Instr& in) {
  auto operand = [&](size_t i) { print_operand(os, in.args[i]); };
  if (in.has_dst()) os << "%" << in.dst << " = ";
  switch (in.op) {
    case Opcode::Const:
      os << "const " << type_name(in.type) << " ";
      print_imm(os, in.args[0].imm);
      break;
    case Opcode::Add: case Opcode::Sub: case Opcode::Mul:
    case Opcode::And: case Opcode::Or: case Opcode::Xor:
    case Opcode::Shl: case Opcode::LShr:
      os << opcode_name(in.op) << " ";
      operand(0);
      os << ", ";
      operand(1);
      break;
    case Opcode::ICmp:
      os << "icmp " << cmp_pred_name(in.pred) << " ";
      operand(0);
      os << ", ";
      operand(1);
      break;
    case Opcode::Zext:
      os << "zext " << type_name(in.type) << " ";
      operand(0);
      break;
    case Opcode::Load:
      os << "load " << in.mem.str() << "[";
      operand(0);
      os << "]";
      break;
    case Opcode::Store:
      os << "store " << in.mem.str() << "[";
      operand(0);
      os << "], ";
      operand(1);
      break;
    case Opcode::LoadField:
      os << "loadfield " << in.mem.str();
      break;
    case Opcode::StoreField:
      os << "storefield " << in.mem.str() << ", ";
      operand(0);
      break;
    case Opcode::Phi:
      os << "phi";
      for (const PhiArm& arm : in.phi) {
        os << " [" << arm.pred << ": ";
        print_operand(os, arm.value);
        os << "]";
      }
      break;
    case Opcode::CtSel:
      os << "ctsel ";
      operand(0);
      os << ", ";
      operand(1);
      os << ", ";
      operand(2);
      break;
    case Opcode::Call:
      os << "call " << in.callee << "(";
      for (size_t i = 0; i < in.args.size(); ++i) {
        if (i) os << ", ";
        print_operand(os, in.args[i]);
      }
      os << ")";
      break;
    case Opcode::Br:
      os << "br " << in.t1;
      break;
    case Opcode::CondBr:
      os << "condbr ";
      operand(0);
      os << ", " << in.t1 << ", " << in.t2;
      break;
    case Opcode::Ret:
      os << "ret";
      if (!in.args.empty()) {
        os << " ";
        operand(0);
      }
      break;
  }
}

}  // namespace

std::string print_instr(const Instr& in) {
  std::ostringstream os;
  print_instr_to(os, in);
  return os.str();
}

std::string print_function(const Function& f) {
  std::ostringstream os;
  os << "fn " << f.name << "(";
  for (size_t i = 0; i < f.params.size(); ++i) {
    const Param& p = f.params[i];
    if (i) os << ", ";
    os << p.name << ": ";
    switch (p.kind) {
      case Param::Kind::Scalar:
        os << type_name(p.elem);
        break;
      case Param::Kind::ArrayRef:
        os << "ptr<" << type_name(p.elem) << ", " << p.length << ">";
        break;
      case Param::Kind::RecordRef:
        os << "ptr<" << p.record << ">";
        break;
    }
    if (p.secret) os << " secret";
  }
  os << ")";
  if (f.ret) os << " -> " << type_name(*f.ret);
  os << " {\n";
  for (const BasicBlock& bb : f.blocks) {
    os << bb.name << ":\n";
    for (const Instr& in : bb.instrs) {
      os << "  ";
      print_instr_to(os, in);
      os << "\n";
    }
  }
  os << "}\n";
  return os.str();
}

std::string print_module(const Module& m) {
  std::ostringstream os;
  for (const RecordType& r : m.records) {
    os << "record " << r.name << " { ";
    for (size_t i = 0; i < r.fields.size(); ++i) {
      const RecordField& f = r.fields[i];
      if (i) os << ", ";
      os << f.name << ": ";
      if (f.is_array)
        os << "[" << type_name(f.elem) << "; " << f.length << "]";
      else
        os << type_name(f.elem);
    }
    os << " }\n";
  }
  for (const GlobalArray& g : m.arrays) {
    os << "global " << g.name << ": [" << type_name(g.elem) << "; " << g.length
       << "]";
    if (g.init) {
      os << " = [";
      for (size_t i = 0; i < g.init->size(); ++i) {
        if (i) os << ", ";
        print_imm(os, (*g.init)[i]);
      }
      os << "]";
    }
    os << "\n";
  }
  for (const GlobalRecord& g : m.record_globals)
    os << "global " << g.name << ": " << g.type_name << "\n";
  if (!m.records.empty() || !m.arrays.empty() || !m.record_globals.empty())
    os << "\n";
  os << "entry " << m.entry << "\n\n";
  for (size_t i = 0; i < m.functions.size(); ++i) {
    if (i) os << "\n";
    os << print_function(m.functions[i]);
  }
  return os.str();
}

}  // namespace ctrepair
