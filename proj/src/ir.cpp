#include "ctrepair/ir.hpp"

#include <algorithm>
#include <stdexcept>

namespace ctrepair {

int bit_width(Type t) {
  switch (t) {
    case Type::I1: return 1;
    case Type::I8: return 8;
    case Type::I16: return 16;
    case Type::I32: return 32;
    case Type::I64: return 64;
  }
  return 0;
}

int byte_width(Type t) {
  int b = bit_width(t);
  return b < 8 ? 1 : b / 8;
}

const char* type_name(Type t) {
  switch (t) {
    case Type::I1: return "i1";
    case Type::I8: return "i8";
    case Type::I16: return "i16";
    case Type::I32: return "i32";
    case Type::I64: return "i64";
  }
  return "?";
}

std::optional<Type> type_from_name(const std::string& s) {
  if (s == "i1") return Type::I1;
  if (s == "i8") return Type::I8;
  if (s == "i16") return Type::I16;
  if (s == "i32") return Type::I32;
  if (s == "i64") return Type::I64;
  return std::nullopt;
}

uint64_t truncate_to(Type t, uint64_t v) {
  int w = bit_width(t);
  if (w >= 64) return v;
  return v & ((uint64_t(1) << w) - 1);
}

int64_t sign_extend(Type t, uint64_t v) {
  int w = bit_width(t);
  if (w >= 64) return static_cast<int64_t>(v);
  uint64_t sign = uint64_t(1) << (w - 1);
  uint64_t masked = truncate_to(t, v);
  return static_cast<int64_t>((masked ^ sign) - sign);
}

const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::Const: return "const";
    case Opcode::Add: return "add";
    case Opcode::Sub: return "sub";
    case Opcode::Mul: return "mul";
    case Opcode::And: return "and";
    case Opcode::Or: return "or";
    case Opcode::Xor: return "xor";
    case Opcode::Shl: return "shl";
    case Opcode::LShr: return "lshr";
    case Opcode::ICmp: return "icmp";
    case Opcode::Zext: return "zext";
    case Opcode::Load: return "load";
    case Opcode::Store: return "store";
    case Opcode::LoadField: return "loadfield";
    case Opcode::StoreField: return "storefield";
    case Opcode::Phi: return "phi";
    case Opcode::CtSel: return "ctsel";
    case Opcode::Call: return "call";
    case Opcode::Br: return "br";
    case Opcode::CondBr: return "condbr";
    case Opcode::Ret: return "ret";
  }
  return "?";
}

bool is_binop(Opcode op) {
  switch (op) {
    case Opcode::Add: case Opcode::Sub: case Opcode::Mul:
    case Opcode::And: case Opcode::Or: case Opcode::Xor:
    case Opcode::Shl: case Opcode::LShr:
      return true;
    default:
      return false;
  }
}

bool is_terminator(Opcode op) {
  return op == Opcode::Br || op == Opcode::CondBr || op == Opcode::Ret;
}

bool is_memory_access(Opcode op) {
  return op == Opcode::Load || op == Opcode::Store ||
         op == Opcode::LoadField || op == Opcode::StoreField;
}

const char* cmp_pred_name(CmpPred p) {
  switch (p) {
    case CmpPred::Eq: return "eq";
    case CmpPred::Ne: return "ne";
    case CmpPred::Ult: return "ult";
    case CmpPred::Slt: return "slt";
    case CmpPred::Ule: return "ule";
    case CmpPred::Sle: return "sle";
  }
  return "?";
}

std::optional<CmpPred> cmp_pred_from_name(const std::string& s) {
  if (s == "eq") return CmpPred::Eq;
  if (s == "ne") return CmpPred::Ne;
  if (s == "ult") return CmpPred::Ult;
  if (s == "slt") return CmpPred::Slt;
  if (s == "ule") return CmpPred::Ule;
  if (s == "sle") return CmpPred::Sle;
  return std::nullopt;
}

Operand Operand::make_reg(std::string name) {
  Operand o;
  o.kind = Kind::Reg;
  o.reg = std::move(name);
  return o;
}

Operand Operand::make_imm(uint64_t v) {
  Operand o;
  o.kind = Kind::Imm;
  o.imm = v;
  return o;
}

int Function::block_index(const std::string& bname) const {
  for (size_t i = 0; i < blocks.size(); ++i)
    if (blocks[i].name == bname) return static_cast<int>(i);
  return -1;
}

BasicBlock* Function::block(const std::string& bname) {
  int i = block_index(bname);
  return i < 0 ? nullptr : &blocks[i];
}

const BasicBlock* Function::block(const std::string& bname) const {
  int i = block_index(bname);
  return i < 0 ? nullptr : &blocks[i];
}

const Param* Function::param(const std::string& pname) const {
  for (const Param& p : params)
    if (p.name == pname) return &p;
  return nullptr;
}

const RecordField* RecordType::field(const std::string& fname) const {
  for (const RecordField& f : fields)
    if (f.name == fname) return &f;
  return nullptr;
}

Function* Module::function(const std::string& fname) {
  for (Function& f : functions)
    if (f.name == fname) return &f;
  return nullptr;
}

const Function* Module::function(const std::string& fname) const {
  for (const Function& f : functions)
    if (f.name == fname) return &f;
  return nullptr;
}

const GlobalArray* Module::array(const std::string& aname) const {
  for (const GlobalArray& a : arrays)
    if (a.name == aname) return &a;
  return nullptr;
}

const GlobalRecord* Module::record_global(const std::string& gname) const {
  for (const GlobalRecord& g : record_globals)
    if (g.name == gname) return &g;
  return nullptr;
}

const RecordType* Module::record_type(const std::string& rname) const {
  for (const RecordType& r : records)
    if (r.name == rname) return &r;
  return nullptr;
}

Function* Module::entry_function() { return function(entry); }
const Function* Module::entry_function() const { return function(entry); }

std::vector<std::string> successors(const Instr& term) {
  switch (term.op) {
    case Opcode::Br: return {term.t1};
    case Opcode::CondBr:
      if (term.t1 == term.t2) return {term.t1};
      return {term.t1, term.t2};
    default: return {};
  }
}

void replace_all_uses(Function& f, const std::string& from, const Operand& to) {
  for (BasicBlock& bb : f.blocks)
    for (Instr& in : bb.instrs)
      for_each_use_mut(in, [&](Operand& o) {
        if (o.reg == from) o = to;
      });
}

NameGen::NameGen(const Function& f) {
  auto consider_reg = [&](const std::string& r) {
    if (r.size() > 1 && r[0] == 't') {
      bool digits = true;
      for (size_t i = 1; i < r.size(); ++i)
        if (!isdigit(static_cast<unsigned char>(r[i]))) { digits = false; break; }
      if (digits) next_reg_ = std::max<uint64_t>(next_reg_, std::stoull(r.substr(1)) + 1);
    }
  };
  for (const Param& p : f.params) consider_reg(p.name);
  for (const BasicBlock& bb : f.blocks) {
    if (bb.name.size() > 2 && bb.name.rfind("bb", 0) == 0) {
      bool digits = true;
      for (size_t i = 2; i < bb.name.size(); ++i)
        if (!isdigit(static_cast<unsigned char>(bb.name[i]))) { digits = false; break; }
      if (digits)
        next_block_ = std::max<uint64_t>(next_block_, std::stoull(bb.name.substr(2)) + 1);
    }
    for (const Instr& in : bb.instrs)
      if (in.has_dst()) consider_reg(in.dst);
  }
}

std::string NameGen::fresh_reg() { return "t" + std::to_string(next_reg_++); }
std::string NameGen::fresh_block() { return "bb" + std::to_string(next_block_++); }

uint64_t eval_binop(Opcode op, Type t, uint64_t a, uint64_t b) {
  uint64_t ua = truncate_to(t, a), ub = truncate_to(t, b);
  uint64_t r = 0;
  switch (op) {
    case Opcode::Add: r = ua + ub; break;
    case Opcode::Sub: r = ua - ub; break;
    case Opcode::Mul: r = ua * ub; break;
    case Opcode::And: r = ua & ub; break;
    case Opcode::Or: r = ua | ub; break;
    case Opcode::Xor: r = ua ^ ub; break;
    case Opcode::Shl:
      r = ub >= static_cast<uint64_t>(bit_width(t)) ? 0 : ua << ub;
      break;
    case Opcode::LShr:
      r = ub >= static_cast<uint64_t>(bit_width(t)) ? 0 : ua >> ub;
      break;
    default: break;
  }
  return truncate_to(t, r);
}

uint64_t eval_icmp(CmpPred p, Type t, uint64_t a, uint64_t b) {
  uint64_t ua = truncate_to(t, a), ub = truncate_to(t, b);
  int64_t sa = sign_extend(t, a), sb = sign_extend(t, b);
  switch (p) {
    case CmpPred::Eq: return ua == ub;
    case CmpPred::Ne: return ua != ub;
    case CmpPred::Ult: return ua < ub;
    case CmpPred::Slt: return sa < sb;
    case CmpPred::Ule: return ua <= ub;
    case CmpPred::Sle: return sa <= sb;
  }
  return 0;
}

}  // namespace ctrepair
