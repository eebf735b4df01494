#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctrepair {

// Scalar value types. I1 exists only as an icmp/condbr/ctsel condition type;
// storage (arrays, record fields) uses I8..I64.
enum class Type : uint8_t { I1, I8, I16, I32, I64 };

int bit_width(Type t);
int byte_width(Type t);
const char* type_name(Type t);
std::optional<Type> type_from_name(const std::string& s);

// Mask a raw 64-bit pattern down to the width of `t`.
uint64_t truncate_to(Type t, uint64_t v);
// Sign bit aware comparison helpers for icmp slt/sle.
int64_t sign_extend(Type t, uint64_t v);

enum class Opcode : uint8_t {
  Const,
  Add, Sub, Mul, And, Or, Xor, Shl, LShr,
  ICmp,
  Zext,
  Load, Store,
  LoadField, StoreField,
  Phi,
  CtSel,
  Call,
  Br, CondBr, Ret,
};

const char* opcode_name(Opcode op);
bool is_binop(Opcode op);
bool is_terminator(Opcode op);
bool is_memory_access(Opcode op);  // Load/Store/LoadField/StoreField

enum class CmpPred : uint8_t { Eq, Ne, Ult, Slt, Ule, Sle };
const char* cmp_pred_name(CmpPred p);
std::optional<CmpPred> cmp_pred_from_name(const std::string& s);

// A register reference or an immediate. Immediates are stored as the
// sign-extended 64-bit pattern and masked by the context type on use.
struct Operand {
  enum class Kind : uint8_t { Reg, Imm } kind = Kind::Imm;
  std::string reg;
  uint64_t imm = 0;

  static Operand make_reg(std::string name);
  static Operand make_imm(uint64_t v);
  bool is_reg() const { return kind == Kind::Reg; }
  bool is_imm() const { return kind == Kind::Imm; }
  bool operator==(const Operand&) const = default;
};

// Reference to addressable memory: a named array region (global array or
// array parameter) or `base.field` for a record field.
struct MemRef {
  std::string base;
  std::string field;  // empty for plain arrays
  bool is_field() const { return !field.empty(); }
  std::string str() const { return field.empty() ? base : base + "." + field; }
  bool operator==(const MemRef&) const = default;
};

struct PhiArm {
  std::string pred;
  Operand value;
  bool operator==(const PhiArm&) const = default;
};

// One instruction. Operand layout per opcode:
//   Const:      imm in args[0]
//   binops:     args = {a, b}
//   ICmp:       args = {a, b}, pred set
//   Zext:       args = {src}, type = destination type
//   Load:       args = {index}, mem set
//   Store:      args = {index, value}, mem set
//   LoadField:  mem set (base.field)
//   StoreField: args = {value}, mem set
//   Phi:        phi arms
//   CtSel:      args = {cond, tval, eval}
//   Call:       args = scalar/ref arguments (refs as Reg operands naming regions), callee set
//   Br:         t1 = target
//   CondBr:     args = {cond}, t1 = true target, t2 = false target
//   Ret:        args = {value} or empty
struct Instr {
  Opcode op = Opcode::Ret;
  Type type = Type::I32;  // result type where meaningful
  std::string dst;        // defined register, "" if none
  CmpPred pred = CmpPred::Eq;
  std::vector<Operand> args;
  MemRef mem;
  std::vector<PhiArm> phi;
  std::string callee;
  std::string t1, t2;
  int line = 0, col = 0;  // source location; ignored by structural equality

  bool has_dst() const { return !dst.empty(); }
  bool operator==(const Instr& o) const {
    return op == o.op && type == o.type && dst == o.dst && pred == o.pred &&
           args == o.args && mem == o.mem && phi == o.phi &&
           callee == o.callee && t1 == o.t1 && t2 == o.t2;
  }
};

struct BasicBlock {
  std::string name;
  std::vector<Instr> instrs;
  bool operator==(const BasicBlock&) const = default;

  const Instr* terminator() const {
    return instrs.empty() ? nullptr : &instrs.back();
  }
};

struct Param {
  enum class Kind : uint8_t { Scalar, ArrayRef, RecordRef } kind = Kind::Scalar;
  std::string name;
  Type elem = Type::I32;   // Scalar: value type; ArrayRef: element type
  uint64_t length = 0;     // ArrayRef only
  std::string record;      // RecordRef: record type name
  bool secret = false;
  bool operator==(const Param&) const = default;
};

struct Function {
  std::string name;
  std::vector<Param> params;
  std::optional<Type> ret;
  std::vector<BasicBlock> blocks;
  bool operator==(const Function&) const = default;

  int block_index(const std::string& bname) const;
  BasicBlock* block(const std::string& bname);
  const BasicBlock* block(const std::string& bname) const;
  const Param* param(const std::string& pname) const;
};

struct GlobalArray {
  std::string name;
  Type elem = Type::I8;
  uint64_t length = 0;
  std::optional<std::vector<uint64_t>> init;
  bool operator==(const GlobalArray&) const = default;
  uint64_t byte_size() const { return length * byte_width(elem); }
};

struct RecordField {
  std::string name;
  bool is_array = false;
  Type elem = Type::I32;
  uint64_t length = 0;  // arrays only
  bool operator==(const RecordField&) const = default;
  uint64_t byte_size() const {
    return (is_array ? length : 1) * byte_width(elem);
  }
};

struct RecordType {
  std::string name;
  std::vector<RecordField> fields;
  bool operator==(const RecordType&) const = default;
  const RecordField* field(const std::string& fname) const;
};

struct GlobalRecord {
  std::string name;
  std::string type_name;
  bool operator==(const GlobalRecord&) const = default;
};

struct Module {
  std::vector<RecordType> records;
  std::vector<GlobalArray> arrays;
  std::vector<GlobalRecord> record_globals;
  std::vector<Function> functions;
  std::string entry;
  bool operator==(const Module&) const = default;

  Function* function(const std::string& fname);
  const Function* function(const std::string& fname) const;
  const GlobalArray* array(const std::string& aname) const;
  const GlobalRecord* record_global(const std::string& gname) const;
  const RecordType* record_type(const std::string& rname) const;
  Function* entry_function();
  const Function* entry_function() const;
};

// Successor block names of a terminator (empty for ret).
std::vector<std::string> successors(const Instr& term);

// Iterate over register operands of an instruction (phi arms included).
template <typename F>
void for_each_use(const Instr& in, F&& f) {
  for (const Operand& a : in.args)
    if (a.is_reg()) f(a);
  for (const PhiArm& arm : in.phi)
    if (arm.value.is_reg()) f(arm.value);
}
template <typename F>
void for_each_use_mut(Instr& in, F&& f) {
  for (Operand& a : in.args)
    if (a.is_reg()) f(a);
  for (PhiArm& arm : in.phi)
    if (arm.value.is_reg()) f(arm.value);
}

// Replace every use of register `from` with operand `to` across a function.
void replace_all_uses(Function& f, const std::string& from, const Operand& to);

// Arithmetic semantics shared by the interpreter and constant folding.
// Values are bit patterns truncated to `t`; shifts of `bit_width(t)` or more
// produce 0.
uint64_t eval_binop(Opcode op, Type t, uint64_t a, uint64_t b);
uint64_t eval_icmp(CmpPred p, Type t, uint64_t a, uint64_t b);

// Fresh `%t<n>` / `bb<n>` names that do not collide with existing ones.
class NameGen {
 public:
  explicit NameGen(const Function& f);
  std::string fresh_reg();
  std::string fresh_block();

 private:
  uint64_t next_reg_ = 0;
  uint64_t next_block_ = 0;
};

}  // namespace ctrepair
