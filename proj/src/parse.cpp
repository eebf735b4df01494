#include "ctrepair/parse.hpp"

#include <cctype>
#include <cstdlib>

#include "ctrepair/validate.hpp"

namespace ctrepair {

namespace {

struct Token {
  enum class Kind {
    Ident,     // bare identifier / keyword
    Reg,       // %name
    Number,    // integer literal
    Punct,     // single punctuation char, text in `text`
    Arrow,     // ->
    End,
  } kind;
  std::string text;
  uint64_t number = 0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    skip_ws();
    Token t;
    t.line = line_;
    t.col = col_;
    if (pos_ >= src_.size()) {
      t.kind = Token::Kind::End;
      return t;
    }
    char c = src_[pos_];
    if (c == '%') {
      advance();
      t.kind = Token::Kind::Reg;
      t.text = ident();
      return t;
    }
    if (isalpha(static_cast<unsigned char>(c)) || c == '_') {
      t.kind = Token::Kind::Ident;
      t.text = ident();
      return t;
    }
    if (isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && pos_ + 1 < src_.size() &&
         isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      t.kind = Token::Kind::Number;
      t.number = number();
      return t;
    }
    if (c == '-' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '>') {
      advance();
      advance();
      t.kind = Token::Kind::Arrow;
      t.text = "->";
      return t;
    }
    t.kind = Token::Kind::Punct;
    t.text = std::string(1, c);
    advance();
    return t;
  }

 private:
  void advance() {
    if (pos_ < src_.size()) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
  }

  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == ';') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  std::string ident() {
    std::string s;
    while (pos_ < src_.size() &&
           (isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      s += src_[pos_];
      advance();
    }
    return s;
  }

  uint64_t number() {
    bool neg = false;
    if (src_[pos_] == '-') {
      neg = true;
      advance();
    }
    uint64_t v = 0;
    if (pos_ + 1 < src_.size() && src_[pos_] == '0' &&
        (src_[pos_ + 1] == 'x' || src_[pos_ + 1] == 'X')) {
      advance();
      advance();
      while (pos_ < src_.size() && isxdigit(static_cast<unsigned char>(src_[pos_]))) {
        char c = src_[pos_];
        int d = isdigit(static_cast<unsigned char>(c)) ? c - '0'
                                                       : tolower(c) - 'a' + 10;
        v = v * 16 + static_cast<uint64_t>(d);
        advance();
      }
    } else {
      while (pos_ < src_.size() && isdigit(static_cast<unsigned char>(src_[pos_]))) {
        v = v * 10 + static_cast<uint64_t>(src_[pos_] - '0');
        advance();
      }
    }
    return neg ? ~v + 1 : v;
  }

  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

class Parser {
 public:
  explicit Parser(const std::string& src) : lex_(src) { bump(); }

  ParseResult run() {
    Module m;
    std::optional<std::string> entry_directive;
    while (cur_.kind != Token::Kind::End) {
      if (is_ident("entry")) {
        bump();
        entry_directive = expect_ident("entry function name");
      } else if (is_ident("record")) {
        parse_record(m);
      } else if (is_ident("global")) {
        parse_global(m);
      } else if (is_ident("fn")) {
        parse_function(m);
      } else {
        error("expected 'fn', 'global', 'record' or 'entry'");
        recover();
      }
      if (!diags_.empty() && diags_.size() >= 20) break;
    }
    ParseResult r;
    if (!diags_.empty()) {
      r.diags = std::move(diags_);
      return r;
    }
    if (entry_directive) {
      m.entry = *entry_directive;
    } else if (m.function("main")) {
      m.entry = "main";
    } else if (m.functions.size() == 1) {
      m.entry = m.functions[0].name;
    } else {
      Diag d;
      d.message = "no entry function: add 'entry <name>' or define 'main'";
      r.diags.push_back(d);
      return r;
    }
    r.module = std::move(m);
    return r;
  }

 private:
  void bump() { cur_ = lex_.next(); }

  bool is_ident(const char* s) const {
    return cur_.kind == Token::Kind::Ident && cur_.text == s;
  }
  bool is_punct(char c) const {
    return cur_.kind == Token::Kind::Punct && cur_.text[0] == c;
  }

  void error(const std::string& msg) {
    Diag d;
    d.line = cur_.line;
    d.col = cur_.col;
    d.invariant = "syntax error";
    d.message = msg;
    diags_.push_back(d);
  }

  // Skip to the next line that plausibly starts a new item or statement.
  void recover() {
    int line = cur_.line;
    while (cur_.kind != Token::Kind::End && cur_.line == line) bump();
  }

  std::string expect_ident(const char* what) {
    if (cur_.kind != Token::Kind::Ident) {
      error(std::string("expected ") + what);
      return "";
    }
    std::string s = cur_.text;
    bump();
    return s;
  }

  bool expect_punct(char c) {
    if (!is_punct(c)) {
      error(std::string("expected '") + c + "'");
      return false;
    }
    bump();
    return true;
  }

  uint64_t expect_number() {
    if (cur_.kind != Token::Kind::Number) {
      error("expected integer");
      return 0;
    }
    uint64_t v = cur_.number;
    bump();
    return v;
  }

  Type expect_type() {
    std::string s = expect_ident("type");
    auto t = type_from_name(s);
    if (!t) {
      error("unknown type '" + s + "'");
      return Type::I32;
    }
    return *t;
  }

  Operand expect_operand() {
    if (cur_.kind == Token::Kind::Reg) {
      Operand o = Operand::make_reg(cur_.text);
      bump();
      return o;
    }
    if (cur_.kind == Token::Kind::Number) {
      Operand o = Operand::make_imm(cur_.number);
      bump();
      return o;
    }
    error("expected register or integer operand");
    return Operand::make_imm(0);
  }

  // `name` or `name.field`
  MemRef expect_memref() {
    MemRef m;
    m.base = expect_ident("memory region name");
    if (is_punct('.')) {
      bump();
      m.field = expect_ident("field name");
    }
    return m;
  }

  void parse_record(Module& m) {
    bump();  // record
    RecordType r;
    r.name = expect_ident("record name");
    if (!expect_punct('{')) return;
    while (!is_punct('}') && cur_.kind != Token::Kind::End) {
      RecordField f;
      f.name = expect_ident("field name");
      expect_punct(':');
      if (is_punct('[')) {
        bump();
        f.is_array = true;
        f.elem = expect_type();
        expect_punct(';');
        f.length = expect_number();
        expect_punct(']');
      } else {
        f.elem = expect_type();
        f.length = 0;
      }
      r.fields.push_back(std::move(f));
      if (is_punct(',')) bump();
    }
    expect_punct('}');
    m.records.push_back(std::move(r));
  }

  void parse_global(Module& m) {
    bump();  // global
    std::string name = expect_ident("global name");
    expect_punct(':');
    if (is_punct('[')) {
      bump();
      GlobalArray g;
      g.name = name;
      g.elem = expect_type();
      expect_punct(';');
      g.length = expect_number();
      expect_punct(']');
      if (is_punct('=')) {
        bump();
        expect_punct('[');
        std::vector<uint64_t> init;
        while (!is_punct(']') && cur_.kind != Token::Kind::End) {
          init.push_back(expect_number());
          if (is_punct(',')) bump();
        }
        expect_punct(']');
        g.init = std::move(init);
      }
      m.arrays.push_back(std::move(g));
    } else {
      GlobalRecord g;
      g.name = name;
      g.type_name = expect_ident("record type name");
      m.record_globals.push_back(std::move(g));
    }
  }

  void parse_function(Module& m) {
    bump();  // fn
    Function f;
    f.name = expect_ident("function name");
    expect_punct('(');
    while (!is_punct(')') && cur_.kind != Token::Kind::End) {
      Param p;
      p.name = expect_ident("parameter name");
      expect_punct(':');
      if (is_ident("ptr")) {
        bump();
        expect_punct('<');
        if (cur_.kind == Token::Kind::Ident && type_from_name(cur_.text)) {
          p.kind = Param::Kind::ArrayRef;
          p.elem = expect_type();
          expect_punct(',');
          p.length = expect_number();
        } else {
          p.kind = Param::Kind::RecordRef;
          p.record = expect_ident("record type name");
        }
        expect_punct('>');
      } else {
        p.kind = Param::Kind::Scalar;
        p.elem = expect_type();
      }
      if (is_ident("secret")) {
        bump();
        p.secret = true;
      }
      f.params.push_back(std::move(p));
      if (is_punct(',')) bump();
    }
    expect_punct(')');
    if (cur_.kind == Token::Kind::Arrow) {
      bump();
      f.ret = expect_type();
    }
    if (!expect_punct('{')) return;
    while (!is_punct('}') && cur_.kind != Token::Kind::End) {
      parse_block(f);
      if (diags_.size() >= 20) return;
    }
    expect_punct('}');
    m.functions.push_back(std::move(f));
  }

  void parse_block(Function& f) {
    BasicBlock bb;
    bb.name = expect_ident("block label");
    if (!expect_punct(':')) {
      recover();
      return;
    }
    // Instructions until the next `label:`, `}` or EOF. A lone identifier
    // followed by ':' starts the next block; instruction keywords are known.
    while (cur_.kind != Token::Kind::End && !is_punct('}')) {
      if (cur_.kind == Token::Kind::Ident && is_block_label()) break;
      Instr in;
      in.line = cur_.line;
      in.col = cur_.col;
      if (!parse_instr(in)) {
        recover();
        continue;
      }
      bb.instrs.push_back(std::move(in));
    }
    f.blocks.push_back(std::move(bb));
  }

  // True when the current ident is a label (not an instruction keyword).
  bool is_block_label() const {
    const std::string& s = cur_.text;
    static const char* kw[] = {"store", "storefield", "br", "condbr", "ret", "call"};
    for (const char* k : kw)
      if (s == k) return false;
    return true;
  }

  bool parse_instr(Instr& in) {
    if (cur_.kind == Token::Kind::Reg) {
      in.dst = cur_.text;
      bump();
      if (!expect_punct('=')) return false;
      return parse_rhs(in);
    }
    if (cur_.kind != Token::Kind::Ident) {
      error("expected instruction");
      return false;
    }
    std::string op = cur_.text;
    bump();
    if (op == "store") {
      in.op = Opcode::Store;
      in.mem = expect_memref();
      expect_punct('[');
      Operand idx = expect_operand();
      expect_punct(']');
      expect_punct(',');
      Operand val = expect_operand();
      in.args = {idx, val};
      return true;
    }
    if (op == "storefield") {
      in.op = Opcode::StoreField;
      in.mem = expect_memref();
      if (!in.mem.is_field()) error("storefield requires record.field");
      expect_punct(',');
      in.args = {expect_operand()};
      return true;
    }
    if (op == "br") {
      in.op = Opcode::Br;
      in.t1 = expect_ident("branch target");
      return true;
    }
    if (op == "condbr") {
      in.op = Opcode::CondBr;
      in.args = {expect_operand()};
      expect_punct(',');
      in.t1 = expect_ident("branch target");
      expect_punct(',');
      in.t2 = expect_ident("branch target");
      return true;
    }
    if (op == "ret") {
      in.op = Opcode::Ret;
      if (cur_.kind == Token::Kind::Reg || cur_.kind == Token::Kind::Number)
        in.args = {expect_operand()};
      return true;
    }
    if (op == "call") {
      return parse_call(in);
    }
    error("unknown instruction '" + op + "'");
    return false;
  }

  bool parse_call(Instr& in) {
    in.op = Opcode::Call;
    in.callee = expect_ident("callee name");
    expect_punct('(');
    while (!is_punct(')') && cur_.kind != Token::Kind::End) {
      if (cur_.kind == Token::Kind::Ident) {
        // by-reference argument: region name, optionally `.field`
        std::string base = cur_.text;
        bump();
        if (is_punct('.')) {
          bump();
          base += "." + expect_ident("field name");
        }
        in.args.push_back(Operand::make_reg(base));
      } else {
        in.args.push_back(expect_operand());
      }
      if (is_punct(',')) bump();
    }
    expect_punct(')');
    return true;
  }

  bool parse_rhs(Instr& in) {
    std::string op = expect_ident("instruction");
    if (op == "const") {
      in.op = Opcode::Const;
      in.type = expect_type();
      in.args = {Operand::make_imm(expect_number())};
      return true;
    }
    if (op == "icmp") {
      in.op = Opcode::ICmp;
      std::string p = expect_ident("compare predicate");
      auto pr = cmp_pred_from_name(p);
      if (!pr) {
        error("unknown compare predicate '" + p + "'");
        return false;
      }
      in.pred = *pr;
      in.args.push_back(expect_operand());
      expect_punct(',');
      in.args.push_back(expect_operand());
      return true;
    }
    if (op == "zext") {
      in.op = Opcode::Zext;
      in.type = expect_type();
      in.args = {expect_operand()};
      return true;
    }
    if (op == "load") {
      in.op = Opcode::Load;
      in.mem = expect_memref();
      expect_punct('[');
      in.args = {expect_operand()};
      expect_punct(']');
      return true;
    }
    if (op == "loadfield") {
      in.op = Opcode::LoadField;
      in.mem = expect_memref();
      if (!in.mem.is_field()) error("loadfield requires record.field");
      return true;
    }
    if (op == "phi") {
      in.op = Opcode::Phi;
      while (is_punct('[')) {
        bump();
        PhiArm arm;
        arm.pred = expect_ident("predecessor label");
        expect_punct(':');
        arm.value = expect_operand();
        expect_punct(']');
        in.phi.push_back(std::move(arm));
      }
      if (in.phi.empty()) {
        error("phi needs at least one [pred: value] arm");
        return false;
      }
      return true;
    }
    if (op == "ctsel") {
      in.op = Opcode::CtSel;
      in.args.push_back(expect_operand());
      expect_punct(',');
      in.args.push_back(expect_operand());
      expect_punct(',');
      in.args.push_back(expect_operand());
      return true;
    }
    if (op == "call") {
      return parse_call(in);
    }
    static const struct { const char* name; Opcode op; } binops[] = {
        {"add", Opcode::Add}, {"sub", Opcode::Sub}, {"mul", Opcode::Mul},
        {"and", Opcode::And}, {"or", Opcode::Or},   {"xor", Opcode::Xor},
        {"shl", Opcode::Shl}, {"lshr", Opcode::LShr}};
    for (const auto& b : binops) {
      if (op == b.name) {
        in.op = b.op;
        in.args.push_back(expect_operand());
        expect_punct(',');
        in.args.push_back(expect_operand());
        return true;
      }
    }
    error("unknown instruction '" + op + "'");
    return false;
  }

  Lexer lex_;
  Token cur_;
  std::vector<Diag> diags_;
};

}  // namespace

ParseResult parse_module(const std::string& text) {
  return Parser(text).run();
}

Module parse_module_or_throw(const std::string& text) {
  ParseResult r = parse_module(text);
  if (!r.ok()) throw PassError(r.diags.front());
  std::vector<Diag> ds = validate(*r.module);
  if (!ds.empty()) throw PassError(ds.front());
  return std::move(*r.module);
}

}  // namespace ctrepair
