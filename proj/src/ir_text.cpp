#include "speclab/ir.hpp"

#include <cctype>
#include <sstream>

namespace speclab::ir {

ParseError::ParseError(int line, int column, const std::string& msg)
    : std::runtime_error("line " + std::to_string(line) + ":" +
                         std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

namespace {

struct SExpr {
  bool is_atom = false;
  std::string atom;
  std::vector<SExpr> items;
  int line = 0;
  int column = 0;
};

struct Token {
  enum Kind { kLParen, kRParen, kAtom, kEof } kind;
  std::string text;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : text_(text) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= text_.size()) {
      t.kind = Token::kEof;
      return t;
    }
    char c = text_[pos_];
    if (c == '(') {
      advance();
      t.kind = Token::kLParen;
      return t;
    }
    if (c == ')') {
      advance();
      t.kind = Token::kRParen;
      return t;
    }
    t.kind = Token::kAtom;
    while (pos_ < text_.size() && !std::isspace((unsigned char)text_[pos_]) &&
           text_[pos_] != '(' && text_[pos_] != ')' && text_[pos_] != ';') {
      t.text.push_back(text_[pos_]);
      advance();
    }
    if (t.text.empty()) {
      throw ParseError(line_, column_, "unexpected character");
    }
    return t;
  }

 private:
  void advance() {
    if (text_[pos_] == '\n') {
      line_++;
      column_ = 1;
    } else {
      column_++;
    }
    pos_++;
  }

  void skip_space() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isspace((unsigned char)c)) {
        advance();
      } else if (c == ';') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  const std::string& text_;
  size_t pos_ = 0;
  int line_ = 1;
  int column_ = 1;
};

class Reader {
 public:
  explicit Reader(const std::string& text) : lexer_(text) { tok_ = lexer_.next(); }

  SExpr read() {
    if (tok_.kind == Token::kEof) {
      throw ParseError(tok_.line, tok_.column, "unexpected end of input");
    }
    if (tok_.kind == Token::kRParen) {
      throw ParseError(tok_.line, tok_.column, "unexpected ')'");
    }
    if (tok_.kind == Token::kAtom) {
      SExpr e;
      e.is_atom = true;
      e.atom = tok_.text;
      e.line = tok_.line;
      e.column = tok_.column;
      tok_ = lexer_.next();
      return e;
    }
    SExpr e;
    e.line = tok_.line;
    e.column = tok_.column;
    tok_ = lexer_.next();  // consume '('
    while (tok_.kind != Token::kRParen) {
      if (tok_.kind == Token::kEof) {
        throw ParseError(e.line, e.column, "unclosed '('");
      }
      e.items.push_back(read());
    }
    tok_ = lexer_.next();  // consume ')'
    return e;
  }

  bool at_eof() const { return tok_.kind == Token::kEof; }
  Token tok() const { return tok_; }

 private:
  Lexer lexer_;
  Token tok_;
};

u64 parse_u64(const SExpr& e) {
  if (!e.is_atom) throw ParseError(e.line, e.column, "expected number");
  const std::string& s = e.atom;
  try {
    size_t used = 0;
    u64 v;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
      v = std::stoull(s.substr(2), &used, 16);
      used += 2;
    } else if (!s.empty() && s[0] == '-') {
      // two's complement immediates
      v = (u64)std::stoll(s, &used, 10);
    } else {
      v = std::stoull(s, &used, 10);
    }
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(e.line, e.column, "bad number '" + s + "'");
  }
}

const std::string& head(const SExpr& e) {
  static const std::string empty;
  if (e.is_atom || e.items.empty() || !e.items[0].is_atom) return empty;
  return e.items[0].atom;
}

struct OpSpec {
  OpKind kind;
  ArithOp arith;
  CmpOp cmp;
};

const std::map<std::string, OpSpec>& simple_ops() {
  static const std::map<std::string, OpSpec> ops = {
      {"add", {OpKind::kArith, ArithOp::kAdd, CmpOp::kEq}},
      {"sub", {OpKind::kArith, ArithOp::kSub, CmpOp::kEq}},
      {"mul", {OpKind::kArith, ArithOp::kMul, CmpOp::kEq}},
      {"and", {OpKind::kArith, ArithOp::kAnd, CmpOp::kEq}},
      {"or", {OpKind::kArith, ArithOp::kOr, CmpOp::kEq}},
      {"xor", {OpKind::kArith, ArithOp::kXor, CmpOp::kEq}},
      {"shl", {OpKind::kArith, ArithOp::kShl, CmpOp::kEq}},
      {"shr", {OpKind::kArith, ArithOp::kShr, CmpOp::kEq}},
      {"eq", {OpKind::kCompare, ArithOp::kAdd, CmpOp::kEq}},
      {"ne", {OpKind::kCompare, ArithOp::kAdd, CmpOp::kNe}},
      {"lt_u", {OpKind::kCompare, ArithOp::kAdd, CmpOp::kLtU}},
      {"lt_s", {OpKind::kCompare, ArithOp::kAdd, CmpOp::kLtS}},
      {"drop", {OpKind::kDrop, ArithOp::kAdd, CmpOp::kEq}},
      {"return", {OpKind::kReturn, ArithOp::kAdd, CmpOp::kEq}},
      {"call_indirect", {OpKind::kCallIndirect, ArithOp::kAdd, CmpOp::kEq}},
  };
  return ops;
}

void parse_body(const SExpr& list, size_t first, std::vector<Op>* out,
                const std::map<std::string, u32>& func_ids);

void parse_op(const SExpr& e, std::vector<Op>* out,
              const std::map<std::string, u32>& func_ids) {
  const std::string& h = head(e);
  if (h.empty()) throw ParseError(e.line, e.column, "expected op");
  Op op;
  op.line = e.line;
  size_t argc = e.items.size() - 1;
  auto need = [&](size_t n, const char* what) {
    if (argc != n)
      throw ParseError(e.line, e.column,
                       std::string("'" + h + "' expects ") + what);
  };

  auto it = simple_ops().find(h);
  if (it != simple_ops().end()) {
    need(0, "no operands");
    op.kind = it->second.kind;
    op.arith = it->second.arith;
    op.cmp = it->second.cmp;
    out->push_back(op);
    return;
  }
  if (h == "const") {
    need(1, "one immediate");
    op.kind = OpKind::kConst;
    op.imm = parse_u64(e.items[1]);
  } else if (h == "local.get" || h == "local.set" || h == "global.get" ||
             h == "global.set") {
    need(1, "one index");
    op.kind = h == "local.get"    ? OpKind::kLocalGet
              : h == "local.set"  ? OpKind::kLocalSet
              : h == "global.get" ? OpKind::kGlobalGet
                                  : OpKind::kGlobalSet;
    op.imm = parse_u64(e.items[1]);
  } else if (h == "load" || h == "load8" || h == "store" || h == "store8") {
    need(1, "one offset");
    op.kind = h == "load"    ? OpKind::kLoad
              : h == "load8" ? OpKind::kLoad8
              : h == "store" ? OpKind::kStore
                             : OpKind::kStore8;
    op.imm = parse_u64(e.items[1]);
  } else if (h == "hostcall") {
    need(1, "one id");
    op.kind = OpKind::kHostcall;
    op.imm = parse_u64(e.items[1]);
  } else if (h == "call") {
    need(1, "one function name");
    op.kind = OpKind::kCall;
    if (!e.items[1].is_atom)
      throw ParseError(e.line, e.column, "bad call target");
    auto f = func_ids.find(e.items[1].atom);
    if (f == func_ids.end())
      throw ParseError(e.items[1].line, e.items[1].column,
                       "unknown function '" + e.items[1].atom + "'");
    op.func = f->second;
  } else if (h == "br" || h == "br_if") {
    need(1, "one label");
    op.kind = h == "br" ? OpKind::kBr : OpKind::kBrIf;
    if (!e.items[1].is_atom) throw ParseError(e.line, e.column, "bad label");
    op.label = e.items[1].atom;
  } else if (h == "br_table") {
    if (argc < 2)
      throw ParseError(e.line, e.column,
                       "'br_table' expects targets plus a default");
    op.kind = OpKind::kBrTable;
    for (size_t i = 1; i < e.items.size(); i++) {
      if (!e.items[i].is_atom)
        throw ParseError(e.items[i].line, e.items[i].column, "bad label");
      op.table.push_back(e.items[i].atom);
    }
  } else if (h == "block" || h == "loop") {
    if (argc < 1 || !e.items[1].is_atom)
      throw ParseError(e.line, e.column, "'" + h + "' expects a label");
    op.kind = h == "block" ? OpKind::kBlock : OpKind::kLoop;
    op.label = e.items[1].atom;
    out->push_back(op);
    parse_body(e, 2, out, func_ids);
    Op end;
    end.kind = OpKind::kEnd;
    end.line = e.line;
    out->push_back(end);
    return;
  } else {
    throw ParseError(e.line, e.column, "unknown opcode '" + h + "'");
  }
  out->push_back(op);
}

void parse_body(const SExpr& list, size_t first, std::vector<Op>* out,
                const std::map<std::string, u32>& func_ids) {
  for (size_t i = first; i < list.items.size(); i++) {
    parse_op(list.items[i], out, func_ids);
  }
}

}  // namespace

std::optional<u32> SandboxModule::find_function(const std::string& name) const {
  for (u32 i = 0; i < functions.size(); i++) {
    if (functions[i].name == name) return i;
  }
  return std::nullopt;
}

SandboxModule parse_module(const std::string& text) {
  Reader reader(text);
  SExpr root = reader.read();
  if (!reader.at_eof()) {
    Token t = reader.tok();
    throw ParseError(t.line, t.column, "trailing input after module");
  }
  if (head(root) != "module") {
    throw ParseError(root.line, root.column, "expected (module ...)");
  }

  SandboxModule m;
  // First pass: function names, so calls can be resolved in one walk.
  std::map<std::string, u32> func_ids;
  for (size_t i = 1; i < root.items.size(); i++) {
    const SExpr& e = root.items[i];
    if (head(e) == "func") {
      if (e.items.size() < 2 || !e.items[1].is_atom)
        throw ParseError(e.line, e.column, "func needs a name");
      const std::string& name = e.items[1].atom;
      if (func_ids.count(name))
        throw ParseError(e.items[1].line, e.items[1].column,
                         "duplicate function '" + name + "'");
      func_ids[name] = (u32)m.functions.size();
      Function f;
      f.name = name;
      m.functions.push_back(f);
    }
  }

  std::vector<const SExpr*> table_refs;
  u32 func_cursor = 0;
  for (size_t i = 1; i < root.items.size(); i++) {
    const SExpr& e = root.items[i];
    const std::string& h = head(e);
    if (h == "heap") {
      if (e.items.size() != 2)
        throw ParseError(e.line, e.column, "heap expects one size");
      m.heap_size = parse_u64(e.items[1]);
    } else if (h == "global") {
      if (e.items.size() != 2)
        throw ParseError(e.line, e.column, "global expects one initial value");
      m.globals.push_back(parse_u64(e.items[1]));
    } else if (h == "table") {
      for (size_t k = 1; k < e.items.size(); k++) {
        if (!e.items[k].is_atom)
          throw ParseError(e.items[k].line, e.items[k].column, "bad table entry");
        auto f = func_ids.find(e.items[k].atom);
        if (f == func_ids.end())
          throw ParseError(e.items[k].line, e.items[k].column,
                           "unknown function '" + e.items[k].atom + "'");
        m.func_table.push_back(f->second);
      }
    } else if (h == "secret") {
      if (e.items.size() != 4 || !e.items[1].is_atom)
        throw ParseError(e.line, e.column, "secret expects region start length");
      SecretRange r;
      const std::string& reg = e.items[1].atom;
      if (reg == "heap")
        r.region = Region::kHeap;
      else if (reg == "host")
        r.region = Region::kHost;
      else
        throw ParseError(e.items[1].line, e.items[1].column,
                         "unknown region '" + reg + "'");
      r.start = parse_u64(e.items[2]);
      r.length = parse_u64(e.items[3]);
      m.secret_ranges.push_back(r);
    } else if (h == "func") {
      Function& f = m.functions[func_cursor++];
      size_t body_first = 2;
      while (body_first < e.items.size()) {
        const SExpr& part = e.items[body_first];
        if (head(part) == "params") {
          if (part.items.size() != 2)
            throw ParseError(part.line, part.column, "params expects a count");
          f.params = (u32)parse_u64(part.items[1]);
          body_first++;
        } else if (head(part) == "locals") {
          if (part.items.size() != 2)
            throw ParseError(part.line, part.column, "locals expects a count");
          f.locals = (u32)parse_u64(part.items[1]);
          body_first++;
        } else {
          break;
        }
      }
      parse_body(e, body_first, &f.body, func_ids);
    } else {
      throw ParseError(e.line, e.column, "unknown module item '" + h + "'");
    }
  }
  return m;
}

namespace {

std::string arith_name(ArithOp op) {
  switch (op) {
    case ArithOp::kAdd: return "add";
    case ArithOp::kSub: return "sub";
    case ArithOp::kMul: return "mul";
    case ArithOp::kAnd: return "and";
    case ArithOp::kOr: return "or";
    case ArithOp::kXor: return "xor";
    case ArithOp::kShl: return "shl";
    case ArithOp::kShr: return "shr";
  }
  return "?";
}

std::string cmp_name(CmpOp op) {
  switch (op) {
    case CmpOp::kEq: return "eq";
    case CmpOp::kNe: return "ne";
    case CmpOp::kLtU: return "lt_u";
    case CmpOp::kLtS: return "lt_s";
  }
  return "?";
}

void print_op(std::ostringstream& os, const Op& op, int* indent) {
  auto pad = [&]() {
    for (int i = 0; i < *indent; i++) os << "  ";
  };
  switch (op.kind) {
    case OpKind::kEnd:
      (*indent)--;
      pad();
      os << ")\n";
      return;
    case OpKind::kBlock:
    case OpKind::kLoop:
      pad();
      os << "(" << (op.kind == OpKind::kBlock ? "block " : "loop ") << op.label
         << "\n";
      (*indent)++;
      return;
    default:
      break;
  }
  pad();
  switch (op.kind) {
    case OpKind::kConst: os << "(const " << op.imm << ")"; break;
    case OpKind::kArith: os << "(" << arith_name(op.arith) << ")"; break;
    case OpKind::kCompare: os << "(" << cmp_name(op.cmp) << ")"; break;
    case OpKind::kDrop: os << "(drop)"; break;
    case OpKind::kLocalGet: os << "(local.get " << op.imm << ")"; break;
    case OpKind::kLocalSet: os << "(local.set " << op.imm << ")"; break;
    case OpKind::kGlobalGet: os << "(global.get " << op.imm << ")"; break;
    case OpKind::kGlobalSet: os << "(global.set " << op.imm << ")"; break;
    case OpKind::kLoad: os << "(load " << op.imm << ")"; break;
    case OpKind::kLoad8: os << "(load8 " << op.imm << ")"; break;
    case OpKind::kStore: os << "(store " << op.imm << ")"; break;
    case OpKind::kStore8: os << "(store8 " << op.imm << ")"; break;
    case OpKind::kBr: os << "(br " << op.label << ")"; break;
    case OpKind::kBrIf: os << "(br_if " << op.label << ")"; break;
    case OpKind::kBrTable: {
      os << "(br_table";
      for (const auto& l : op.table) os << " " << l;
      os << ")";
      break;
    }
    case OpKind::kCall: os << "(call f" << op.func << ")"; break;
    case OpKind::kCallIndirect: os << "(call_indirect)"; break;
    case OpKind::kHostcall: os << "(hostcall " << op.imm << ")"; break;
    case OpKind::kReturn: os << "(return)"; break;
    default: break;
  }
  os << "\n";
}

}  // namespace

std::string print_module(const SandboxModule& m) {
  std::ostringstream os;
  os << "(module\n";
  os << "  (heap " << m.heap_size << ")\n";
  for (u64 g : m.globals) os << "  (global " << g << ")\n";
  if (!m.func_table.empty()) {
    os << "  (table";
    for (u32 f : m.func_table) os << " f" << f;
    os << ")\n";
  }
  for (const auto& s : m.secret_ranges) {
    os << "  (secret " << (s.region == Region::kHeap ? "heap" : "host") << " "
       << s.start << " " << s.length << ")\n";
  }
  for (u32 i = 0; i < m.functions.size(); i++) {
    const Function& f = m.functions[i];
    os << "  (func f" << i << " (params " << f.params << ") (locals "
       << f.locals << ")\n";
    int indent = 2;
    for (const Op& op : f.body) print_op(os, op, &indent);
    os << "  )\n";
  }
  os << ")\n";
  return os.str();
}

std::string trap_name(TrapKind k) {
  switch (k) {
    case TrapKind::kNone: return "none";
    case TrapKind::kOobHeap: return "oob-heap";
    case TrapKind::kOobTable: return "oob-table";
    case TrapKind::kStackOverflow: return "stack-overflow";
  }
  return "?";
}

uint8_t SparseBytes::read8(u64 addr) const {
  auto it = pages_.find(addr >> kPageBits);
  if (it == pages_.end()) return 0;
  return it->second[addr & ((u64{1} << kPageBits) - 1)];
}

void SparseBytes::write8(u64 addr, uint8_t v) {
  auto& page = pages_[addr >> kPageBits];
  if (page.empty()) page.resize(u64{1} << kPageBits, 0);
  page[addr & ((u64{1} << kPageBits) - 1)] = v;
}

u64 SparseBytes::read(u64 addr, unsigned width) const {
  u64 v = 0;
  for (unsigned i = 0; i < width; i++) v |= (u64)read8(addr + i) << (8 * i);
  return v;
}

void SparseBytes::write(u64 addr, u64 v, unsigned width) {
  for (unsigned i = 0; i < width; i++) write8(addr + i, (uint8_t)(v >> (8 * i)));
}

bool SparseBytes::equals(const SparseBytes& other) const {
  auto nonzero = [](const std::vector<uint8_t>& page) {
    for (uint8_t b : page)
      if (b) return true;
    return false;
  };
  for (const auto& [id, page] : pages_) {
    auto it = other.pages_.find(id);
    if (it == other.pages_.end()) {
      if (nonzero(page)) return false;
    } else if (page != it->second) {
      return false;
    }
  }
  for (const auto& [id, page] : other.pages_) {
    if (!pages_.count(id) && nonzero(page)) return false;
  }
  return true;
}

u64 default_hostcall(u64 id) {
  // splitmix64 step keyed by id
  u64 z = id + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace speclab::ir
