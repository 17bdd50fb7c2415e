#pragma once

// Sandbox source IR: a minimal Wasm-like language with 64-bit value cells,
// structured control flow, a bounded linear heap, and an indirect call table.
// The reference interpreter in this module is the correctness oracle for all
// hardened lowerings.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace speclab::ir {

using u64 = uint64_t;
using u32 = uint32_t;

enum class OpKind {
  kConst,       // push imm
  kArith,       // pop b, pop a, push a OP b
  kCompare,     // pop b, pop a, push (a CMP b) ? 1 : 0
  kDrop,        // pop
  kLocalGet,    // push locals[idx]
  kLocalSet,    // pop -> locals[idx]
  kGlobalGet,   // push globals[idx]
  kGlobalSet,   // pop -> globals[idx]
  kLoad,        // pop i, push heap64[(i & mask) + offset]
  kLoad8,       // pop i, push heap8[(i & mask) + offset]
  kStore,       // pop v, pop i, heap64[(i & mask) + offset] = v
  kStore8,      // pop v, pop i, heap8[(i & mask) + offset] = v & 0xff
  kBlock,       // begin forward-branch region
  kLoop,        // begin back-branch region
  kEnd,         // close innermost block/loop
  kBr,          // branch to label
  kBrIf,        // pop c, branch if c != 0
  kBrTable,     // pop i, branch to labels[min(i, n-1) ... wasm: i < n ? labels[i] : default
  kCall,        // pop args, push result
  kCallIndirect,// pop idx, pop args, push result
  kHostcall,    // push host(imm)
  kReturn,      // pop result, return
};

enum class ArithOp { kAdd, kSub, kMul, kAnd, kOr, kXor, kShl, kShr };
enum class CmpOp { kEq, kNe, kLtU, kLtS };

struct Op {
  OpKind kind;
  ArithOp arith = ArithOp::kAdd;
  CmpOp cmp = CmpOp::kEq;
  u64 imm = 0;                      // const value / local|global idx / heap offset / hostcall id
  u32 func = 0;                     // kCall target
  std::string label;                // kBlock/kLoop name, kBr/kBrIf target
  std::vector<std::string> table;   // kBrTable: targets, last entry is the default
  int line = 0;
};

struct Function {
  std::string name;
  u32 params = 0;
  u32 locals = 0;   // additional slots beyond params
  std::vector<Op> body;
};

enum class Region { kHeap, kHost };

struct SecretRange {
  Region region = Region::kHeap;
  u64 start = 0;
  u64 length = 0;
};

struct SandboxModule {
  std::vector<Function> functions;
  u64 heap_size = u64{1} << 32;     // bytes, power of two, at most 4GB
  std::vector<u32> func_table;      // ordered indices into functions
  std::vector<u64> globals;         // initial values of 64-bit cells
  std::vector<SecretRange> secret_ranges;

  std::optional<u32> find_function(const std::string& name) const;
};

struct Diagnostic {
  int line = 0;
  int column = 0;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Diagnostic> diagnostics;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int column, const std::string& msg);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

SandboxModule parse_module(const std::string& text);
std::string print_module(const SandboxModule& m);
ValidationReport validate(const SandboxModule& m);

// Per-function operand stack bookkeeping shared by the validator and the
// lowering pass. max_stack is the high-water mark of the operand stack.
struct StackShape {
  u32 max_stack = 0;
};
StackShape function_stack_shape(const SandboxModule& m, const Function& f);

enum class TrapKind {
  kNone,
  kOobHeap,
  kOobTable,
  kStackOverflow,
};
std::string trap_name(TrapKind k);

// Sparse byte store keyed by 4KB page. Used for the interpreter heap and for
// comparing final heap contents without materializing 4GB.
class SparseBytes {
 public:
  uint8_t read8(u64 addr) const;
  void write8(u64 addr, uint8_t v);
  u64 read(u64 addr, unsigned width) const;   // little-endian
  void write(u64 addr, u64 v, unsigned width);
  bool equals(const SparseBytes& other) const;

  static constexpr u64 kPageBits = 12;
  const std::map<u64, std::vector<uint8_t>>& pages() const { return pages_; }

 private:
  std::map<u64, std::vector<uint8_t>> pages_;
};

// Host behavior hook: deterministic pure default so random corpus programs
// stay reproducible; attack scenarios install their own.
using HostcallFn = std::function<u64(u64 id)>;
u64 default_hostcall(u64 id);

struct InterpResult {
  u64 value = 0;
  TrapKind trap = TrapKind::kNone;
  SparseBytes heap;
  std::vector<u64> globals;
};

inline constexpr u32 kMaxCallFrames = 1024;

InterpResult interpret(const SandboxModule& m, u32 entry,
                       const std::vector<u64>& args,
                       const SparseBytes& heap_image,
                       const HostcallFn& hostcall = default_hostcall);

}  // namespace speclab::ir
