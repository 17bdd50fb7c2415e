#include "speclab/ir.hpp"

#include <cassert>

namespace speclab::ir {

namespace {

struct Trap {
  TrapKind kind;
};

u64 eval_arith(ArithOp op, u64 a, u64 b) {
  switch (op) {
    case ArithOp::kAdd: return a + b;
    case ArithOp::kSub: return a - b;
    case ArithOp::kMul: return a * b;
    case ArithOp::kAnd: return a & b;
    case ArithOp::kOr: return a | b;
    case ArithOp::kXor: return a ^ b;
    case ArithOp::kShl: return a << (b & 63);
    case ArithOp::kShr: return a >> (b & 63);
  }
  return 0;
}

u64 eval_cmp(CmpOp op, u64 a, u64 b) {
  switch (op) {
    case CmpOp::kEq: return a == b;
    case CmpOp::kNe: return a != b;
    case CmpOp::kLtU: return a < b;
    case CmpOp::kLtS: return (int64_t)a < (int64_t)b;
  }
  return 0;
}

struct Machine {
  const SandboxModule& m;
  SparseBytes heap;
  std::vector<u64> globals;
  const HostcallFn& hostcall;
  u32 frames = 0;

  u64 heap_access(u64 idx, u64 offset, unsigned width, bool store, u64 value) {
    u64 ea = (idx & (m.heap_size - 1)) + offset;
    if (ea + width > m.heap_size) throw Trap{TrapKind::kOobHeap};
    if (store) {
      heap.write(ea, value, width);
      return 0;
    }
    return heap.read(ea, width);
  }

  u64 call(u32 func_idx, const std::vector<u64>& args) {
    if (frames == kMaxCallFrames) throw Trap{TrapKind::kStackOverflow};
    frames++;
    const Function& f = m.functions[func_idx];
    std::vector<u64> locals(f.params + f.locals, 0);
    for (u32 i = 0; i < f.params && i < args.size(); i++) locals[i] = args[i];

    struct Scope {
      const std::string* label;
      bool is_loop;
      size_t header;  // op index of the kBlock/kLoop
      size_t end;     // op index of the matching kEnd
    };
    std::vector<Scope> scopes;
    std::vector<u64> stack;

    // Precompute matching ends.
    std::vector<size_t> match_end(f.body.size(), 0);
    {
      std::vector<size_t> open;
      for (size_t i = 0; i < f.body.size(); i++) {
        OpKind k = f.body[i].kind;
        if (k == OpKind::kBlock || k == OpKind::kLoop) open.push_back(i);
        if (k == OpKind::kEnd) {
          match_end[open.back()] = i;
          open.pop_back();
        }
      }
    }

    auto pop = [&]() {
      u64 v = stack.back();
      stack.pop_back();
      return v;
    };

    u64 result = 0;
    bool returned = false;
    size_t pc = 0;
    while (pc < f.body.size() && !returned) {
      const Op& op = f.body[pc];
      switch (op.kind) {
        case OpKind::kConst: stack.push_back(op.imm); break;
        case OpKind::kArith: {
          u64 b = pop(), a = pop();
          stack.push_back(eval_arith(op.arith, a, b));
          break;
        }
        case OpKind::kCompare: {
          u64 b = pop(), a = pop();
          stack.push_back(eval_cmp(op.cmp, a, b));
          break;
        }
        case OpKind::kDrop: pop(); break;
        case OpKind::kLocalGet: stack.push_back(locals[op.imm]); break;
        case OpKind::kLocalSet: locals[op.imm] = pop(); break;
        case OpKind::kGlobalGet: stack.push_back(globals[op.imm]); break;
        case OpKind::kGlobalSet: globals[op.imm] = pop(); break;
        case OpKind::kLoad:
          stack.push_back(heap_access(pop(), op.imm, 8, false, 0));
          break;
        case OpKind::kLoad8:
          stack.push_back(heap_access(pop(), op.imm, 1, false, 0));
          break;
        case OpKind::kStore: {
          u64 v = pop(), idx = pop();
          heap_access(idx, op.imm, 8, true, v);
          break;
        }
        case OpKind::kStore8: {
          u64 v = pop(), idx = pop();
          heap_access(idx, op.imm, 1, true, v);
          break;
        }
        case OpKind::kBlock:
        case OpKind::kLoop:
          scopes.push_back(
              {&op.label, op.kind == OpKind::kLoop, pc, match_end[pc]});
          break;
        case OpKind::kEnd: scopes.pop_back(); break;
        case OpKind::kBr:
        case OpKind::kBrIf: {
          if (op.kind == OpKind::kBrIf && pop() == 0) break;
          while (*scopes.back().label != op.label) scopes.pop_back();
          if (scopes.back().is_loop) {
            pc = scopes.back().header;  // re-run body from the loop head
          } else {
            pc = scopes.back().end;
            scopes.pop_back();
          }
          break;
        }
        case OpKind::kBrTable: {
          u64 idx = pop();
          const std::string& target = idx + 1 < op.table.size()
                                          ? op.table[(size_t)idx]
                                          : op.table.back();
          while (*scopes.back().label != target) scopes.pop_back();
          if (scopes.back().is_loop) {
            pc = scopes.back().header;
          } else {
            pc = scopes.back().end;
            scopes.pop_back();
          }
          break;
        }
        case OpKind::kCall: {
          const Function& callee = m.functions[op.func];
          std::vector<u64> call_args(callee.params);
          for (u32 i = callee.params; i > 0; i--) call_args[i - 1] = pop();
          stack.push_back(call(op.func, call_args));
          break;
        }
        case OpKind::kCallIndirect: {
          u64 idx = pop();
          if (idx >= m.func_table.size()) throw Trap{TrapKind::kOobTable};
          u32 callee_idx = m.func_table[(size_t)idx];
          const Function& callee = m.functions[callee_idx];
          std::vector<u64> call_args(callee.params);
          for (u32 i = callee.params; i > 0; i--) call_args[i - 1] = pop();
          stack.push_back(call(callee_idx, call_args));
          break;
        }
        case OpKind::kHostcall: stack.push_back(hostcall(op.imm)); break;
        case OpKind::kReturn:
          result = pop();
          returned = true;
          break;
      }
      pc++;
    }
    if (!returned && !stack.empty()) result = stack.back();
    frames--;
    return result;
  }
};

}  // namespace

InterpResult interpret(const SandboxModule& m, u32 entry,
                       const std::vector<u64>& args,
                       const SparseBytes& heap_image,
                       const HostcallFn& hostcall) {
  InterpResult result;
  Machine machine{m, heap_image, m.globals, hostcall};
  try {
    std::vector<u64> a = args;
    a.resize(m.functions[entry].params, 0);
    result.value = machine.call(entry, a);
  } catch (const Trap& t) {
    result.trap = t.kind;
  }
  result.heap = std::move(machine.heap);
  result.globals = std::move(machine.globals);
  return result;
}

}  // namespace speclab::ir
