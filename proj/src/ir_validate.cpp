#include "speclab/ir.hpp"

#include <algorithm>

namespace speclab::ir {

namespace {

constexpr u64 kMaxHeapSize = u64{1} << 32;
constexpr u64 kMaxStaticOffset = 4095;
// Host secret region size visible to IR-level secret annotations.
constexpr u64 kHostRegionSize = 65536;

struct Checker {
  const SandboxModule& m;
  ValidationReport* report;
  u32 max_stack = 0;

  void fail(int line, const std::string& msg) {
    report->ok = false;
    report->diagnostics.push_back({line, 0, msg});
  }

  // Returns the params count shared by all table entries, if consistent.
  std::optional<u32> table_arity() {
    if (m.func_table.empty()) return std::nullopt;
    u32 arity = 0;
    bool first = true;
    for (u32 idx : m.func_table) {
      if (idx >= m.functions.size()) return std::nullopt;
      if (first) {
        arity = m.functions[idx].params;
        first = false;
      } else if (m.functions[idx].params != arity) {
        return std::nullopt;
      }
    }
    return arity;
  }

  void check_function(const Function& f) {
    struct Scope {
      std::string label;
      bool is_loop;
      u32 entry_height;
      int line;
    };
    std::vector<Scope> scopes;
    u32 height = 0;
    bool terminated = false;  // br/br_table/return seen at this nesting level

    auto find_label = [&](const std::string& label) -> Scope* {
      for (auto it = scopes.rbegin(); it != scopes.rend(); ++it) {
        if (it->label == label) return &*it;
      }
      return nullptr;
    };
    auto pop_n = [&](const Op& op, u32 n) {
      if (height < n || height - n < (scopes.empty() ? 0 : scopes.back().entry_height)) {
        fail(op.line, "operand stack underflow");
        return false;
      }
      height -= n;
      return true;
    };
    auto push_n = [&](u32 n) {
      height += n;
      max_stack = std::max(max_stack, height);
    };

    std::optional<u32> ta = table_arity();

    for (const Op& op : f.body) {
      if (terminated && op.kind != OpKind::kEnd) {
        fail(op.line, "unreachable code after branch");
        return;
      }
      switch (op.kind) {
        case OpKind::kConst:
        case OpKind::kHostcall:
          push_n(1);
          break;
        case OpKind::kArith:
        case OpKind::kCompare:
          if (!pop_n(op, 2)) return;
          push_n(1);
          break;
        case OpKind::kDrop:
          if (!pop_n(op, 1)) return;
          break;
        case OpKind::kLocalGet:
          if (op.imm >= f.params + f.locals) {
            fail(op.line, "local index out of range");
            return;
          }
          push_n(1);
          break;
        case OpKind::kLocalSet:
          if (op.imm >= f.params + f.locals) {
            fail(op.line, "local index out of range");
            return;
          }
          if (!pop_n(op, 1)) return;
          break;
        case OpKind::kGlobalGet:
          if (op.imm >= m.globals.size()) {
            fail(op.line, "global index out of range");
            return;
          }
          push_n(1);
          break;
        case OpKind::kGlobalSet:
          if (op.imm >= m.globals.size()) {
            fail(op.line, "global index out of range");
            return;
          }
          if (!pop_n(op, 1)) return;
          break;
        case OpKind::kLoad:
        case OpKind::kLoad8:
          if (op.imm > kMaxStaticOffset) {
            fail(op.line, "heap offset exceeds static limit");
            return;
          }
          if (!pop_n(op, 1)) return;
          push_n(1);
          break;
        case OpKind::kStore:
        case OpKind::kStore8:
          if (op.imm > kMaxStaticOffset) {
            fail(op.line, "heap offset exceeds static limit");
            return;
          }
          if (!pop_n(op, 2)) return;
          break;
        case OpKind::kBlock:
        case OpKind::kLoop:
          if (find_label(op.label)) {
            fail(op.line, "label '" + op.label + "' shadows an active label");
            return;
          }
          scopes.push_back({op.label, op.kind == OpKind::kLoop, height, op.line});
          break;
        case OpKind::kEnd: {
          if (scopes.empty()) {
            fail(op.line, "unmatched end");
            return;
          }
          if (!terminated && height != scopes.back().entry_height) {
            fail(op.line, "block body must leave operand stack unchanged");
            return;
          }
          height = scopes.back().entry_height;
          scopes.pop_back();
          terminated = false;
          break;
        }
        case OpKind::kBr:
        case OpKind::kBrIf: {
          if (op.kind == OpKind::kBrIf && !pop_n(op, 1)) return;
          Scope* s = find_label(op.label);
          if (!s) {
            fail(op.line, "branch to undeclared label '" + op.label + "'");
            return;
          }
          if (height != s->entry_height) {
            fail(op.line, "operand stack height mismatch at branch");
            return;
          }
          if (op.kind == OpKind::kBr) terminated = true;
          break;
        }
        case OpKind::kBrTable: {
          if (op.table.size() < 2) {
            fail(op.line, "br_table needs at least one target and a default");
            return;
          }
          if (!pop_n(op, 1)) return;
          for (const auto& l : op.table) {
            Scope* s = find_label(l);
            if (!s) {
              fail(op.line, "branch to undeclared label '" + l + "'");
              return;
            }
            if (height != s->entry_height) {
              fail(op.line, "operand stack height mismatch at branch");
              return;
            }
          }
          terminated = true;
          break;
        }
        case OpKind::kCall: {
          if (op.func >= m.functions.size()) {
            fail(op.line, "call target out of range");
            return;
          }
          if (!pop_n(op, m.functions[op.func].params)) return;
          push_n(1);
          break;
        }
        case OpKind::kCallIndirect: {
          if (m.func_table.empty()) {
            fail(op.line, "call_indirect requires a function table");
            return;
          }
          if (!ta.has_value()) {
            fail(op.line, "function table entries disagree on arity");
            return;
          }
          if (!pop_n(op, 1 + *ta)) return;
          push_n(1);
          break;
        }
        case OpKind::kReturn:
          if (!pop_n(op, 1)) return;
          terminated = true;
          break;
      }
    }
    if (!scopes.empty()) {
      fail(scopes.back().line, "unclosed block '" + scopes.back().label + "'");
      return;
    }
    if (!terminated && height > 1) {
      fail(0, "function body leaves more than one value on the stack");
    }
  }
};

}  // namespace

ValidationReport validate(const SandboxModule& m) {
  ValidationReport report;
  Checker checker{m, &report};

  if (m.heap_size == 0 || (m.heap_size & (m.heap_size - 1)) != 0) {
    checker.fail(0, "heap size must be a power of two");
  }
  if (m.heap_size > kMaxHeapSize) {
    checker.fail(0, "heap exceeds 4GB");
  }
  for (u32 idx : m.func_table) {
    if (idx >= m.functions.size()) {
      checker.fail(0, "table entry references function index " +
                          std::to_string(idx) + " of " +
                          std::to_string(m.functions.size()));
    }
  }
  for (const auto& s : m.secret_ranges) {
    u64 limit = s.region == Region::kHeap ? m.heap_size : kHostRegionSize;
    if (s.length == 0 || s.start + s.length > limit) {
      checker.fail(0, "secret range outside declared region");
    }
  }
  if (report.ok) {
    for (const Function& f : m.functions) {
      checker.check_function(f);
      if (!report.ok) break;
    }
  }
  return report;
}

StackShape function_stack_shape(const SandboxModule& m, const Function& f) {
  ValidationReport scratch;
  Checker checker{m, &scratch};
  checker.check_function(f);
  return StackShape{checker.max_stack};
}

}  // namespace speclab::ir
