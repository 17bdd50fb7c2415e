#include <set>

#include "speclab/schemes.hpp"

namespace speclab::machine {

namespace {

constexpr u64 kLabelBase = 0x5157'0000'0000'0001ull;

bool has_memory_access(const LinearBlock& b) {
  for (const auto& in : b.instrs) {
    if (in.op == MOp::kLoad || in.op == MOp::kStore) return true;
  }
  return false;
}

// Blocks entered by returning from a call or hostcall carry no label check:
// the shadow stack already pins speculative control flow on that edge, and
// the interlock register is stale there by construction.
std::set<u32> call_continuations(const MachineProgram& p) {
  std::set<u32> out;
  for (const auto& b : p.blocks) {
    if (b.instrs.empty()) continue;
    MOp t = b.instrs.back().op;
    if (t == MOp::kCall || t == MOp::kCallInd || t == MOp::kHostcall) {
      out.insert(b.id + 1);
    }
  }
  return out;
}

}  // namespace

MachineProgram apply_interlocks(MachineProgram p) {
  if (!p.blocks.empty() && p.blocks[0].label != 0) return p;  // already applied

  u64 next_label = kLabelBase;
  for (auto& b : p.blocks) b.label = next_label++;

  std::set<u32> continuations = call_continuations(p);

  for (auto& b : p.blocks) {
    // Route global accesses through the instance descriptor cell below the
    // heap base, so a zeroed heap base faults the address computation.
    for (auto& in : b.instrs) {
      if (in.op == MOp::kMove && in.a.kind == OperandKind::kGlobalsRef) {
        in.op = MOp::kLoad;
        in.a = Operand::of(kPinnedReg);
        in.b = Operand::none();
        in.imm = (u64)-(int64_t)kMetaGlobalsSlot;
        in.width = 8;
        in.region = AccessRegion::kHeap;
      }
    }

    // Label assignment before every branch terminator.
    if (!b.instrs.empty()) {
      MInstr& term = b.instrs.back();
      auto insert_before_term = [&](MInstr in) {
        b.instrs.insert(b.instrs.end() - 1, in);
      };
      switch (term.op) {
        case MOp::kJump:
        case MOp::kCall: {
          MInstr ls;
          ls.op = MOp::kLabelSet;
          ls.a = Operand::of_imm(p.blocks[term.target].label);
          insert_before_term(ls);
          break;
        }
        case MOp::kCondJump: {
          // The label follows the data, not the prediction: a conditional
          // move picks the label of the architectural successor.
          Reg rl = vreg(p.next_vreg++);
          MInstr sel;
          sel.op = MOp::kSelect;
          sel.dst = rl;
          sel.a = term.a;
          sel.b = Operand::of_imm(p.blocks[term.target].label);
          sel.c = Operand::of_imm(p.blocks[b.id + 1].label);
          insert_before_term(sel);
          MInstr ls;
          ls.op = MOp::kLabelSet;
          ls.a = Operand::of(rl);
          insert_before_term(ls);
          break;
        }
        case MOp::kJumpInd:
        case MOp::kCallInd: {
          // Table dispatch: the expected label sits in the shadow array next
          // to the target table, loaded with the same scaled index.
          if (term.scaled_index.has_value()) {
            const MInstr* table_load = nullptr;
            for (auto it = b.instrs.rbegin(); it != b.instrs.rend(); ++it) {
              if (it->op == MOp::kLoad && it->region == AccessRegion::kTable &&
                  term.a.kind == OperandKind::kReg && it->dst == term.a.reg) {
                table_load = &*it;
                break;
              }
            }
            if (table_load) {
              u64 label_off = p.tables[table_load->a.table].entries.size() * 8;
              Reg rl = vreg(p.next_vreg++);
              MInstr ll;
              ll.op = MOp::kLoad;
              ll.dst = rl;
              ll.a = table_load->a;
              ll.b = table_load->b;
              ll.imm = table_load->imm + label_off;
              ll.width = 8;
              ll.region = AccessRegion::kTable;
              insert_before_term(ll);
              MInstr ls;
              ls.op = MOp::kLabelSet;
              ls.a = Operand::of(rl);
              insert_before_term(ls);
            }
          }
          break;
        }
        default:
          break;  // returns ride the shadow stack; traps need no label
      }
    }
  }

  // Label check at the head of every block that touches memory.
  for (auto& b : p.blocks) {
    if (!has_memory_access(b)) continue;
    if (continuations.count(b.id)) continue;
    Reg ck = vreg(p.next_vreg++);
    std::vector<MInstr> head;
    MInstr cmp;
    cmp.op = MOp::kCompare;
    cmp.cmp = MCmp::kEq;
    cmp.dst = ck;
    cmp.a = Operand::of(kInterlockReg);
    cmp.b = Operand::of_imm(b.label);
    head.push_back(cmp);
    MInstr keep_heap;
    keep_heap.op = MOp::kSelect;
    keep_heap.dst = kPinnedReg;
    keep_heap.a = Operand::of(ck);
    keep_heap.b = Operand::of(kPinnedReg);
    keep_heap.c = Operand::of_imm(0);
    keep_heap.interlock_check = true;
    head.push_back(keep_heap);
    MInstr keep_stack = keep_heap;
    keep_stack.dst = kSpReg;
    keep_stack.b = Operand::of(kSpReg);
    head.push_back(keep_stack);
    b.instrs.insert(b.instrs.begin(), head.begin(), head.end());
  }
  return p;
}

MachineProgram annotate_endbranch(MachineProgram p) {
  std::set<u32> targets;
  for (const auto& t : p.tables) {
    for (u32 e : t.entries) targets.insert(e);
  }
  for (const auto& b : p.blocks) {
    for (const auto& in : b.instrs) {
      for (const Operand* o : {&in.a, &in.b, &in.c}) {
        if (o->kind == OperandKind::kBlockRef) targets.insert(o->block);
      }
    }
  }
  for (u32 t : targets) {
    auto& instrs = p.blocks[t].instrs;
    if (!instrs.empty() && instrs[0].op == MOp::kEndbranch) continue;
    MInstr eb;
    eb.op = MOp::kEndbranch;
    instrs.insert(instrs.begin(), eb);
  }
  return p;
}

}  // namespace speclab::machine
