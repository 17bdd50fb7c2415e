#include "speclab/schemes.hpp"

namespace speclab::machine {

// Replaces native call/return with the separate-stack sequences. Calls store
// the return target on the separate stack and enter the callee with a plain
// jump; returns pop the separate stack and jump through it. Sandbox code
// never executes a native return, so the RSB is never consulted for it.
MachineProgram apply_separate_stack(MachineProgram p) {
  for (auto& b : p.blocks) {
    if (b.instrs.empty()) continue;
    MInstr& term = b.instrs.back();
    if (term.op == MOp::kCall) {
      u32 callee = term.target;
      MInstr push;
      push.op = MOp::kSepPush;
      push.target = b.id + 1;  // the call continuation block
      MInstr jump;
      jump.op = MOp::kJump;
      jump.target = callee;
      b.instrs.pop_back();
      b.instrs.push_back(push);
      b.instrs.push_back(jump);
    } else if (term.op == MOp::kReturn) {
      term.op = MOp::kSepPopJump;
    }
  }
  return p;
}

// Rewrites every conditional jump into an indirect jump over two
// materialized block addresses chosen by conditional move, so sandbox code
// never consults the conditional branch predictor.
MachineProgram convert_cbp_to_btb(MachineProgram p) {
  for (auto& b : p.blocks) {
    if (b.instrs.empty()) continue;
    MInstr term = b.instrs.back();
    if (term.op != MOp::kCondJump) continue;
    u32 taken = term.target;
    u32 fallthrough = b.id + 1;

    Reg rt = vreg(p.next_vreg++);
    Reg rf = vreg(p.next_vreg++);
    Reg rx = vreg(p.next_vreg++);
    b.instrs.pop_back();

    MInstr mt;
    mt.op = MOp::kMove;
    mt.dst = rt;
    mt.a = Operand::of_block(taken);
    b.instrs.push_back(mt);

    MInstr mf;
    mf.op = MOp::kMove;
    mf.dst = rf;
    mf.a = Operand::of_block(fallthrough);
    b.instrs.push_back(mf);

    MInstr sel;
    sel.op = MOp::kSelect;
    sel.dst = rx;
    sel.a = term.a;  // the branch flag
    sel.b = Operand::of(rt);
    sel.c = Operand::of(rf);
    b.instrs.push_back(sel);

    MInstr j;
    j.op = MOp::kJumpInd;
    j.a = Operand::of(rx);
    b.instrs.push_back(j);
  }
  return p;
}

}  // namespace speclab::machine
