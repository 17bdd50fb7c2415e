#include "speclab/schemes.hpp"

namespace speclab::machine {

// Speculative load hardening for table dispatch: clamp the scaled index with
// the power-of-two table size, in the same linear block as the table load.
// The conditional trap check stays for sequential semantics; the mask bounds
// the access even when the check is bypassed on a wrong path.
MachineProgram harden_jump_tables(MachineProgram p) {
  for (auto& b : p.blocks) {
    for (size_t i = 0; i < b.instrs.size(); i++) {
      const MInstr& in = b.instrs[i];
      if (in.op != MOp::kLoad || in.region != AccessRegion::kTable) continue;
      if (in.a.kind != OperandKind::kTableRef) continue;
      if (in.b.kind != OperandKind::kReg) continue;
      u64 mask = p.tables[in.a.table].entries.size() * 8 - 1;
      if (i > 0) {
        const MInstr& prev = b.instrs[i - 1];
        if (prev.op == MOp::kMaskAnd && prev.dst == in.b.reg &&
            prev.imm == mask) {
          continue;  // already hardened
        }
      }
      MInstr m;
      m.op = MOp::kMaskAnd;
      m.dst = in.b.reg;
      m.imm = mask;
      b.instrs.insert(b.instrs.begin() + i, m);
      i++;
    }
  }
  return p;
}

}  // namespace speclab::machine
