#include <algorithm>

#include "speclab/schemes.hpp"
#include "speclab/tfg.hpp"

namespace speclab::machine {

namespace {

MInstr fence() {
  MInstr f;
  f.op = MOp::kFence;
  return f;
}

MachineProgram strawman(MachineProgram p) {
  for (auto& b : p.blocks) {
    if (!b.instrs.empty() && b.instrs[0].op == MOp::kFence) continue;
    b.instrs.insert(b.instrs.begin(), fence());
  }
  return p;
}

MachineProgram loadfence(MachineProgram p) {
  for (auto& b : p.blocks) {
    for (size_t i = 0; i < b.instrs.size(); i++) {
      if (b.instrs[i].op != MOp::kLoad) continue;
      if (i + 1 < b.instrs.size() && b.instrs[i + 1].op == MOp::kFence) continue;
      b.instrs.insert(b.instrs.begin() + i + 1, fence());
      i++;
    }
  }
  return p;
}

MachineProgram mincut(MachineProgram p) {
  TransientFlowGraph g = build_transient_flow_graph(p);
  MincutResult cut = mincut_fences(g);
  // Insert back to front so recorded indices stay valid.
  std::sort(cut.deduped.begin(), cut.deduped.end(),
            [](const FenceSite& a, const FenceSite& b) {
              return a.block != b.block ? a.block > b.block
                                        : a.after_instr > b.after_instr;
            });
  for (const auto& site : cut.deduped) {
    auto& instrs = p.blocks[site.block].instrs;
    if (site.after_instr + 1 < instrs.size() &&
        instrs[site.after_instr + 1].op == MOp::kFence) {
      continue;
    }
    instrs.insert(instrs.begin() + site.after_instr + 1, fence());
  }
  return p;
}

}  // namespace

MachineProgram insert_fences(MachineProgram p, FenceStrategy strategy) {
  switch (strategy) {
    case FenceStrategy::kStrawman: return strawman(std::move(p));
    case FenceStrategy::kLoadfence: return loadfence(std::move(p));
    case FenceStrategy::kMincut: return mincut(std::move(p));
  }
  return p;
}

}  // namespace speclab::machine
