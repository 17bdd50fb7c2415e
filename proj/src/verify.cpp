#include <map>
#include <set>

#include "speclab/codegen.hpp"

namespace speclab::machine {

namespace {

bool is_swivel(Scheme s) {
  return s == Scheme::kSfiAslr || s == Scheme::kSfiDet ||
         s == Scheme::kCetAslr || s == Scheme::kCetDet;
}

bool block_has_memory_access(const LinearBlock& b) {
  for (const auto& in : b.instrs) {
    if (in.op == MOp::kLoad || in.op == MOp::kStore) return true;
  }
  return false;
}

struct Check {
  const MachineProgram& p;
  std::vector<Violation>* out;

  void fail(u32 block, u32 instr, const std::string& msg) {
    out->push_back({0, block, instr, msg});
  }

  void run() {
    bool cet_det = p.scheme == Scheme::kCetDet;
    bool swivel = is_swivel(p.scheme);

    std::set<u32> indirect_targets;
    for (const auto& t : p.tables) {
      for (u32 e : t.entries) indirect_targets.insert(e);
    }
    for (const auto& b : p.blocks) {
      for (const auto& in : b.instrs) {
        if (in.a.kind == OperandKind::kBlockRef)
          indirect_targets.insert(in.a.block);
        if (in.b.kind == OperandKind::kBlockRef)
          indirect_targets.insert(in.b.block);
        if (in.c.kind == OperandKind::kBlockRef)
          indirect_targets.insert(in.c.block);
      }
    }

    std::map<u64, u32> label_owner;
    for (const auto& b : p.blocks) {
      check_block(b, cet_det, swivel, indirect_targets.count(b.id) > 0);
      if (cet_det && b.label != 0) {
        auto [it, fresh] = label_owner.insert({b.label, b.id});
        if (!fresh) {
          fail(b.id, 0, "block label reused from block " + std::to_string(it->second));
        }
      }
    }
    if (cet_det) {
      for (const auto& b : p.blocks) {
        if (block_has_memory_access(b) && b.label == 0) {
          fail(b.id, 0, "non-trivial block has no interlock label");
        }
      }
    }
  }

  void check_block(const LinearBlock& b, bool cet_det, bool swivel,
                   bool indirect_target) {
    if (b.instrs.empty()) {
      fail(b.id, 0, "empty block");
      return;
    }
    // Terminator-only control flow: exactly one, at the end.
    for (u32 i = 0; i < b.instrs.size(); i++) {
      bool term = MInstr::is_terminator(b.instrs[i].op);
      if (term && i + 1 != b.instrs.size()) {
        fail(b.id, i, "control flow before block end");
      }
      if (!term && i + 1 == b.instrs.size()) {
        fail(b.id, i, "block lacks a terminator");
      }
    }

    // Pinned-heap write freedom. The only tolerated writer is the interlock
    // check select under cet-det.
    for (u32 i = 0; i < b.instrs.size(); i++) {
      const MInstr& in = b.instrs[i];
      bool writes = false;
      switch (in.op) {
        case MOp::kMove:
        case MOp::kArith:
        case MOp::kCompare:
        case MOp::kSelect:
        case MOp::kMaskAnd:
        case MOp::kLoad:
          writes = in.dst == kPinnedReg;
          break;
        default:
          break;
      }
      if (writes && !(cet_det && in.op == MOp::kSelect && in.interlock_check)) {
        fail(b.id, i, "instruction writes the pinned heap register");
      }
      if (in.dst.kind == RegKind::kSp && in.op == MOp::kArith &&
          in.b.kind != OperandKind::kImm) {
        fail(b.id, i, "stack pointer adjusted by non-immediate");
      }
    }

    // Same-block masking of indexed heap and table accesses.
    std::map<u32, u64> masked;
    for (u32 i = 0; i < b.instrs.size(); i++) {
      const MInstr& in = b.instrs[i];
      if (in.op == MOp::kMaskAnd && in.dst.kind == RegKind::kVirtual) {
        masked[in.dst.index] = in.imm;
        continue;
      }
      if (in.op == MOp::kLoad || in.op == MOp::kStore) {
        if (in.b.kind == OperandKind::kReg &&
            in.b.reg.kind == RegKind::kVirtual) {
          auto it = masked.find(in.b.reg.index);
          bool need = in.region == AccessRegion::kHeap ||
                      (swivel && in.region == AccessRegion::kTable);
          if (need && it == masked.end()) {
            fail(b.id, i, "indexed access without same-block mask");
          } else if (need && in.region == AccessRegion::kHeap &&
                     it->second != p.heap_size - 1) {
            fail(b.id, i, "heap access masked with wrong constant");
          } else if (need && in.region == AccessRegion::kTable &&
                     in.a.kind == OperandKind::kTableRef &&
                     it->second !=
                         p.tables[in.a.table].entries.size() * 8 - 1) {
            fail(b.id, i, "table access masked with wrong constant");
          }
        }
      }
      switch (in.op) {
        case MOp::kMove:
        case MOp::kArith:
        case MOp::kCompare:
        case MOp::kSelect:
        case MOp::kLoad:
          if (in.dst.kind == RegKind::kVirtual) masked.erase(in.dst.index);
          break;
        default:
          break;
      }
    }

    bool cet = p.scheme == Scheme::kCetAslr || p.scheme == Scheme::kCetDet;
    if (cet && indirect_target && b.instrs[0].op != MOp::kEndbranch) {
      fail(b.id, 0, "indirect-target block does not begin with endbranch");
    }
    bool sfi = p.scheme == Scheme::kSfiAslr || p.scheme == Scheme::kSfiDet;
    for (u32 i = 0; i < b.instrs.size(); i++) {
      if (sfi && (b.instrs[i].op == MOp::kReturn || b.instrs[i].op == MOp::kCall)) {
        fail(b.id, i, "native call/return present under a separate-stack scheme");
      }
      if (p.scheme == Scheme::kSfiDet && b.instrs[i].op == MOp::kCondJump) {
        fail(b.id, i, "conditional jump present under sfi-det");
      }
    }
  }
};

}  // namespace

std::vector<Violation> check_linear_blocks(const MachineProgram& p) {
  std::vector<Violation> out;
  Check{p, &out}.run();
  return out;
}

std::vector<Violation> check_image(const Image& img) {
  std::vector<Violation> out;
  for (u32 i = 0; i < img.programs.size(); i++) {
    auto v = check_linear_blocks(img.programs[i]);
    for (auto& violation : v) violation.instance = i;
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace speclab::machine
