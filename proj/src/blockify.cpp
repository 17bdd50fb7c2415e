#include <map>
#include <optional>

#include "speclab/codegen.hpp"

namespace speclab::machine {

namespace {

std::optional<Reg> written_reg(const MInstr& in) {
  switch (in.op) {
    case MOp::kMove:
    case MOp::kArith:
    case MOp::kCompare:
    case MOp::kSelect:
    case MOp::kMaskAnd:
    case MOp::kLoad:
      return in.dst;
    default:
      return std::nullopt;
  }
}

// Ensures an indexed heap access is preceded, in the same block, by a fresh
// bounds mask of its index register. Values reloaded from the stack lose any
// mask applied before the spill, so the mask is re-applied at the use.
void establish_masks(LinearBlock* b, u64 heap_mask) {
  std::map<u32, u64> masked;  // vreg index -> mask constant
  for (size_t i = 0; i < b->instrs.size(); i++) {
    MInstr& in = b->instrs[i];
    if (in.op == MOp::kMaskAnd && in.dst.kind == RegKind::kVirtual) {
      masked[in.dst.index] = in.imm;
      continue;
    }
    if ((in.op == MOp::kLoad || in.op == MOp::kStore) &&
        in.region == AccessRegion::kHeap && in.b.kind == OperandKind::kReg &&
        in.b.reg.kind == RegKind::kVirtual) {
      auto it = masked.find(in.b.reg.index);
      if (it == masked.end() || it->second != heap_mask) {
        MInstr mask;
        mask.op = MOp::kMaskAnd;
        mask.dst = in.b.reg;
        mask.imm = heap_mask;
        b->instrs.insert(b->instrs.begin() + i, mask);
        i++;  // the access moved one slot down
        masked[b->instrs[i].b.reg.index] = heap_mask;
        continue;
      }
    }
    if (auto w = written_reg(in); w && w->kind == RegKind::kVirtual) {
      masked.erase(w->index);
    }
  }
}

}  // namespace

MachineProgram blockify(MachineProgram p) {
  // Split every block at interior terminators and give fall-through edges an
  // explicit jump, so control transfers exist only at block ends.
  std::vector<LinearBlock> out;
  std::vector<u32> head_of(p.blocks.size());  // old id -> new id of first segment

  for (u32 old_id = 0; old_id < p.blocks.size(); old_id++) {
    const LinearBlock& b = p.blocks[old_id];
    head_of[old_id] = (u32)out.size();
    LinearBlock seg;
    seg.label = b.label;
    bool first_segment = true;
    auto flush = [&](bool add_fallthrough_jump) {
      if (add_fallthrough_jump) {
        MInstr j;
        j.op = MOp::kJump;
        j.target = 0;  // next old block; patched via sentinel below
        j.imm = u64(old_id) + 1;
        j.width = 0;   // marks a fall-through jump needing old-id resolution
        seg.instrs.push_back(j);
      }
      seg.id = (u32)out.size();
      out.push_back(std::move(seg));
      seg = LinearBlock{};
      if (first_segment) first_segment = false;
    };
    for (const MInstr& in : b.instrs) {
      seg.instrs.push_back(in);
      if (MInstr::is_terminator(in.op)) flush(false);
    }
    if (!seg.instrs.empty() || first_segment) flush(true);
  }

  // Resolve targets: old block ids became segment-head ids, and synthesized
  // fall-through jumps point at the head of the next old block.
  auto map_block = [&](u32 old_id) {
    return old_id < head_of.size() ? head_of[old_id] : (u32)out.size();
  };
  for (auto& b : out) {
    for (auto& in : b.instrs) {
      if (in.op == MOp::kJump && in.width == 0) {
        in.target = map_block((u32)in.imm);
        in.imm = 0;
        in.width = 8;
        continue;
      }
      switch (in.op) {
        case MOp::kJump:
        case MOp::kCondJump:
        case MOp::kCall:
        case MOp::kSepPush:
          in.target = map_block(in.target);
          break;
        default:
          break;
      }
      if (in.a.kind == OperandKind::kBlockRef) in.a.block = map_block(in.a.block);
      if (in.b.kind == OperandKind::kBlockRef) in.b.block = map_block(in.b.block);
      if (in.c.kind == OperandKind::kBlockRef) in.c.block = map_block(in.c.block);
    }
  }
  for (auto& t : p.tables) {
    for (auto& e : t.entries) e = map_block(e);
  }
  for (auto& f : p.functions) {
    f.entry_block = map_block(f.entry_block);
    f.first_block = map_block(f.first_block);
  }
  p.trap_stub_block = map_block(p.trap_stub_block);

  // Recompute per-function block extents from the new numbering.
  for (size_t i = 0; i < p.functions.size(); i++) {
    u32 end = i + 1 < p.functions.size() ? p.functions[i + 1].first_block
                                         : (u32)out.size();
    p.functions[i].block_count = end - p.functions[i].first_block;
  }

  p.blocks = std::move(out);
  for (auto& b : p.blocks) establish_masks(&b, p.heap_size - 1);
  return p;
}

}  // namespace speclab::machine
