#include <cassert>
#include <stdexcept>

#include "speclab/codegen.hpp"

namespace speclab::machine {

namespace {

using ir::Op;
using ir::OpKind;

MArith to_march(ir::ArithOp op) {
  switch (op) {
    case ir::ArithOp::kAdd: return MArith::kAdd;
    case ir::ArithOp::kSub: return MArith::kSub;
    case ir::ArithOp::kMul: return MArith::kMul;
    case ir::ArithOp::kAnd: return MArith::kAnd;
    case ir::ArithOp::kOr: return MArith::kOr;
    case ir::ArithOp::kXor: return MArith::kXor;
    case ir::ArithOp::kShl: return MArith::kShl;
    case ir::ArithOp::kShr: return MArith::kShr;
  }
  return MArith::kAdd;
}

MCmp to_mcmp(ir::CmpOp op) {
  switch (op) {
    case ir::CmpOp::kEq: return MCmp::kEq;
    case ir::CmpOp::kNe: return MCmp::kNe;
    case ir::CmpOp::kLtU: return MCmp::kLtU;
    case ir::CmpOp::kLtS: return MCmp::kLtS;
  }
  return MCmp::kEq;
}

u64 pow2_at_least(u64 n) {
  u64 p = 1;
  while (p < n) p <<= 1;
  return p;
}

class Lowerer {
 public:
  explicit Lowerer(const ir::SandboxModule& m) : m_(m) {
    prog_.heap_size = m.heap_size;
    prog_.globals = m.globals;
    prog_.secret_ranges = m.secret_ranges;
    prog_.tables.emplace_back();  // slot 0: the indirect-call table
  }

  MachineProgram run(u32 entry) {
    prog_.entry_function = entry;

    // Shared out-of-bounds trap target for the indirect-call path.
    begin_block();
    emit_trap(ir::TrapKind::kOobTable);
    prog_.trap_stub_block = 0;

    for (u32 i = 0; i < m_.functions.size(); i++) lower_function(i);

    // Direct calls can reference functions lowered later.
    for (auto& [block, func] : call_fixups_) {
      prog_.blocks[block].instrs.back().target =
          prog_.functions[func].entry_block;
    }

    if (!m_.func_table.empty()) {
      TableData& call_table = prog_.tables[0];
      call_table.logical_len = m_.func_table.size();
      u64 padded = pow2_at_least(call_table.logical_len);
      for (u32 f : m_.func_table)
        call_table.entries.push_back(prog_.functions[f].entry_block);
      while (call_table.entries.size() < padded)
        call_table.entries.push_back(prog_.trap_stub_block);
    }

    u64 offset = 0;
    for (auto& t : prog_.tables) {
      t.region_offset = offset;
      offset += t.entries.size() * 8;
      offset += t.entries.size() * 8;  // shadow label array, interlock pass
    }
    prog_.next_vreg = next_vreg_;
    return std::move(prog_);
  }

 private:
  struct Scope {
    std::string label;
    bool is_loop = false;
    u32 header = 0;                        // loop target
    size_t mirror_depth = 0;
    std::vector<u32> pending_jumps;        // block ids whose terminator targets this
    std::vector<std::pair<u32, u32>> pending_table_slots;  // (table, entry)
  };

  // --- block plumbing -------------------------------------------------------

  u32 cur_id() const { return (u32)prog_.blocks.size(); }

  void begin_block() { assert(cur_.empty()); }

  u32 finish_block(MInstr term) {
    cur_.push_back(term);
    u32 id = cur_id();
    LinearBlock b;
    b.id = id;
    b.instrs = std::move(cur_);
    cur_.clear();
    prog_.blocks.push_back(std::move(b));
    closed_ = MInstr::is_terminator(term.op) && term.op != MOp::kCondJump &&
              term.op != MOp::kCall && term.op != MOp::kCallInd &&
              term.op != MOp::kHostcall;
    return id;
  }

  // Ends the current block with an explicit jump to the block about to begin.
  void split_fallthrough() {
    MInstr j;
    j.op = MOp::kJump;
    j.target = cur_id() + 1;
    finish_block(j);
  }

  void emit(MInstr in) { cur_.push_back(in); }

  Reg fresh() { return vreg(next_vreg_++); }

  void emit_trap(ir::TrapKind kind) {
    MInstr t;
    t.op = MOp::kTrap;
    t.imm = (u64)kind;
    finish_block(t);
  }

  // --- common instruction helpers -------------------------------------------

  MInstr move(Reg dst, Operand src) {
    MInstr in;
    in.op = MOp::kMove;
    in.dst = dst;
    in.a = src;
    return in;
  }

  MInstr arith(MArith op, Reg dst, Operand a, Operand b) {
    MInstr in;
    in.op = MOp::kArith;
    in.arith = op;
    in.dst = dst;
    in.a = a;
    in.b = b;
    return in;
  }

  MInstr load(Reg dst, Operand base, Operand index, u64 disp, unsigned width,
              AccessRegion region) {
    MInstr in;
    in.op = MOp::kLoad;
    in.dst = dst;
    in.a = base;
    in.b = index;
    in.imm = disp;
    in.width = width;
    in.region = region;
    return in;
  }

  MInstr store(Operand base, Operand index, u64 disp, Reg src, unsigned width,
               AccessRegion region) {
    MInstr in;
    in.op = MOp::kStore;
    in.dst = src;  // value register
    in.a = base;
    in.b = index;
    in.imm = disp;
    in.width = width;
    in.region = region;
    return in;
  }

  MInstr mask_and(Reg r, u64 mask) {
    MInstr in;
    in.op = MOp::kMaskAnd;
    in.dst = r;
    in.imm = mask;
    return in;
  }

  u64 slot_off(u32 slot) const { return 8 * (u64)slot; }

  void store_slot(u32 slot, Reg src) {
    emit(store(Operand::of(kSpReg), Operand::none(), slot_off(slot), src, 8,
               AccessRegion::kStack));
  }

  Reg load_slot(u32 slot) {
    Reg r = fresh();
    emit(load(r, Operand::of(kSpReg), Operand::none(), slot_off(slot), 8,
              AccessRegion::kStack));
    return r;
  }

  // --- function lowering -----------------------------------------------------

  void lower_function(u32 func_idx) {
    const ir::Function& f = m_.functions[func_idx];
    ir::StackShape shape = ir::function_stack_shape(m_, f);
    FunctionInfo info;
    info.name = f.name;
    info.params = f.params;
    info.frame_slots = f.params + f.locals + shape.max_stack;
    info.first_block = cur_id();
    info.entry_block = cur_id();
    locals_base_ = 0;
    spill_base_ = f.params + f.locals;
    frame_slots_ = info.frame_slots;

    // Prologue: allocate the frame and home incoming arguments.
    assert(cur_.empty());
    closed_ = false;
    if (frame_slots_ > 0) {
      emit(arith(MArith::kSub, kSpReg, Operand::of(kSpReg),
                 Operand::of_imm(8 * (u64)frame_slots_)));
    }
    for (u32 i = 0; i < f.params; i++) store_slot(i, areg(i));

    mirror_.clear();
    scopes_.clear();
    lower_body(f);

    info.block_count = cur_id() - info.first_block;
    prog_.functions.push_back(info);
  }

  void lower_body(const ir::Function& f) {
    for (const Op& op : f.body) lower_op(f, op);
    if (!closed_) {
      // Implicit return: result is the remaining stack value, or zero.
      Reg v = mirror_.empty() ? Reg{} : mirror_.back();
      if (mirror_.empty()) {
        emit(move(kRetReg, Operand::of_imm(0)));
      } else {
        emit(move(kRetReg, Operand::of(v)));
        mirror_.pop_back();
      }
      emit_epilogue_and_return();
    }
    closed_ = false;
  }

  void emit_epilogue_and_return() {
    if (frame_slots_ > 0) {
      emit(arith(MArith::kAdd, kSpReg, Operand::of(kSpReg),
                 Operand::of_imm(8 * (u64)frame_slots_)));
    }
    MInstr ret;
    ret.op = MOp::kReturn;
    finish_block(ret);
  }

  Scope* find_scope(const std::string& label) {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      if (it->label == label) return &*it;
    }
    return nullptr;
  }

  // Emits the terminator for a branch to `s`, leaving fixups for forward
  // targets. kind selects jump/cond-jump.
  void branch_to(Scope* s, std::optional<Reg> flag) {
    MInstr j;
    if (flag.has_value()) {
      j.op = MOp::kCondJump;
      j.a = Operand::of(*flag);
    } else {
      j.op = MOp::kJump;
    }
    if (s->is_loop) {
      j.target = s->header;
      finish_block(j);
    } else {
      j.target = 0;  // patched when the scope closes
      u32 id = finish_block(j);
      s->pending_jumps.push_back(id);
    }
  }

  void spill_mirror() {
    for (size_t i = 0; i < mirror_.size(); i++) {
      store_slot(spill_base_ + (u32)i, mirror_[i]);
    }
  }

  void reload_mirror() {
    for (size_t i = 0; i < mirror_.size(); i++) {
      mirror_[i] = load_slot(spill_base_ + (u32)i);
    }
  }

  void lower_call_shape(u32 argc, MOp call_op, u32 func_idx, u64 hostcall_id,
                        Reg callind_idx) {
    std::vector<Reg> args(argc);
    for (u32 i = argc; i > 0; i--) {
      args[i - 1] = mirror_.back();
      mirror_.pop_back();
    }
    spill_mirror();
    for (u32 i = 0; i < argc; i++) emit(move(areg(i), Operand::of(args[i])));

    if (call_op == MOp::kCall) {
      MInstr c;
      c.op = MOp::kCall;
      c.target = 0;  // patched once all functions are lowered
      u32 id = finish_block(c);
      call_fixups_.push_back({id, func_idx});
    } else if (call_op == MOp::kHostcall) {
      MInstr h;
      h.op = MOp::kHostcall;
      h.imm = hostcall_id;
      finish_block(h);
    } else {
      // Bounds check in the shape of the stock indirect-call sequence:
      // compare against the table length, trap when out of range, then load
      // the entry and call through it.
      Reg c = fresh();
      MInstr cmp;
      cmp.op = MOp::kCompare;
      cmp.cmp = MCmp::kGeU;
      cmp.dst = c;
      cmp.a = Operand::of(callind_idx);
      cmp.b = Operand::of_imm(m_.func_table.size());
      emit(cmp);
      MInstr guard;
      guard.op = MOp::kCondJump;
      guard.a = Operand::of(c);
      guard.target = prog_.trap_stub_block;
      finish_block(guard);

      Reg scaled = fresh();
      emit(arith(MArith::kShl, scaled, Operand::of(callind_idx),
                 Operand::of_imm(3)));
      Reg target = fresh();
      Operand table_base;
      table_base.kind = OperandKind::kTableRef;
      table_base.table = 0;  // call table; renumbered in run()
      emit(load(target, table_base, Operand::of(scaled), 0, 8,
                AccessRegion::kTable));
      MInstr ci;
      ci.op = MOp::kCallInd;
      ci.a = Operand::of(target);
      ci.scaled_index = scaled;
      finish_block(ci);
    }

    // Continuation: unspill the surviving operand stack and take the result.
    reload_mirror();
    Reg r = fresh();
    emit(move(r, Operand::of(kRetReg)));
    mirror_.push_back(r);
  }

  void lower_op(const ir::Function& f, const Op& op) {
    switch (op.kind) {
      case OpKind::kConst: {
        Reg r = fresh();
        emit(move(r, Operand::of_imm(op.imm)));
        mirror_.push_back(r);
        break;
      }
      case OpKind::kArith: {
        Reg b = mirror_.back();
        mirror_.pop_back();
        Reg a = mirror_.back();
        mirror_.pop_back();
        Reg r = fresh();
        emit(arith(to_march(op.arith), r, Operand::of(a), Operand::of(b)));
        mirror_.push_back(r);
        break;
      }
      case OpKind::kCompare: {
        Reg b = mirror_.back();
        mirror_.pop_back();
        Reg a = mirror_.back();
        mirror_.pop_back();
        Reg r = fresh();
        MInstr in;
        in.op = MOp::kCompare;
        in.cmp = to_mcmp(op.cmp);
        in.dst = r;
        in.a = Operand::of(a);
        in.b = Operand::of(b);
        emit(in);
        mirror_.push_back(r);
        break;
      }
      case OpKind::kDrop: mirror_.pop_back(); break;
      case OpKind::kLocalGet: mirror_.push_back(load_slot((u32)op.imm)); break;
      case OpKind::kLocalSet: {
        Reg v = mirror_.back();
        mirror_.pop_back();
        store_slot((u32)op.imm, v);
        break;
      }
      case OpKind::kGlobalGet: {
        Reg base = fresh();
        Operand gref;
        gref.kind = OperandKind::kGlobalsRef;
        emit(move(base, gref));
        Reg r = fresh();
        emit(load(r, Operand::of(base), Operand::none(), 8 * op.imm, 8,
                  AccessRegion::kGlobals));
        mirror_.push_back(r);
        break;
      }
      case OpKind::kGlobalSet: {
        Reg v = mirror_.back();
        mirror_.pop_back();
        Reg base = fresh();
        Operand gref;
        gref.kind = OperandKind::kGlobalsRef;
        emit(move(base, gref));
        emit(store(Operand::of(base), Operand::none(), 8 * op.imm, v, 8,
                   AccessRegion::kGlobals));
        break;
      }
      case OpKind::kLoad:
      case OpKind::kLoad8: {
        Reg idx = mirror_.back();
        mirror_.pop_back();
        emit(mask_and(idx, m_.heap_size - 1));
        Reg r = fresh();
        emit(load(r, Operand::of(kPinnedReg), Operand::of(idx), op.imm,
                  op.kind == OpKind::kLoad ? 8 : 1, AccessRegion::kHeap));
        mirror_.push_back(r);
        break;
      }
      case OpKind::kStore:
      case OpKind::kStore8: {
        Reg v = mirror_.back();
        mirror_.pop_back();
        Reg idx = mirror_.back();
        mirror_.pop_back();
        emit(mask_and(idx, m_.heap_size - 1));
        emit(store(Operand::of(kPinnedReg), Operand::of(idx), op.imm, v,
                   op.kind == OpKind::kStore ? 8 : 1, AccessRegion::kHeap));
        break;
      }
      case OpKind::kBlock: {
        Scope s;
        s.label = op.label;
        s.mirror_depth = mirror_.size();
        scopes_.push_back(std::move(s));
        break;
      }
      case OpKind::kLoop: {
        split_fallthrough();
        Scope s;
        s.label = op.label;
        s.is_loop = true;
        s.header = cur_id();
        s.mirror_depth = mirror_.size();
        scopes_.push_back(std::move(s));
        break;
      }
      case OpKind::kEnd: {
        Scope s = std::move(scopes_.back());
        scopes_.pop_back();
        mirror_.resize(s.mirror_depth);
        if (!s.is_loop &&
            (!s.pending_jumps.empty() || !s.pending_table_slots.empty())) {
          if (!closed_) split_fallthrough();
          u32 join = cur_id();
          for (u32 b : s.pending_jumps) {
            prog_.blocks[b].instrs.back().target = join;
          }
          for (auto& [table, slot] : s.pending_table_slots) {
            prog_.tables[table].entries[slot] = join;
          }
          closed_ = false;
        }
        break;
      }
      case OpKind::kBr: {
        Scope* s = find_scope(op.label);
        branch_to(s, std::nullopt);
        break;
      }
      case OpKind::kBrIf: {
        Reg c = mirror_.back();
        mirror_.pop_back();
        Scope* s = find_scope(op.label);
        branch_to(s, c);
        closed_ = false;  // fall through into the next block
        break;
      }
      case OpKind::kBrTable: {
        Reg idx = mirror_.back();
        mirror_.pop_back();
        lower_br_table(op, idx);
        break;
      }
      case OpKind::kCall:
        lower_call_shape(m_.functions[op.func].params, MOp::kCall, op.func, 0,
                         {});
        break;
      case OpKind::kCallIndirect: {
        Reg idx = mirror_.back();
        mirror_.pop_back();
        u32 arity = m_.functions[m_.func_table[0]].params;
        lower_call_shape(arity, MOp::kCallInd, 0, 0, idx);
        break;
      }
      case OpKind::kHostcall:
        lower_call_shape(0, MOp::kHostcall, 0, op.imm, {});
        break;
      case OpKind::kReturn: {
        Reg v = mirror_.back();
        mirror_.pop_back();
        emit(move(kRetReg, Operand::of(v)));
        emit_epilogue_and_return();
        break;
      }
    }
  }

  void lower_br_table(const Op& op, Reg idx) {
    size_t n = op.table.size() - 1;  // last entry is the default

    // Fig-2 shape: bounds check against the logical length, then a masked
    // table load feeding an indirect jump.
    Reg c = fresh();
    MInstr cmp;
    cmp.op = MOp::kCompare;
    cmp.cmp = MCmp::kGeU;
    cmp.dst = c;
    cmp.a = Operand::of(idx);
    cmp.b = Operand::of_imm(n);
    emit(cmp);
    Scope* def = find_scope(op.table.back());
    branch_to(def, c);
    closed_ = false;

    TableData table;
    table.logical_len = n;
    u64 padded = pow2_at_least(n);
    table.entries.assign(padded, prog_.trap_stub_block);
    u32 table_id = (u32)prog_.tables.size();
    for (size_t i = 0; i < n; i++) {
      Scope* s = find_scope(op.table[i]);
      if (s->is_loop) {
        table.entries[i] = s->header;
      } else {
        s->pending_table_slots.push_back({table_id, (u32)i});
      }
    }
    prog_.tables.push_back(std::move(table));

    Reg scaled = fresh();
    emit(arith(MArith::kShl, scaled, Operand::of(idx), Operand::of_imm(3)));
    Reg target = fresh();
    Operand table_base;
    table_base.kind = OperandKind::kTableRef;
    table_base.table = table_id;
    emit(load(target, table_base, Operand::of(scaled), 0, 8,
              AccessRegion::kTable));
    MInstr j;
    j.op = MOp::kJumpInd;
    j.a = Operand::of(target);
    j.scaled_index = scaled;
    finish_block(j);
  }

  const ir::SandboxModule& m_;
  MachineProgram prog_;
  std::vector<MInstr> cur_;
  std::vector<Reg> mirror_;
  std::vector<Scope> scopes_;
  std::vector<std::pair<u32, u32>> call_fixups_;
  u32 next_vreg_ = 0;
  u32 locals_base_ = 0;
  u32 spill_base_ = 0;
  u32 frame_slots_ = 0;
  bool closed_ = false;
};

}  // namespace

MachineProgram lower(const ir::SandboxModule& m, u32 entry) {
  ir::ValidationReport report = validate(m);
  if (!report.ok) {
    throw std::runtime_error("cannot lower invalid module: " +
                             report.diagnostics[0].message);
  }
  Lowerer lowerer(m);
  return lowerer.run(entry);
}

}  // namespace speclab::machine
