#include <sstream>

#include "speclab/machine.hpp"

namespace speclab::machine {

std::string scheme_name(Scheme s) {
  switch (s) {
    case Scheme::kStock: return "stock";
    case Scheme::kStrawman: return "strawman";
    case Scheme::kLoadfence: return "loadfence";
    case Scheme::kMincut: return "mincut";
    case Scheme::kSfiAslr: return "sfi-aslr";
    case Scheme::kSfiDet: return "sfi-det";
    case Scheme::kCetAslr: return "cet-aslr";
    case Scheme::kCetDet: return "cet-det";
  }
  return "?";
}

std::optional<Scheme> scheme_from_name(const std::string& name) {
  for (Scheme s : {Scheme::kStock, Scheme::kStrawman, Scheme::kLoadfence,
                   Scheme::kMincut, Scheme::kSfiAslr, Scheme::kSfiDet,
                   Scheme::kCetAslr, Scheme::kCetDet}) {
    if (scheme_name(s) == name) return s;
  }
  return std::nullopt;
}

std::string reg_name(Reg r) {
  switch (r.kind) {
    case RegKind::kVirtual: return "v" + std::to_string(r.index);
    case RegKind::kArg: return "a" + std::to_string(r.index);
    case RegKind::kRet: return "ret";
    case RegKind::kPinnedHeap: return "hbase";
    case RegKind::kSp: return "sp";
    case RegKind::kSepSp: return "sep";
    case RegKind::kInterlock: return "ilk";
  }
  return "?";
}

namespace {

std::string operand_name(const Operand& o) {
  switch (o.kind) {
    case OperandKind::kNone: return "_";
    case OperandKind::kReg: return reg_name(o.reg);
    case OperandKind::kImm: {
      std::ostringstream os;
      if (o.imm > 0xffff && o.imm < 0xffffffffffff0000ull) {
        os << "0x" << std::hex << o.imm;
      } else {
        os << (int64_t)o.imm;
      }
      return os.str();
    }
    case OperandKind::kBlockRef: return "@b" + std::to_string(o.block);
    case OperandKind::kTableRef: return "@table" + std::to_string(o.table);
    case OperandKind::kGlobalsRef: return "@globals";
  }
  return "?";
}

std::string arith_name(MArith op) {
  switch (op) {
    case MArith::kAdd: return "add";
    case MArith::kSub: return "sub";
    case MArith::kMul: return "mul";
    case MArith::kAnd: return "and";
    case MArith::kOr: return "or";
    case MArith::kXor: return "xor";
    case MArith::kShl: return "shl";
    case MArith::kShr: return "shr";
  }
  return "?";
}

std::string cmp_name(MCmp op) {
  switch (op) {
    case MCmp::kEq: return "eq";
    case MCmp::kNe: return "ne";
    case MCmp::kLtU: return "lt_u";
    case MCmp::kLtS: return "lt_s";
    case MCmp::kGeU: return "ge_u";
  }
  return "?";
}

std::string mem_suffix(const MInstr& in) {
  std::string s = in.width == 1 ? ".b" : "";
  switch (in.region) {
    case AccessRegion::kHeap: return s + " heap";
    case AccessRegion::kStack: return s + " stack";
    case AccessRegion::kTable: return s + " table";
    case AccessRegion::kGlobals: return s + " globals";
    case AccessRegion::kHost: return s + " host";
    case AccessRegion::kNone: return s;
  }
  return s;
}

}  // namespace

std::string instr_to_string(const MInstr& in) {
  std::ostringstream os;
  switch (in.op) {
    case MOp::kMove:
      os << "move " << reg_name(in.dst) << ", " << operand_name(in.a);
      break;
    case MOp::kArith:
      os << arith_name(in.arith) << " " << reg_name(in.dst) << ", "
         << operand_name(in.a) << ", " << operand_name(in.b);
      break;
    case MOp::kCompare:
      os << "cmp." << cmp_name(in.cmp) << " " << reg_name(in.dst) << ", "
         << operand_name(in.a) << ", " << operand_name(in.b);
      break;
    case MOp::kSelect:
      os << "select " << reg_name(in.dst) << ", " << operand_name(in.a) << " ? "
         << operand_name(in.b) << " : " << operand_name(in.c);
      if (in.interlock_check) os << "  ; interlock";
      break;
    case MOp::kMaskAnd:
      os << "mask " << reg_name(in.dst) << ", 0x" << std::hex << in.imm;
      break;
    case MOp::kLoad:
      os << "load" << mem_suffix(in) << " " << reg_name(in.dst) << ", ["
         << operand_name(in.a) << " + " << operand_name(in.b) << " + "
         << (int64_t)in.imm << "]";
      break;
    case MOp::kStore:
      os << "store" << mem_suffix(in) << " [" << operand_name(in.a) << " + "
         << operand_name(in.b) << " + " << (int64_t)in.imm << "], "
         << reg_name(in.dst);
      break;
    case MOp::kJump: os << "jump b" << in.target; break;
    case MOp::kJumpInd: os << "jump.ind " << operand_name(in.a); break;
    case MOp::kCondJump:
      os << "cond.jump " << operand_name(in.a) << ", b" << in.target;
      break;
    case MOp::kCall: os << "call b" << in.target; break;
    case MOp::kCallInd: os << "call.ind " << operand_name(in.a); break;
    case MOp::kReturn: os << "return"; break;
    case MOp::kFence: os << (in.stack_check ? "fence  ; stack check" : "fence"); break;
    case MOp::kEndbranch: os << "endbranch"; break;
    case MOp::kPkruWrite: os << "pkru " << (in.imm ? "sandbox" : "host"); break;
    case MOp::kBtbFlush: os << "btb.flush"; break;
    case MOp::kSepPush: os << "sep.push b" << in.target; break;
    case MOp::kSepPopJump: os << "sep.pop.jump"; break;
    case MOp::kLabelSet: os << "label.set " << operand_name(in.a); break;
    case MOp::kHostcall: os << "hostcall " << in.imm; break;
    case MOp::kTrap:
      os << "trap " << ir::trap_name((ir::TrapKind)in.imm);
      break;
  }
  return os.str();
}

std::string program_to_string(const MachineProgram& p) {
  std::ostringstream os;
  os << "; scheme " << scheme_name(p.scheme) << ", " << p.blocks.size()
     << " blocks\n";
  for (const auto& f : p.functions) {
    os << "; func " << f.name << " entry b" << f.entry_block << " frame "
       << f.frame_slots << "\n";
  }
  for (const auto& b : p.blocks) {
    os << "b" << b.id;
    if (b.label) os << "  ; label 0x" << std::hex << b.label << std::dec;
    os << ":\n";
    for (const auto& in : b.instrs) {
      os << "    " << instr_to_string(in) << "\n";
    }
  }
  return os.str();
}

}  // namespace speclab::machine
