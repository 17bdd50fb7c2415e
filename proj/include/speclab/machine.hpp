#pragma once

// Virtual machine ISA in linear-block normal form. Blocks contain straight-
// line code and exactly one control-flow terminator; calls terminate blocks.
// Addresses are instruction-granular (4 bytes per instruction) with blocks
// starting on 16-byte boundaries.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "speclab/ir.hpp"

namespace speclab::machine {

using u64 = uint64_t;
using u32 = uint32_t;

constexpr u64 kInstrBytes = 4;
constexpr u64 kBlockAlign = 16;

enum class MOp {
  kMove,        // dst <- src
  kArith,       // dst <- a op b
  kCompare,     // dst <- (a cmp b) ? 1 : 0
  kSelect,      // dst <- flag ? a : b
  kMaskAnd,     // dst <- dst & imm  (bounds mask; must precede the access)
  kLoad,        // dst <- mem[base + index + disp]
  kStore,       // mem[base + index + disp] <- src
  kJump,        // direct jump to block
  kJumpInd,     // indirect jump through register (BTB predicted)
  kCondJump,    // if flag != 0 jump to block, else fall through
  kCall,        // direct call; pushes return address, continues at next block
  kCallInd,     // indirect call through register
  kReturn,      // pop return address and jump
  kFence,       // speculation barrier
  kEndbranch,   // legal indirect-transfer landing pad (cet)
  kPkruWrite,   // switch MPK domain (imm: 0 host, 1 sandbox)
  kBtbFlush,    // invalidate all BTB entries
  kSepPush,     // push address of a block onto the separate stack
  kSepPopJump,  // pop separate stack and jump (BTB predicted)
  kLabelSet,    // interlock <- label operand
  kHostcall,    // transition out, run host hook id=imm, transition back
  kTrap,        // architectural trap (imm: TrapKind)
};

enum class MArith { kAdd, kSub, kMul, kAnd, kOr, kXor, kShl, kShr };
enum class MCmp { kEq, kNe, kLtU, kLtS, kGeU };

// Register file: numbered virtual registers plus the special registers the
// hardening schemes reason about.
enum class RegKind : uint8_t {
  kVirtual,    // v<n>, clobbered across calls
  kArg,        // a<n>, argument passing
  kRet,        // function result
  kPinnedHeap, // sandbox heap base, never written by sandbox code
  kSp,         // data stack pointer
  kSepSp,      // separate return stack cursor
  kInterlock,  // block-label interlock register
};

struct Reg {
  RegKind kind = RegKind::kVirtual;
  u32 index = 0;

  bool operator==(const Reg& o) const { return kind == o.kind && index == o.index; }
};

inline Reg vreg(u32 i) { return {RegKind::kVirtual, i}; }
inline Reg areg(u32 i) { return {RegKind::kArg, i}; }
inline constexpr Reg kRetReg{RegKind::kRet, 0};
inline constexpr Reg kPinnedReg{RegKind::kPinnedHeap, 0};
inline constexpr Reg kSpReg{RegKind::kSp, 0};
inline constexpr Reg kSepReg{RegKind::kSepSp, 0};
inline constexpr Reg kInterlockReg{RegKind::kInterlock, 0};

enum class OperandKind : uint8_t {
  kNone,
  kReg,
  kImm,
  kBlockRef,    // block id, resolved to its placed address
  kTableRef,    // base of table `table` within the instance table region
  kGlobalsRef,  // base of the instance globals area
};

struct Operand {
  OperandKind kind = OperandKind::kNone;
  Reg reg;
  u64 imm = 0;
  u32 block = 0;  // kBlockRef target
  u32 table = 0;  // kTableRef table id

  static Operand none() { return {}; }
  static Operand of(Reg r) { return {OperandKind::kReg, r, 0, 0, 0}; }
  static Operand of_imm(u64 v) { return {OperandKind::kImm, {}, v, 0, 0}; }
  static Operand of_block(u32 b) { return {OperandKind::kBlockRef, {}, 0, b, 0}; }
};

// Memory region an access is expected to land in; metadata for the verifier
// and for readers, not consulted by the execution engine.
enum class AccessRegion : uint8_t {
  kNone,
  kHeap,
  kStack,
  kTable,
  kGlobals,
  kHost,
};

struct MInstr {
  MOp op;
  MArith arith = MArith::kAdd;
  MCmp cmp = MCmp::kEq;
  Reg dst;
  Operand a;  // src / base / flag / jump target reg
  Operand b;
  Operand c;  // select: value when the flag is zero
  u64 imm = 0;      // mask constant / disp / trap kind / pkru domain / hostcall id
  u32 target = 0;   // block id for kJump/kCondJump/kCall/kSepPush
  unsigned width = 8;  // load/store width in bytes (1 or 8)
  AccessRegion region = AccessRegion::kNone;
  bool interlock_check = false;  // select is part of the interlock check sequence
  bool stack_check = false;      // fence stands in for the frame overflow check
  std::optional<Reg> scaled_index;  // table-dispatch terminators: the index
                                    // register feeding the table load

  static bool is_terminator(MOp op) {
    switch (op) {
      case MOp::kJump:
      case MOp::kJumpInd:
      case MOp::kCondJump:
      case MOp::kCall:
      case MOp::kCallInd:
      case MOp::kReturn:
      case MOp::kSepPopJump:
      case MOp::kHostcall:
      case MOp::kTrap:
        return true;
      default:
        return false;
    }
  }
};

struct LinearBlock {
  u32 id = 0;
  u64 label = 0;  // interlock block label; 0 when unassigned
  std::vector<MInstr> instrs;
};

// Jump tables and the indirect-call table live in a read-only region outside
// the sandbox heap. Entries name blocks until layout pins addresses.
struct TableData {
  std::vector<u32> entries;        // block ids; power-of-two padded
  u64 logical_len = 0;             // pre-padding entry count
  u64 region_offset = 0;           // byte offset within the table region
};

struct FunctionInfo {
  std::string name;
  u32 entry_block = 0;
  u32 first_block = 0;
  u32 block_count = 0;
  u32 frame_slots = 0;  // params + locals + spill area
  u32 params = 0;
};

enum class Scheme {
  kStock,
  kStrawman,
  kLoadfence,
  kMincut,
  kSfiAslr,
  kSfiDet,
  kCetAslr,
  kCetDet,
};

std::string scheme_name(Scheme s);
std::optional<Scheme> scheme_from_name(const std::string& name);

struct MachineProgram {
  std::vector<LinearBlock> blocks;
  std::vector<FunctionInfo> functions;
  u32 entry_function = 0;
  std::vector<TableData> tables;   // tables[0] is the indirect-call table
  std::vector<u64> table_labels;   // per call-table entry, filled by interlock pass
  u64 heap_size = 0;
  std::vector<u64> globals;
  std::vector<ir::SecretRange> secret_ranges;
  Scheme scheme = Scheme::kStock;
  u32 trap_stub_block = 0;         // shared oob-table trap target
  u32 next_vreg = 0;
  bool is_host = false;            // host-side code: host MPK key, host window

  const LinearBlock& block(u32 id) const { return blocks[id]; }
  LinearBlock& block(u32 id) { return blocks[id]; }
};

// ---------------------------------------------------------------------------
// Image: concrete addresses, mapped regions, and MPK keys.

enum class MpkKey : uint8_t { kHost = 0, kSandbox = 1 };

enum class RegionKind : uint8_t {
  kCode,
  kHeap,
  kStack,
  kSepStack,
  kTable,
  kGlobals,
  kHostData,
  kHostProbe,
  kInstanceMeta,
};

struct MemRegion {
  RegionKind kind;
  u64 base = 0;
  u64 size = 0;
  bool writable = false;
  bool data_readable = true;   // code regions fault on data loads
  MpkKey key = MpkKey::kSandbox;
  int instance = -1;           // -1 for host regions
  std::string name;
};

struct PlacedBlock {
  u64 address = 0;
  u32 instance = 0;
  u32 block = 0;  // block id within that instance's program
};

struct SecretTag {
  u64 base = 0;
  u64 length = 0;
};

struct InstanceLayout {
  u64 code_base = 0;
  u64 code_size = 0;
  u64 heap_base = 0;
  u64 heap_size = 0;
  u64 stack_top = 0;
  u64 sep_base = 0;       // lowest separate-stack slot
  u64 sep_slots = 0;
  u64 table_base = 0;
  u64 globals_base = 0;
  u64 meta_base = 0;      // instance descriptor page (holds globals base)
  std::vector<u64> block_addr;  // per block id
};

struct Image {
  std::vector<MachineProgram> programs;  // one per instance
  std::vector<InstanceLayout> instances;
  std::vector<MemRegion> regions;
  ir::SparseBytes initial;               // initial bytes for data regions
  std::vector<SecretTag> secrets;
  u64 aslr_seed = 0;
  bool aslr = false;

  std::vector<PlacedBlock> sorted_blocks;  // by address, for fetch lookup

  const MemRegion* region_at(u64 addr) const;
  // Resolves an address to (instance, block, instr index); nullopt when the
  // address is not a 4-aligned slot inside a placed block.
  struct CodeRef {
    u32 instance;
    u32 block;
    u32 index;
  };
  std::optional<CodeRef> code_at(u64 addr) const;
  u64 block_address(u32 instance, u32 block) const {
    return instances[instance].block_addr[block];
  }
};

// Canonical address map. ASLR randomizes bits [4,30) of per-instance code
// placement inside a dedicated 2^30 window; data regions get the same
// treatment at page granularity.
constexpr u64 kCodeGroupBase = u64{1} << 32;       // all code shares upper 32 bits
constexpr u64 kCodeWindowBits = 30;
constexpr u64 kHostCodeBase = kCodeGroupBase + 3 * (u64{1} << kCodeWindowBits);
constexpr u64 kHeapSpacing = u64{1} << 36;
constexpr u64 kHeapBase0 = u64{1} << 40;
constexpr u64 kDefaultGuardBytes = u64{8} << 30;   // unmapped span past the heap
constexpr u64 kStackBase0 = u64{0x7000'0000'0000};
constexpr u64 kStackBytes = u64{4} << 20;
constexpr u64 kSepBase0 = u64{0x7800'0000'0000};
constexpr u64 kSepStackSlots = ir::kMaxCallFrames - 1;
constexpr u64 kTableBase0 = u64{0x8000'0000'0000};
constexpr u64 kGlobalsBase0 = u64{0x6000'0000'0000};
constexpr u64 kHostDataBase = u64{0x9000'0000'0000};
constexpr u64 kHostProbeBase = u64{0x9000'1000'0000};
constexpr u64 kProbeLines = 256;
constexpr u64 kMetaGlobalsSlot = 64;  // descriptor cell: [heap_base - 64]

std::string reg_name(Reg r);
std::string instr_to_string(const MInstr& in);
std::string program_to_string(const MachineProgram& p);

}  // namespace speclab::machine
