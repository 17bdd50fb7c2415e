#pragma once

#include <optional>

#include "speclab/ir.hpp"
#include "speclab/machine.hpp"

namespace speclab::machine {

// Lowers a validated module to the virtual ISA in stock form: masked heap
// accesses against the pinned heap register, bounds-checked table dispatch,
// frame-based locals with explicit spills around calls.
MachineProgram lower(const ir::SandboxModule& m, u32 entry = 0);

// Establishes linear-block normal form: control flow only at terminators,
// explicit fall-through jumps, and a bounds mask in the same block as every
// indexed heap or table access. Idempotent.
MachineProgram blockify(MachineProgram p);

struct LayoutOptions {
  u64 window_bytes = u64{1} << kCodeWindowBits;  // per-instance code budget
  u64 guard_bytes = kDefaultGuardBytes;
};

// Places one program as instance 0 of a fresh image. aslr_seed randomizes
// bits [4,30) of the code base inside the instance window and the data
// region bases at page granularity; without a seed placement is canonical.
Image layout(const MachineProgram& p, std::optional<u64> aslr_seed,
             const LayoutOptions& opts = {});

// Multi-instance placement for attack scenarios; instance i occupies code
// window i. Seeds are per instance when randomizing.
Image layout_multi(std::vector<MachineProgram> programs,
                   const std::vector<std::optional<u64>>& seeds,
                   const LayoutOptions& opts = {});

struct Violation {
  u32 instance = 0;
  u32 block = 0;
  u32 instr = 0;
  std::string message;
};

// Standalone linear-block invariant checker: terminator-only control flow,
// same-block masking, pinned-heap write freedom, and for cet-det images
// endbranch coverage of indirect-target blocks plus unique non-trivial
// labels.
std::vector<Violation> check_linear_blocks(const MachineProgram& p);
std::vector<Violation> check_image(const Image& img);

}  // namespace speclab::machine
