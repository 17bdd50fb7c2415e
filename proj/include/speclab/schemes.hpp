#pragma once

#include <string>

#include "speclab/machine.hpp"

namespace speclab::machine {

// Flag assignments follow the per-technique breakdown for each scheme; the
// factory is the single source of truth and validate() rejects hand-rolled
// combinations that stray from it.
struct SchemeConfig {
  Scheme scheme = Scheme::kStock;
  bool aslr = false;
  bool flush_btb_on_entry = false;
  bool flush_btb_on_exit = false;
  bool mpk_enabled = false;
  bool interlock_enabled = false;
  bool cbp_to_btb = false;
  bool separate_stack = false;
  bool cet = false;                 // endbranch + shadow stack
  bool harden_tables = false;       // SLH masks on table dispatch
  bool fence_at_boundary = false;

  static SchemeConfig for_scheme(Scheme s);

  bool is_swivel() const {
    return scheme == Scheme::kSfiAslr || scheme == Scheme::kSfiDet ||
           scheme == Scheme::kCetAslr || scheme == Scheme::kCetDet;
  }
  bool is_baseline_fence() const {
    return scheme == Scheme::kStrawman || scheme == Scheme::kLoadfence ||
           scheme == Scheme::kMincut;
  }
};

// Throws on flag combinations that do not match the scheme's row.
void validate_config(const SchemeConfig& cfg);

// Applies the hardening pipeline for cfg in fixed order: table hardening,
// separate stack, conditional-branch conversion, register interlocks,
// endbranch annotation, fence insertion. Input must be blockified.
MachineProgram apply_scheme(MachineProgram p, const SchemeConfig& cfg);

// Individual passes, exposed for tests and the pass-dump facility.
MachineProgram harden_jump_tables(MachineProgram p);
MachineProgram apply_separate_stack(MachineProgram p);
MachineProgram convert_cbp_to_btb(MachineProgram p);
MachineProgram apply_interlocks(MachineProgram p);
MachineProgram annotate_endbranch(MachineProgram p);

enum class FenceStrategy { kStrawman, kLoadfence, kMincut };
MachineProgram insert_fences(MachineProgram p, FenceStrategy strategy);

struct PassDump {
  std::string pass;
  std::string listing;
};
MachineProgram apply_scheme_dumping(MachineProgram p, const SchemeConfig& cfg,
                                    std::vector<PassDump>* dumps);

}  // namespace speclab::machine
