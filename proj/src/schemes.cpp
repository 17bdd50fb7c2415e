#include <stdexcept>

#include "speclab/schemes.hpp"

namespace speclab::machine {

SchemeConfig SchemeConfig::for_scheme(Scheme s) {
  SchemeConfig cfg;
  cfg.scheme = s;
  switch (s) {
    case Scheme::kStock:
      break;
    case Scheme::kStrawman:
    case Scheme::kLoadfence:
    case Scheme::kMincut:
      cfg.fence_at_boundary = true;
      break;
    case Scheme::kSfiAslr:
      cfg.aslr = true;
      cfg.flush_btb_on_entry = true;
      cfg.flush_btb_on_exit = true;
      cfg.separate_stack = true;
      cfg.harden_tables = true;
      cfg.fence_at_boundary = true;
      break;
    case Scheme::kSfiDet:
      cfg.flush_btb_on_entry = true;
      cfg.flush_btb_on_exit = true;
      cfg.separate_stack = true;
      cfg.cbp_to_btb = true;
      cfg.harden_tables = true;
      cfg.fence_at_boundary = true;
      break;
    case Scheme::kCetAslr:
      cfg.aslr = true;
      cfg.flush_btb_on_entry = true;
      cfg.mpk_enabled = true;
      cfg.cet = true;
      cfg.harden_tables = true;
      cfg.fence_at_boundary = true;
      break;
    case Scheme::kCetDet:
      cfg.mpk_enabled = true;
      cfg.interlock_enabled = true;
      cfg.cet = true;
      cfg.harden_tables = true;
      cfg.fence_at_boundary = true;
      break;
  }
  return cfg;
}

void validate_config(const SchemeConfig& cfg) {
  SchemeConfig expect = SchemeConfig::for_scheme(cfg.scheme);
  bool same = cfg.aslr == expect.aslr &&
              cfg.flush_btb_on_entry == expect.flush_btb_on_entry &&
              cfg.flush_btb_on_exit == expect.flush_btb_on_exit &&
              cfg.mpk_enabled == expect.mpk_enabled &&
              cfg.interlock_enabled == expect.interlock_enabled &&
              cfg.cbp_to_btb == expect.cbp_to_btb &&
              cfg.separate_stack == expect.separate_stack &&
              cfg.cet == expect.cet &&
              cfg.harden_tables == expect.harden_tables &&
              cfg.fence_at_boundary == expect.fence_at_boundary;
  if (!same) {
    throw std::runtime_error("flag combination does not match scheme " +
                             scheme_name(cfg.scheme));
  }
}

namespace {

// Stand-in for the fenced frame-overflow check: one fence at each function
// entry under the hardened schemes.
MachineProgram add_stack_check_fences(MachineProgram p) {
  for (const auto& f : p.functions) {
    auto& instrs = p.blocks[f.entry_block].instrs;
    if (!instrs.empty() && instrs[0].op == MOp::kFence && instrs[0].stack_check)
      continue;
    MInstr fence;
    fence.op = MOp::kFence;
    fence.stack_check = true;
    instrs.insert(instrs.begin(), fence);
  }
  return p;
}

}  // namespace

MachineProgram apply_scheme(MachineProgram p, const SchemeConfig& cfg) {
  return apply_scheme_dumping(std::move(p), cfg, nullptr);
}

MachineProgram apply_scheme_dumping(MachineProgram p, const SchemeConfig& cfg,
                                    std::vector<PassDump>* dumps) {
  validate_config(cfg);
  p.scheme = cfg.scheme;
  auto record = [&](const char* pass) {
    if (dumps) dumps->push_back({pass, program_to_string(p)});
  };
  record("input");
  if (cfg.harden_tables) {
    p = harden_jump_tables(std::move(p));
    record("harden-jump-tables");
    p = add_stack_check_fences(std::move(p));
    record("stack-check-fences");
  }
  if (cfg.separate_stack) {
    p = apply_separate_stack(std::move(p));
    record("separate-stack");
  }
  if (cfg.cbp_to_btb) {
    p = convert_cbp_to_btb(std::move(p));
    record("cbp-to-btb");
  }
  if (cfg.interlock_enabled) {
    p = apply_interlocks(std::move(p));
    record("interlocks");
  }
  if (cfg.cet) {
    p = annotate_endbranch(std::move(p));
    record("endbranch");
  }
  switch (cfg.scheme) {
    case Scheme::kStrawman:
      p = insert_fences(std::move(p), FenceStrategy::kStrawman);
      record("fences-strawman");
      break;
    case Scheme::kLoadfence:
      p = insert_fences(std::move(p), FenceStrategy::kLoadfence);
      record("fences-loadfence");
      break;
    case Scheme::kMincut:
      p = insert_fences(std::move(p), FenceStrategy::kMincut);
      record("fences-mincut");
      break;
    default:
      break;
  }
  return p;
}

}  // namespace speclab::machine
