#pragma once

// Transient data-flow graph for the min-cut fence baseline: sources are load
// results, sinks are address operands and branch conditions, edges follow
// def-use through moves and arithmetic. Unit capacity per edge; acyclic per
// function under the fresh-register lowering discipline.

#include <cstdint>
#include <vector>

#include "speclab/machine.hpp"

namespace speclab::machine {

struct TfgNode {
  u32 block = 0;
  u32 instr = 0;
  bool is_source = false;  // load result definition
  bool is_sink = false;    // address operand or branch condition use
};

struct TfgEdge {
  u32 id = 0;
  u32 from = 0;  // node index
  u32 to = 0;
};

struct TransientFlowGraph {
  std::vector<TfgNode> nodes;
  std::vector<TfgEdge> edges;
  std::vector<u32> sources;  // node indices
  std::vector<u32> sinks;
};

TransientFlowGraph build_transient_flow_graph(const MachineProgram& p);

struct FenceSite {
  u32 block = 0;
  u32 after_instr = 0;  // fence goes immediately after this index
};

struct MincutResult {
  u32 cut_size = 0;                // defs cut (one fence site each)
  std::vector<FenceSite> sites;    // before per-block dedup
  std::vector<FenceSite> deduped;  // at most one per linear block
};

// Deterministic max-flow min-cut over the def-use graph; ties resolved by
// lowest edge id via in-order residual search. The cut is the canonical
// source-side cut.
MincutResult mincut_fences(const TransientFlowGraph& g);

}  // namespace speclab::machine
