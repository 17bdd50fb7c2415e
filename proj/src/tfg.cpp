#include <algorithm>
#include <map>
#include <queue>

#include "speclab/tfg.hpp"

namespace speclab::machine {

namespace {

bool tracked(const Operand& o) {
  return o.kind == OperandKind::kReg && o.reg.kind == RegKind::kVirtual;
}

}  // namespace

TransientFlowGraph build_transient_flow_graph(const MachineProgram& p) {
  TransientFlowGraph g;

  for (const auto& f : p.functions) {
    std::map<u32, u32> def_node;  // vreg index -> node
    auto use = [&](const Operand& o, u32 to_node) {
      if (!tracked(o)) return;
      auto it = def_node.find(o.reg.index);
      if (it == def_node.end()) return;
      g.edges.push_back({(u32)g.edges.size(), it->second, to_node});
    };
    auto sink_node = [&](u32 block, u32 instr) {
      g.nodes.push_back({block, instr, false, true});
      u32 id = (u32)g.nodes.size() - 1;
      g.sinks.push_back(id);
      return id;
    };

    for (u32 bi = f.first_block; bi < f.first_block + f.block_count; bi++) {
      const LinearBlock& b = p.blocks[bi];
      for (u32 i = 0; i < b.instrs.size(); i++) {
        const MInstr& in = b.instrs[i];
        switch (in.op) {
          case MOp::kMove:
          case MOp::kArith:
          case MOp::kCompare:
          case MOp::kSelect:
          case MOp::kMaskAnd: {
            g.nodes.push_back({b.id, i, false, false});
            u32 node = (u32)g.nodes.size() - 1;
            if (in.op == MOp::kMaskAnd) {
              use(Operand::of(in.dst), node);
            } else {
              use(in.a, node);
              use(in.b, node);
              use(in.c, node);
            }
            if (in.dst.kind == RegKind::kVirtual) def_node[in.dst.index] = node;
            break;
          }
          case MOp::kLoad: {
            // The address operands sink; the result is a fresh source.
            if (tracked(in.a) || tracked(in.b)) {
              u32 s = sink_node(b.id, i);
              use(in.a, s);
              use(in.b, s);
            }
            g.nodes.push_back({b.id, i, true, false});
            u32 node = (u32)g.nodes.size() - 1;
            g.sources.push_back(node);
            if (in.dst.kind == RegKind::kVirtual) def_node[in.dst.index] = node;
            break;
          }
          case MOp::kStore: {
            if (tracked(in.a) || tracked(in.b)) {
              u32 s = sink_node(b.id, i);
              use(in.a, s);
              use(in.b, s);
            }
            break;
          }
          case MOp::kCondJump: {
            u32 s = sink_node(b.id, i);
            use(in.a, s);
            break;
          }
          case MOp::kJumpInd:
          case MOp::kCallInd: {
            u32 s = sink_node(b.id, i);
            use(in.a, s);
            break;
          }
          default:
            break;
        }
      }
    }
  }
  return g;
}

namespace {

// Max-flow network with node splitting: cutting a definition's internal edge
// is a fence placed immediately after that instruction; def-use edges are
// uncuttable. The minimum cut is then the minimum number of fences.
struct FlowNet {
  struct Arc {
    u32 to;
    int cap;
    u32 rev;
    int def_node = -1;  // >= 0 for internal (cuttable) arcs
  };
  std::vector<std::vector<Arc>> adj;

  void add(u32 from, u32 to, int cap, int def_node = -1) {
    adj[from].push_back({to, cap, (u32)adj[to].size(), def_node});
    adj[to].push_back({from, 0, (u32)adj[from].size() - 1, -1});
  }
};

}  // namespace

MincutResult mincut_fences(const TransientFlowGraph& g) {
  MincutResult result;
  u32 n = (u32)g.nodes.size();
  // node i -> in: 2i, out: 2i+1; source: 2n, target: 2n+1
  u32 S = 2 * n, T = 2 * n + 1;
  FlowNet net;
  net.adj.resize(2 * n + 2);
  constexpr int kInf = 1 << 28;

  for (u32 i = 0; i < n; i++) {
    if (g.nodes[i].is_sink) {
      net.add(2 * i, 2 * i + 1, kInf);
      net.add(2 * i + 1, T, kInf);
    } else {
      net.add(2 * i, 2 * i + 1, 1, (int)i);
    }
    if (g.nodes[i].is_source) net.add(S, 2 * i, kInf);
  }
  for (const auto& e : g.edges) {
    net.add(2 * e.from + 1, 2 * e.to, kInf);
  }

  // Edmonds-Karp; BFS visits arcs in insertion order, which realizes the
  // lowest-edge-id tie break.
  auto bfs_path = [&](std::vector<std::pair<u32, u32>>* parent) {
    parent->assign(net.adj.size(), {UINT32_MAX, 0});
    std::queue<u32> q;
    q.push(S);
    (*parent)[S] = {S, 0};
    while (!q.empty()) {
      u32 v = q.front();
      q.pop();
      for (u32 ai = 0; ai < net.adj[v].size(); ai++) {
        const auto& a = net.adj[v][ai];
        if (a.cap > 0 && (*parent)[a.to].first == UINT32_MAX) {
          (*parent)[a.to] = {v, ai};
          if (a.to == T) return true;
          q.push(a.to);
        }
      }
    }
    return false;
  };

  std::vector<std::pair<u32, u32>> parent;
  while (bfs_path(&parent)) {
    int aug = kInf;
    for (u32 v = T; v != S;) {
      auto [pv, ai] = parent[v];
      aug = std::min(aug, net.adj[pv][ai].cap);
      v = pv;
    }
    for (u32 v = T; v != S;) {
      auto [pv, ai] = parent[v];
      auto& arc = net.adj[pv][ai];
      arc.cap -= aug;
      net.adj[arc.to][arc.rev].cap += aug;
      v = pv;
    }
  }

  // Canonical source-side cut: internal arcs from the residual-reachable set.
  std::vector<bool> reach(net.adj.size(), false);
  std::queue<u32> q;
  q.push(S);
  reach[S] = true;
  while (!q.empty()) {
    u32 v = q.front();
    q.pop();
    for (const auto& a : net.adj[v]) {
      if (a.cap > 0 && !reach[a.to]) {
        reach[a.to] = true;
        q.push(a.to);
      }
    }
  }
  std::vector<FenceSite> sites;
  for (u32 v = 0; v < net.adj.size(); v++) {
    if (!reach[v]) continue;
    for (const auto& a : net.adj[v]) {
      if (a.def_node >= 0 && !reach[a.to]) {
        const TfgNode& d = g.nodes[a.def_node];
        sites.push_back({d.block, d.instr});
      }
    }
  }
  std::sort(sites.begin(), sites.end(), [](const FenceSite& a, const FenceSite& b) {
    return a.block != b.block ? a.block < b.block : a.after_instr < b.after_instr;
  });
  result.cut_size = (u32)sites.size();
  result.sites = sites;
  for (const auto& s : sites) {
    if (!result.deduped.empty() && result.deduped.back().block == s.block)
      continue;  // one fence per linear block; the earliest site drains all
    result.deduped.push_back(s);
  }
  return result;
}

}  // namespace speclab::machine
