#include <algorithm>
#include <stdexcept>

#include "speclab/codegen.hpp"

namespace speclab::machine {

namespace {

struct SplitMix {
  u64 state;
  u64 next() {
    u64 z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

u64 align_up(u64 v, u64 a) { return (v + a - 1) & ~(a - 1); }

u64 block_bytes(const LinearBlock& b) {
  return align_up(b.instrs.size() * kInstrBytes, kBlockAlign);
}

}  // namespace

const MemRegion* Image::region_at(u64 addr) const {
  // regions kept sorted by base
  auto it = std::upper_bound(
      regions.begin(), regions.end(), addr,
      [](u64 a, const MemRegion& r) { return a < r.base; });
  if (it == regions.begin()) return nullptr;
  --it;
  if (addr >= it->base && addr - it->base < it->size) return &*it;
  return nullptr;
}

std::optional<Image::CodeRef> Image::code_at(u64 addr) const {
  auto it = std::upper_bound(
      sorted_blocks.begin(), sorted_blocks.end(), addr,
      [](u64 a, const PlacedBlock& b) { return a < b.address; });
  if (it == sorted_blocks.begin()) return std::nullopt;
  --it;
  const auto& prog = programs[it->instance];
  u64 off = addr - it->address;
  if (off % kInstrBytes != 0) return std::nullopt;
  u64 idx = off / kInstrBytes;
  if (idx >= prog.blocks[it->block].instrs.size()) return std::nullopt;
  return CodeRef{it->instance, it->block, (u32)idx};
}

Image layout_multi(std::vector<MachineProgram> programs,
                   const std::vector<std::optional<u64>>& seeds,
                   const LayoutOptions& opts) {
  if (programs.size() > 3) {
    throw std::runtime_error("at most three instances fit the code group");
  }
  Image img;
  img.programs = std::move(programs);

  u64 total_code = 0;
  for (size_t i = 0; i < img.programs.size(); i++) {
    const MachineProgram& p = img.programs[i];
    std::optional<u64> seed = i < seeds.size() ? seeds[i] : std::nullopt;
    SplitMix rng{seed.value_or(0)};
    if (seed.has_value()) {
      img.aslr = true;
      img.aslr_seed = *seed;
    }

    u64 code_size = 0;
    for (const auto& b : p.blocks) code_size += block_bytes(b);
    total_code += code_size;
    if (code_size >= opts.window_bytes || total_code >= (u64{1} << 32)) {
      throw std::runtime_error("image exceeds address budget");
    }

    InstanceLayout inst;
    u64 window = p.is_host ? kHostCodeBase
                           : kCodeGroupBase + i * (u64{1} << kCodeWindowBits);
    u64 code_off = 0;
    if (seed.has_value()) {
      u64 positions = (opts.window_bytes - code_size) / kBlockAlign;
      code_off = (rng.next() % positions) * kBlockAlign;
    }
    inst.code_base = window + code_off;
    inst.code_size = code_size;

    auto page_jitter = [&](u64 span) {
      if (!seed.has_value()) return u64{0};
      return (rng.next() % (span >> 12)) << 12;
    };

    inst.heap_size = p.heap_size;
    inst.heap_base = kHeapBase0 + i * kHeapSpacing + page_jitter(u64{1} << 30);
    inst.stack_top = kStackBase0 + i * (u64{1} << 32) +
                     page_jitter(u64{1} << 30) + kStackBytes;
    inst.sep_base = kSepBase0 + i * (u64{1} << 32) + page_jitter(u64{1} << 30);
    inst.sep_slots = kSepStackSlots;
    inst.table_base =
        kTableBase0 + i * (u64{1} << 28) + page_jitter(u64{1} << 27);
    inst.globals_base =
        kGlobalsBase0 + i * (u64{1} << 28) + page_jitter(u64{1} << 27);
    inst.meta_base = inst.heap_base - 4096;

    inst.block_addr.resize(p.blocks.size());
    u64 cursor = inst.code_base;
    for (const auto& b : p.blocks) {
      inst.block_addr[b.id] = cursor;
      img.sorted_blocks.push_back({cursor, (u32)i, b.id});
      cursor += block_bytes(b);
    }

    MpkKey key = p.is_host ? MpkKey::kHost : MpkKey::kSandbox;
    std::string tag = "i" + std::to_string(i);
    img.regions.push_back({RegionKind::kCode, inst.code_base, code_size, false,
                           false, key, (int)i, tag + ".code"});
    img.regions.push_back({RegionKind::kHeap, inst.heap_base, inst.heap_size,
                           true, true, key, (int)i, tag + ".heap"});
    img.regions.push_back({RegionKind::kStack, inst.stack_top - kStackBytes,
                           kStackBytes, true, true, key, (int)i, tag + ".stack"});
    img.regions.push_back({RegionKind::kSepStack, inst.sep_base,
                           inst.sep_slots * 8, true, true, key, (int)i,
                           tag + ".sepstack"});
    u64 table_bytes = 0;
    for (const auto& t : p.tables) table_bytes += t.entries.size() * 16;
    table_bytes = align_up(std::max<u64>(table_bytes, 8), 4096);
    img.regions.push_back({RegionKind::kTable, inst.table_base, table_bytes,
                           false, true, key, (int)i, tag + ".table"});
    u64 globals_bytes = align_up(std::max<u64>(p.globals.size() * 8, 8), 4096);
    img.regions.push_back({RegionKind::kGlobals, inst.globals_base,
                           globals_bytes, true, true, key, (int)i,
                           tag + ".globals"});
    img.regions.push_back({RegionKind::kInstanceMeta, inst.meta_base, 4096,
                           false, true, key, (int)i, tag + ".meta"});

    // Table images: resolved block addresses, then the label shadow array.
    for (const auto& t : p.tables) {
      u64 base = inst.table_base + t.region_offset;
      for (size_t e = 0; e < t.entries.size(); e++) {
        img.initial.write(base + 8 * e, inst.block_addr[t.entries[e]], 8);
        img.initial.write(base + 8 * (t.entries.size() + e),
                          p.blocks[t.entries[e]].label, 8);
      }
    }
    for (size_t g = 0; g < p.globals.size(); g++) {
      img.initial.write(inst.globals_base + 8 * g, p.globals[g], 8);
    }
    img.initial.write(inst.meta_base + 4096 - kMetaGlobalsSlot,
                      inst.globals_base, 8);

    for (const auto& s : p.secret_ranges) {
      u64 base = s.region == ir::Region::kHeap ? inst.heap_base + s.start
                                               : kHostDataBase + s.start;
      img.secrets.push_back({base, s.length});
    }

    img.instances.push_back(std::move(inst));
  }

  img.regions.push_back({RegionKind::kHostData, kHostDataBase, 65536, true,
                         true, MpkKey::kHost, -1, "host.data"});
  img.regions.push_back({RegionKind::kHostProbe, kHostProbeBase,
                         kProbeLines * 64, true, true, MpkKey::kHost, -1,
                         "host.probe"});

  std::sort(img.regions.begin(), img.regions.end(),
            [](const MemRegion& a, const MemRegion& b) { return a.base < b.base; });
  std::sort(img.sorted_blocks.begin(), img.sorted_blocks.end(),
            [](const PlacedBlock& a, const PlacedBlock& b) {
              return a.address < b.address;
            });
  return img;
}

Image layout(const MachineProgram& p, std::optional<u64> aslr_seed,
             const LayoutOptions& opts) {
  std::vector<MachineProgram> programs;
  programs.push_back(p);
  return layout_multi(std::move(programs), {aslr_seed}, opts);
}

}  // namespace speclab::machine
