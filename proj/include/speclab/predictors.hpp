#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "speclab/machine.hpp"

namespace speclab::sim {

using machine::u32;
using machine::u64;

struct PredictorConfig {
  u32 pht_bits = 12;   // 2^k two-bit counters
  u32 btb_bits = 12;   // 2^m tagless 32-bit target slots
  u32 rsb_depth = 16;  // circular return stack
};

// Fully attacker-inspectable predictor state. Lookup and update are pure
// functions of address bits and recorded history. Tagless tables make
// address-congruent branches alias, which is what enables out-of-place
// training.
struct PredictorState {
  PredictorConfig cfg;
  std::vector<uint8_t> pht;  // 2-bit saturating counters
  struct BtbEntry {
    bool valid = false;
    u32 target_lo = 0;
  };
  std::vector<BtbEntry> btb;
  std::vector<u64> rsb;
  u32 rsb_top = 0;

  explicit PredictorState(PredictorConfig c = {});

  u32 pht_index(u64 addr) const {
    return (u32)((addr >> 4) & ((u64{1} << cfg.pht_bits) - 1));
  }
  u32 btb_index(u64 addr) const {
    return (u32)((addr >> 4) & ((u64{1} << cfg.btb_bits) - 1));
  }

  bool pht_predict(u64 addr) const { return pht[pht_index(addr)] >= 2; }
  void pht_update(u64 addr, bool taken);

  // Predicted target reconstructs the upper half from the branch address:
  // the BTB stores only the low 32 bits.
  std::optional<u64> btb_predict(u64 addr) const;
  void btb_update(u64 addr, u64 target);
  void btb_flush();

  void rsb_push(u64 addr);
  u64 rsb_pop();  // wraps on underflow and serves the stale entry
};

enum class MistrainKind {
  kPhtSet,        // pht[index] = value (0..3)
  kPhtSetByAddr,  // pht[pht_index(addr)] = value
  kBtbSet,        // btb[index] = low32(value), valid
  kBtbSetByAddr,  // btb[btb_index(addr)] = low32(value), valid
  kBtbClear,      // btb[index] invalid
  kRsbFill,       // all entries = value
  kRsbSet,        // rsb[index] = value
  kRsbTop,        // cursor = index
};

struct MistrainDirective {
  MistrainKind kind;
  u64 index_or_addr = 0;
  u64 value = 0;
};

// Directly sets predictor entries. In-scenario training still happens by
// executing attacker code; this exists for exhaustive adversary sweeps.
void mistrain(PredictorState& pred, const MistrainDirective& d);

}  // namespace speclab::sim
