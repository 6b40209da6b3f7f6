#pragma once

// Data-plane arithmetic: only shifts, adds, compares and exact-match lookups
// are used on activations and weights. The product table is filled by the
// control plane, which is the one place a native multiply appears.

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "netnn/model.hpp"

namespace netnn {

using Product = std::int16_t;

enum class MultiplyBackend { tcam, shift_add };

inline const char* to_string(MultiplyBackend b) { return b == MultiplyBackend::tcam ? "tcam" : "shift-add"; }

/// Per-packet action counters, one unit per shift, add, compare, table lookup
/// or register read-modify-write.
struct ActionTally {
  std::uint64_t lookups = 0;
  std::uint64_t shifts = 0;
  std::uint64_t adds = 0;
  std::uint64_t compares = 0;
  std::uint64_t register_accesses = 0;

  std::uint64_t total() const { return lookups + shifts + adds + compares + register_accesses; }

  ActionTally& operator+=(const ActionTally& o) {
    lookups += o.lookups;
    shifts += o.shifts;
    adds += o.adds;
    compares += o.compares;
    register_accesses += o.register_accesses;
    return *this;
  }
  bool operator==(const ActionTally&) const = default;
};

/// n & (n - 1) == 0; n >= 1.
constexpr bool is_power_of_two(std::uint64_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Zeroes the value when its sign bit is set.
constexpr std::int32_t relu_msb(std::int32_t acc) {
  return (static_cast<std::uint32_t>(acc) >> 31) != 0 ? 0 : acc;
}

constexpr std::uint16_t product_key(Activation v, Weight w) {
  return static_cast<std::uint16_t>((std::uint16_t{v} << 8) | static_cast<std::uint8_t>(w));
}

/// Exact-match table of every 8x8-bit product keyed by value||weight.
/// 2^16 entries of signed 16 bits (|v*w| <= 255*128 = 32640).
class ProductTable {
 public:
  static constexpr std::size_t kEntries = std::size_t{1} << 16;

  ProductTable() : entries_(kEntries) {
    for (unsigned v = 0; v < 256; ++v)
      for (int w = -128; w < 128; ++w)
        entries_[product_key(static_cast<Activation>(v), static_cast<Weight>(w))] =
            static_cast<Product>(static_cast<int>(v) * w);
  }

  Product lookup(Activation v, Weight w) const { return entries_[product_key(v, w)]; }

  std::size_t size() const { return entries_.size(); }
  std::size_t bytes() const { return entries_.size() * sizeof(Product); }

  // Fault injection for verification tests.
  void overwrite(Activation v, Weight w, Product p) { entries_[product_key(v, w)] = p; }

 private:
  std::vector<Product> entries_;
};

inline const ProductTable& shared_product_table() {
  static const ProductTable table;
  return table;
}

inline Product tcam_product(const ProductTable& table, Activation v, Weight w) { return table.lookup(v, w); }

struct ShiftAddResult {
  Product product = 0;
  std::uint32_t stages = 0;
  ActionTally tally;
};

inline constexpr std::uint32_t kShiftAddStages = 1 + 3;

/// |w| is decomposed into its set bits; all partial terms v << b are formed
/// in one stage and summed by a fixed 8->4->2->1 tree (three stages). The
/// root applies the sign.
inline ShiftAddResult shift_add_mult(Activation v, Weight w) {
  ShiftAddResult r;
  std::uint32_t magnitude = w < 0 ? static_cast<std::uint32_t>(-static_cast<std::int32_t>(w))
                                  : static_cast<std::uint32_t>(w);
  std::array<std::int32_t, 8> lanes{};
  for (unsigned b = 0; b < 8; ++b) {
    if ((magnitude >> b) & 1u) {
      lanes[b] = std::int32_t{v} << b;
      ++r.tally.shifts;
    }
  }
  r.stages = 1;
  unsigned terms = static_cast<unsigned>(std::popcount(magnitude));
  for (unsigned width = 4; width >= 1; width /= 2) {
    for (unsigned i = 0; i < width; ++i) lanes[i] = lanes[2 * i] + lanes[2 * i + 1];
    ++r.stages;
  }
  if (terms > 1) r.tally.adds += terms - 1;
  std::int32_t value = lanes[0];
  if (w < 0) {
    value = -value;
    ++r.tally.adds;
  }
  r.product = static_cast<Product>(value);
  return r;
}

/// Action count of shift_add_mult for a given weight (data independent of v).
inline std::uint64_t shift_add_ops(Weight w) {
  std::uint32_t magnitude = w < 0 ? static_cast<std::uint32_t>(-static_cast<std::int32_t>(w))
                                  : static_cast<std::uint32_t>(w);
  auto terms = static_cast<std::uint64_t>(std::popcount(magnitude));
  return terms + (terms > 1 ? terms - 1 : 0) + (w < 0 ? 1 : 0);
}

constexpr std::uint32_t ceil_log2(std::uint64_t n) {
  return n <= 1 ? 0 : static_cast<std::uint32_t>(std::bit_width(n - 1));
}

struct TreeMax {
  Activation value = 0;
  std::uint32_t depth = 0;
  std::uint64_t compares = 0;
};

/// Balanced pairwise max reduction; an odd tail element passes through to
/// the next level.
inline TreeMax tree_max(std::span<const Activation> values) {
  if (values.empty()) throw std::invalid_argument("tree_max: empty window");
  std::array<Activation, 64> level{};
  if (values.size() > level.size()) throw std::invalid_argument("tree_max: window too large");
  std::size_t n = values.size();
  for (std::size_t i = 0; i < n; ++i) level[i] = values[i];
  TreeMax r;
  while (n > 1) {
    std::size_t next = 0;
    for (std::size_t i = 0; i + 1 < n; i += 2) {
      level[next++] = level[i] >= level[i + 1] ? level[i] : level[i + 1];
      ++r.compares;
    }
    if (n % 2 == 1) level[next++] = level[n - 1];
    n = next;
    ++r.depth;
  }
  r.value = level[0];
  if (r.depth != ceil_log2(values.size())) throw std::logic_error("tree_max: reduction depth mismatch");
  return r;
}

}  // namespace netnn
