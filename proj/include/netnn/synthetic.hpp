#pragma once

// A labelled synthetic workload whose class is a fixed function of one header
// byte (the IPv4 TOS byte), plus a hand-built model that reads that byte.
//
// Label rule: malicious (1) iff (tos & 0xc0) != 0, benign (0) otherwise.
//
// Malicious flows open with one benign-looking packet, so a single inference
// point misjudges them while two or more points recover the flow label (ties
// go to the malicious class).

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

#include "netnn/flow.hpp"
#include "netnn/model.hpp"

namespace netnn {

inline constexpr std::uint8_t kSyntheticMaliciousTos = 0x80;

inline std::uint32_t synthetic_label(std::uint8_t tos) { return (tos & 0xc0u) != 0 ? 1u : 0u; }

/// Conv1D(2 filters, K=1) -> MaxPool(2) -> Dense(2) over the bit-mode input.
/// Filter 0 copies the bits, so pooled index 4 is max(bit 8, bit 9): the two
/// top bits of byte 1. Class 1 scores 2 * that, class 0 a constant 1.
inline QuantizedModel separability_model() {
  QuantizedModel m;
  m.input_width = kBitInputWidth;
  m.class_count = 2;
  m.metadata["name"] = "tos-detector";
  Conv1D conv;
  conv.filters = 2;
  conv.kernel_width = 1;
  conv.stride = 1;
  conv.weights = {1, 0};
  conv.biases = {0, 0};
  conv.requant_shift = 0;
  m.layers.emplace_back(conv);
  m.layers.emplace_back(MaxPool1D{2});
  Dense dense;
  dense.in_width = kBitInputWidth;  // 2 filters x 568 / 2
  dense.out_width = 2;
  dense.weights.assign(std::size_t{2} * dense.in_width, 0);
  dense.weights[std::size_t{1} * dense.in_width + 4] = 2;
  dense.biases = {1, 0};
  dense.requant_shift = 0;
  m.layers.emplace_back(dense);
  validate(m);
  return m;
}

struct SyntheticOptions {
  std::uint32_t flows = 32;
  std::uint32_t packets_per_flow = 64;
  std::uint64_t seed = 1;
};

/// Half the flows are malicious. Packets are IPv4/UDP prefixes (20-byte IP
/// header, 8-byte UDP header, random payload) ordered by timestamp.
inline std::vector<TracePacket> synthetic_trace(const SyntheticOptions& opt) {
  FixtureRng rng(opt.seed);
  std::vector<TracePacket> out;
  std::set<FiveTuple> used;
  for (std::uint32_t f = 0; f < opt.flows; ++f) {
    FiveTuple t;
    do {
      t.src_ip = 0x0a000000u | static_cast<std::uint32_t>(rng.uniform(1, 0xfffffe));
      t.dst_ip = 0xc0a80000u | static_cast<std::uint32_t>(rng.uniform(1, 0xfffe));
      t.src_port = static_cast<std::uint16_t>(rng.uniform(1024, 65535));
      t.dst_port = static_cast<std::uint16_t>(rng.uniform(1, 1023));
      t.proto = 17;
    } while (!used.insert(t).second);
    const bool malicious = f % 2 == 1;
    std::uint64_t ts = static_cast<std::uint64_t>(rng.uniform(0, 1'000'000));
    for (std::uint32_t i = 0; i < opt.packets_per_flow; ++i) {
      if (i > 0) ts += static_cast<std::uint64_t>(rng.uniform(1, 5'000'000));
      std::uint8_t tos = malicious && i > 0 ? kSyntheticMaliciousTos : 0x00;
      auto payload = static_cast<std::size_t>(rng.uniform(0, 40));
      std::size_t total = 28 + payload;
      std::vector<std::uint8_t> ip(std::min<std::size_t>(total, kPrefixBytes), 0);
      ip[0] = 0x45;
      ip[1] = tos;
      ip[2] = static_cast<std::uint8_t>(total >> 8);
      ip[3] = static_cast<std::uint8_t>(total);
      ip[8] = 64;
      ip[9] = t.proto;
      for (int b = 0; b < 4; ++b) {
        ip[12 + b] = static_cast<std::uint8_t>(t.src_ip >> (24 - 8 * b));
        ip[16 + b] = static_cast<std::uint8_t>(t.dst_ip >> (24 - 8 * b));
      }
      ip[20] = static_cast<std::uint8_t>(t.src_port >> 8);
      ip[21] = static_cast<std::uint8_t>(t.src_port);
      ip[22] = static_cast<std::uint8_t>(t.dst_port >> 8);
      ip[23] = static_cast<std::uint8_t>(t.dst_port);
      ip[24] = static_cast<std::uint8_t>((total - 20) >> 8);
      ip[25] = static_cast<std::uint8_t>(total - 20);
      for (std::size_t b = 28; b < ip.size(); ++b) ip[b] = static_cast<std::uint8_t>(rng.uniform(0, 255));
      TracePacket p;
      p.timestamp_ns = ts;
      p.tuple = t;
      p.raw_prefix = std::move(ip);
      p.label = synthetic_label(tos);
      out.push_back(std::move(p));
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TracePacket& a, const TracePacket& b) { return a.timestamp_ns < b.timestamp_ns; });
  return out;
}

}  // namespace netnn
