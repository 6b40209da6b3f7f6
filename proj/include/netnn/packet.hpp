#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "netnn/model.hpp"

namespace netnn {

enum class PacketKind : std::uint8_t {
  conv_input,     // kernel-window payload for a conv switch
  pool_result,    // one conv/pool output value leaving its switch
  dense_input,    // one feature for a dense switch
  neuron_result,  // one hidden dense output leaving its switch
  class_score,    // one final-layer score on its way to the argmax pipeline
  verdict,        // final class of one inference
};

inline const char* to_string(PacketKind kind) {
  switch (kind) {
    case PacketKind::conv_input: return "CONV_INPUT";
    case PacketKind::pool_result: return "POOL_RESULT";
    case PacketKind::dense_input: return "DENSE_INPUT";
    case PacketKind::neuron_result: return "NEURON_RESULT";
    case PacketKind::class_score: return "CLASS_SCORE";
    case PacketKind::verdict: return "VERDICT";
  }
  return "?";
}

/// Header of a simulated NetNN packet. `layer_id` is the model index of the
/// layer the packet is addressed to; result packets carry the index of the
/// layer that consumes them next.
struct NetPacket {
  std::uint32_t flow_id = 0;
  std::uint32_t layer_id = 0;
  PacketKind kind = PacketKind::conv_input;
  std::uint32_t filter = 0;
  std::uint32_t kernel_i = 0;
  std::uint32_t kernel_j = 0;
  std::uint32_t position = 0;
  std::vector<Activation> payload;  // CONV_INPUT only
  Activation value = 0;             // single-value kinds
  std::int32_t score = 0;           // CLASS_SCORE / VERDICT
  std::uint32_t hop_count = 0;

  bool operator==(const NetPacket&) const = default;
};

inline bool carries_payload(PacketKind kind) { return kind == PacketKind::conv_input; }

}  // namespace netnn
