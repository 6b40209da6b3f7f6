#pragma once

// One PISA-style switch. Each pipeline holds its slice of a layer's weights
// in an exact-match table and its transient state in register arrays keyed by
// flow. Packet processing uses lookups, shifts, adds and compares only.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "netnn/arith.hpp"
#include "netnn/mapper.hpp"
#include "netnn/packet.hpp"
#include "netnn/reference.hpp"

namespace netnn {

enum class SwitchErrc { wrong_switch, duplicate_key, not_installed, malformed, duplicate_arrival, stage_budget };

class SwitchError : public std::runtime_error {
 public:
  SwitchError(SwitchErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  SwitchErrc code() const noexcept { return code_; }

 private:
  SwitchErrc code_;
};

struct SwitchConfig {
  MultiplyBackend backend = MultiplyBackend::tcam;
  std::uint32_t stage_budget = 12;
};

/// Maxpool windows of one pipeline for one flow: an arrival bitmap and the
/// stored values per window.
class PoolBank {
 public:
  PoolBank(std::uint32_t window, std::uint32_t windows)
      : window_(window), bitmaps_(windows, 0), values_(std::size_t{windows} * window, 0) {
    if (window == 0 || window > 32) throw std::invalid_argument("pool window must be in 1..32");
  }

  /// Marks `position` of `window_id` as arrived. When the window is full the
  /// max is reduced by a balanced tree, the window is cleared and returned.
  std::optional<TreeMax> record(std::uint32_t window_id, std::uint32_t position, Activation value,
                                ActionTally& tally) {
    if (window_id >= bitmaps_.size() || position >= window_)
      throw SwitchError(SwitchErrc::malformed, "pool_record: window or position out of range");
    std::uint32_t bit = 1u << position;
    std::uint32_t& bitmap = bitmaps_[window_id];
    ++tally.register_accesses;
    if ((bitmap & bit) != 0)
      throw SwitchError(SwitchErrc::duplicate_arrival, "pool_record: duplicate arrival for window " +
                                                           std::to_string(window_id) + " position " +
                                                           std::to_string(position));
    bitmap |= bit;
    values_[std::size_t{window_id} * window_ + position] = value;
    ++tally.register_accesses;
    ++tally.compares;
    std::uint32_t full = window_ == 32 ? 0xffffffffu : (1u << window_) - 1;
    if (bitmap != full) return std::nullopt;

    tally.register_accesses += window_;
    TreeMax result = tree_max(std::span<const Activation>(values_.data() + std::size_t{window_id} * window_, window_));
    tally.compares += result.compares;
    bitmap = 0;
    ++tally.register_accesses;
    ++completed_;
    return result;
  }

  std::uint32_t window() const { return window_; }
  std::uint64_t completed() const { return completed_; }
  std::size_t windows() const { return bitmaps_.size(); }
  bool idle() const {
    return std::all_of(bitmaps_.begin(), bitmaps_.end(), [](std::uint32_t b) { return b == 0; });
  }

 private:
  std::uint32_t window_;
  std::vector<std::uint32_t> bitmaps_;
  std::vector<Activation> values_;
  std::uint64_t completed_ = 0;
};

/// A model-layer value observed inside the switch (for differential checks).
struct ProbeValue {
  std::uint32_t model_layer = 0;
  std::uint32_t index = 0;
  std::int32_t value = 0;
};

struct ProcessResult {
  std::vector<NetPacket> emitted;
  std::vector<std::uint32_t> emit_pipeline;  // pipeline each emission leaves from
  std::vector<ProbeValue> probes;
  ActionTally tally;
  std::uint32_t depth = 0;
  std::uint32_t model_layer = 0;
};

class SwitchState {
 public:
  SwitchState(std::uint32_t id, std::uint32_t pipelines, SwitchConfig config = {},
              const ProductTable* table = &shared_product_table())
      : id_(id), pipelines_(pipelines), config_(config), table_(table) {}

  std::uint32_t id() const { return id_; }
  std::uint32_t pipelines() const { return pipelines_; }
  const SwitchConfig& config() const { return config_; }

  void install_plan(const MappingPlan& plan, std::uint32_t ordinal) {
    if (ordinal >= plan.placements.size()) throw SwitchError(SwitchErrc::not_installed, "no such placement");
    const Placement& pl = plan.placements[ordinal];
    if (pl.switch_id != id_)
      throw SwitchError(SwitchErrc::wrong_switch, pl.name + " targets switch " + std::to_string(pl.switch_id) +
                                                      ", not switch " + std::to_string(id_));
    if (pl.partitions.size() != pipelines_)
      throw SwitchError(SwitchErrc::wrong_switch, pl.name + " was planned for a different pipeline count");

    LayerRuntime& rt = layers_[pl.model_layer];
    if (rt.pipes.empty()) {
      rt.placement = pl;
      rt.pipes.resize(pipelines_);
    }
    for (std::uint32_t p = 0; p < pipelines_; ++p) {
      PipelineRuntime& pipe = rt.pipes[p];
      const PipelineTables& tables = plan.tables[ordinal][p];
      if (tables.weights.size() != pl.partitions[p].size() * std::size_t{pl.dims.width})
        throw SwitchError(SwitchErrc::malformed, pl.name + ": table size does not match the pipeline's units");
      try {
        if (pipe.weights.size() == 0) pipe.weights = tables.weights;
        else pipe.weights.insert_all(tables.weights.entries());
      } catch (const std::invalid_argument& e) {
        throw SwitchError(SwitchErrc::duplicate_key, pl.name + ": " + e.what());
      }
      for (const auto& [unit, bias] : tables.biases) {
        auto it = std::find(pipe.owned.begin(), pipe.owned.end(), unit);
        if (it != pipe.owned.end())
          throw SwitchError(SwitchErrc::duplicate_key, pl.name + ": duplicate bias for unit " + std::to_string(unit));
        pipe.owned.push_back(unit);
        pipe.bias.push_back(bias);
      }
    }
  }

  bool hosts(std::uint32_t model_layer) const { return layers_.count(model_layer) != 0; }

  std::size_t weight_entries(std::uint32_t model_layer, std::uint32_t pipeline) const {
    return runtime(model_layer).pipes.at(pipeline).weights.size();
  }
  std::size_t owned_units(std::uint32_t model_layer, std::uint32_t pipeline) const {
    return runtime(model_layer).pipes.at(pipeline).owned.size();
  }

  /// Bytes of table entries plus declared register arrays for one in-flight
  /// inference of `model_layer`.
  std::uint64_t memory_bytes(std::uint32_t model_layer) const {
    const LayerRuntime& rt = runtime(model_layer);
    const Placement& pl = rt.placement;
    std::uint64_t bytes = 0;
    for (std::uint32_t p = 0; p < pipelines_; ++p) {
      const PipelineRuntime& pipe = rt.pipes[p];
      bytes += pipe.weights.bytes() + pipe.bias.size() * sizeof(Accumulator);
      if (pl.kind == LayerKind::conv && pl.pool_window != 0)
        bytes += pipe.owned.size() * (pl.out_length / pl.pool_window) * pool_window_bytes(pl.pool_window);
      if (pl.kind == LayerKind::dense) bytes += pipe.owned.size() * kDenseStateBytes;
      if (pl.is_final && p == kArgmaxPipeline) bytes += kArgmaxStateBytes;
    }
    return bytes;
  }

  const ActionTally& tally(std::uint32_t model_layer) const { return runtime(model_layer).tally; }

  /// Per-flow state still held anywhere on the switch.
  std::size_t residual_state() const {
    std::size_t n = 0;
    for (const auto& [layer, rt] : layers_)
      for (const auto& pipe : rt.pipes) n += pipe.pools.size() + pipe.dense.size() + pipe.argmax.size();
    return n;
  }

  /// Overwrites one installed weight (fault injection). Returns false when
  /// the unit is not hosted here.
  bool overwrite_weight(std::uint32_t model_layer, std::uint32_t unit, std::uint32_t j, Weight w) {
    LayerRuntime& rt = layers_.at(model_layer);
    std::uint32_t key = weight_index(unit, 0, j, rt.placement.dims, rt.placement.key_scheme);
    for (auto& pipe : rt.pipes)
      if (std::find(pipe.owned.begin(), pipe.owned.end(), unit) != pipe.owned.end()) return pipe.weights.overwrite(key, w);
    return false;
  }

  ProcessResult process_packet(std::uint32_t pipeline, const NetPacket& pkt) {
    if (pipeline >= pipelines_) throw SwitchError(SwitchErrc::malformed, "pipeline index out of range");
    auto it = layers_.find(pkt.layer_id);
    if (it == layers_.end())
      throw SwitchError(SwitchErrc::not_installed, "switch " + std::to_string(id_) + " does not host layer " +
                                                       std::to_string(pkt.layer_id));
    LayerRuntime& rt = it->second;
    ProcessResult out;
    out.model_layer = pkt.layer_id;
    switch (pkt.kind) {
      case PacketKind::conv_input: process_conv(rt, pipeline, pkt, out); break;
      case PacketKind::dense_input: process_dense(rt, pipeline, pkt, out); break;
      case PacketKind::class_score: process_score(rt, pipeline, pkt, out); break;
      default:
        throw SwitchError(SwitchErrc::malformed, std::string("unexpected packet kind ") + to_string(pkt.kind));
    }
    if (out.depth > config_.stage_budget)
      throw SwitchError(SwitchErrc::stage_budget, std::string(to_string(pkt.kind)) + " needs " +
                                                      std::to_string(out.depth) + " dependent stages, budget is " +
                                                      std::to_string(config_.stage_budget));
    rt.tally += out.tally;
    return out;
  }

  static constexpr std::uint32_t kArgmaxPipeline = 0;

 private:
  struct DenseFlow {
    std::vector<Accumulator> acc;
    std::vector<std::uint32_t> count;
    std::uint32_t done = 0;
  };
  struct ArgmaxState {
    Accumulator best = 0;
    std::uint32_t best_class = 0;
    std::uint32_t count = 0;
  };
  struct PipelineRuntime {
    WeightTable weights;
    std::vector<std::uint32_t> owned;
    std::vector<Accumulator> bias;  // parallel to owned
    std::unordered_map<std::uint32_t, PoolBank> pools;
    std::unordered_map<std::uint32_t, DenseFlow> dense;
    std::unordered_map<std::uint32_t, ArgmaxState> argmax;
  };
  struct LayerRuntime {
    Placement placement;
    std::vector<PipelineRuntime> pipes;
    ActionTally tally;
  };

  const LayerRuntime& runtime(std::uint32_t model_layer) const {
    auto it = layers_.find(model_layer);
    if (it == layers_.end())
      throw SwitchError(SwitchErrc::not_installed, "layer " + std::to_string(model_layer) + " not installed");
    return it->second;
  }

  Weight fetch_weight(const PipelineRuntime& pipe, const Placement& pl, std::uint32_t unit, std::uint32_t j,
                      ActionTally& tally) const {
    ++tally.lookups;
    auto w = pipe.weights.find(weight_index(unit, 0, j, pl.dims, pl.key_scheme));
    if (!w) throw SwitchError(SwitchErrc::malformed, pl.name + ": no weight for unit " + std::to_string(unit));
    return *w;
  }

  // Returns the product and the stages the multiply occupies.
  std::pair<std::int32_t, std::uint32_t> multiply(Activation v, Weight w, ActionTally& tally) const {
    if (config_.backend == MultiplyBackend::tcam) {
      ++tally.lookups;
      return {tcam_product(*table_, v, w), 1};
    }
    ShiftAddResult r = shift_add_mult(v, w);
    tally += r.tally;
    return {r.product, r.stages};
  }

  void process_conv(LayerRuntime& rt, std::uint32_t pipeline, const NetPacket& pkt, ProcessResult& out) {
    const Placement& pl = rt.placement;
    if (pl.kind != LayerKind::conv) throw SwitchError(SwitchErrc::malformed, "CONV_INPUT sent to a dense layer");
    if (pkt.payload.size() != pl.kernel_width || pkt.position >= pl.out_length)
      throw SwitchError(SwitchErrc::malformed, pl.name + ": CONV_INPUT payload/position does not match the kernel");
    PipelineRuntime& pipe = rt.pipes[pipeline];
    const std::uint32_t reduce_depth = ceil_log2(std::uint64_t{pl.kernel_width} + 1);

    for (std::size_t lf = 0; lf < pipe.owned.size(); ++lf) {
      const std::uint32_t f = pipe.owned[lf];
      std::uint32_t depth = 1;  // weight and bias fetch
      ++out.tally.lookups;
      Accumulator acc = pipe.bias[lf];
      std::uint32_t mult_stages = 0;
      for (std::uint32_t k = 0; k < pl.kernel_width; ++k) {
        Weight w = fetch_weight(pipe, pl, f, k, out.tally);
        auto [prod, stages] = multiply(pkt.payload[k], w, out.tally);
        mult_stages = std::max(mult_stages, stages);
        acc = checked_add(acc, prod);
        ++out.tally.adds;
      }
      depth += mult_stages + reduce_depth;
      Accumulator activated = relu_msb(acc);
      ++out.tally.compares;
      Activation a = requantize(activated, pl.requant_shift);
      ++out.tally.shifts;
      ++out.tally.compares;
      depth += 2;
      out.probes.push_back({pl.model_layer, f * pl.out_length + pkt.position, a});

      if (pl.pool_window != 0) {
        const std::uint32_t windows = pl.out_length / pl.pool_window;
        auto [bank, fresh] = pipe.pools.try_emplace(
            pkt.flow_id, pl.pool_window, static_cast<std::uint32_t>(pipe.owned.size() * windows));
        std::uint32_t window = pkt.position / pl.pool_window;
        ++depth;
        auto done = bank->second.record(static_cast<std::uint32_t>(lf) * windows + window,
                                        pkt.position % pl.pool_window, a, out.tally);
        if (done) {
          depth += 1 + done->depth;
          std::uint32_t index = f * windows + window;
          out.probes.push_back({*pl.pool_layer, index, done->value});
          emit_value(pl, pipeline, pkt.flow_id, index, done->value, out);
          if (bank->second.completed() == bank->second.windows()) pipe.pools.erase(bank);
        }
      } else {
        emit_value(pl, pipeline, pkt.flow_id, f * pl.out_length + pkt.position, a, out);
      }
      out.depth = std::max(out.depth, depth);
    }
  }

  void process_dense(LayerRuntime& rt, std::uint32_t pipeline, const NetPacket& pkt, ProcessResult& out) {
    const Placement& pl = rt.placement;
    if (pl.kind != LayerKind::dense) throw SwitchError(SwitchErrc::malformed, "DENSE_INPUT sent to a conv layer");
    if (pkt.position >= pl.in_width) throw SwitchError(SwitchErrc::malformed, pl.name + ": feature index out of range");
    PipelineRuntime& pipe = rt.pipes[pipeline];
    if (pipe.owned.empty()) return;
    auto [st, fresh] = pipe.dense.try_emplace(pkt.flow_id);
    DenseFlow& flow = st->second;
    if (fresh) {
      flow.acc.assign(pipe.owned.size(), 0);
      flow.count.assign(pipe.owned.size(), 0);
    }
    for (std::size_t lj = 0; lj < pipe.owned.size(); ++lj) {
      const std::uint32_t j = pipe.owned[lj];
      Weight w = fetch_weight(pipe, pl, j, pkt.position, out.tally);
      auto [prod, stages] = multiply(pkt.value, w, out.tally);
      flow.acc[lj] = checked_add(flow.acc[lj], prod);
      ++out.tally.register_accesses;
      ++out.tally.adds;
      ++flow.count[lj];
      ++out.tally.register_accesses;
      ++out.tally.adds;
      ++out.tally.compares;
      std::uint32_t depth = 1 + stages + 2;
      if (flow.count[lj] == pl.in_width) {
        ++out.tally.lookups;
        Accumulator acc = checked_add(flow.acc[lj], pipe.bias[lj]);
        ++out.tally.adds;
        ++depth;
        if (pl.is_final) {
          NetPacket score;
          score.flow_id = pkt.flow_id;
          score.layer_id = pl.model_layer;
          score.kind = PacketKind::class_score;
          score.position = j;
          score.score = acc;
          out.probes.push_back({pl.model_layer, j, acc});
          out.emitted.push_back(std::move(score));
          out.emit_pipeline.push_back(pipeline);
        } else {
          Accumulator activated = relu_msb(acc);
          Activation a = requantize(activated, pl.requant_shift);
          ++out.tally.compares;
          ++out.tally.shifts;
          ++out.tally.compares;
          depth += 2;
          out.probes.push_back({pl.model_layer, j, a});
          emit_value(pl, pipeline, pkt.flow_id, j, a, out);
        }
        flow.acc[lj] = 0;
        flow.count[lj] = 0;
        ++flow.done;
      }
      out.depth = std::max(out.depth, depth);
    }
    if (flow.done == pipe.owned.size()) pipe.dense.erase(st);
  }

  void process_score(LayerRuntime& rt, std::uint32_t pipeline, const NetPacket& pkt, ProcessResult& out) {
    const Placement& pl = rt.placement;
    if (!pl.is_final || pipeline != kArgmaxPipeline)
      throw SwitchError(SwitchErrc::malformed, "CLASS_SCORE outside the argmax pipeline of the final layer");
    if (pkt.position >= pl.units) throw SwitchError(SwitchErrc::malformed, "class index out of range");
    auto [st, fresh] = rt.pipes[pipeline].argmax.try_emplace(pkt.flow_id);
    ArgmaxState& s = st->second;
    ++out.tally.register_accesses;
    out.tally.compares += 2;
    if (s.count == 0 || pkt.score > s.best || (pkt.score == s.best && pkt.position < s.best_class)) {
      s.best = pkt.score;
      s.best_class = pkt.position;
    }
    ++s.count;
    ++out.tally.register_accesses;
    ++out.tally.adds;
    ++out.tally.compares;
    out.depth = 3;
    if (s.count == pl.units) {
      NetPacket verdict;
      verdict.flow_id = pkt.flow_id;
      verdict.layer_id = pl.model_layer;
      verdict.kind = PacketKind::verdict;
      verdict.position = s.best_class;
      verdict.score = s.best;
      out.emitted.push_back(std::move(verdict));
      out.emit_pipeline.push_back(pipeline);
      rt.pipes[pipeline].argmax.erase(st);
    }
  }

  void emit_value(const Placement& pl, std::uint32_t pipeline, std::uint32_t flow, std::uint32_t index,
                  Activation value, ProcessResult& out) const {
    if (!pl.next_layer) throw SwitchError(SwitchErrc::malformed, pl.name + ": hidden layer without a successor");
    NetPacket p;
    p.flow_id = flow;
    p.layer_id = *pl.next_layer;
    p.kind = pl.kind == LayerKind::conv ? PacketKind::pool_result : PacketKind::neuron_result;
    p.position = index;
    p.value = value;
    out.emitted.push_back(std::move(p));
    out.emit_pipeline.push_back(pipeline);
  }

  std::uint32_t id_;
  std::uint32_t pipelines_;
  SwitchConfig config_;
  const ProductTable* table_;
  std::map<std::uint32_t, LayerRuntime> layers_;
};

/// Free-function forms of the switch operations.
inline void install_plan(SwitchState& state, const MappingPlan& plan, std::uint32_t ordinal) {
  state.install_plan(plan, ordinal);
}

inline ProcessResult process_packet(SwitchState& state, std::uint32_t pipeline, const NetPacket& pkt) {
  return state.process_packet(pipeline, pkt);
}

}  // namespace netnn
