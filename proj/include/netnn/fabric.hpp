#pragma once

// Clos fabric of simulated switches: multicast routing between layer switches,
// window assembly at the producing egress, and a logical-time event loop.
//
// Delivery order is total: time step, then switch id, then pipeline id, then
// FIFO order within the queue. Anything emitted during step t is delivered in
// step t + 1.

#include <algorithm>
#include <climits>
#include <cstdint>
#include <deque>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "netnn/mapper.hpp"
#include "netnn/packet.hpp"
#include "netnn/switch_sim.hpp"
#include "netnn/topology.hpp"

namespace netnn {

// ---------------------------------------------------------------------------
// Routing

struct PathVisit {
  Port port;
  bool egress = false;

  bool operator==(const PathVisit&) const = default;
};

/// One replica of a multicast (or a unicast route): the visited ingress and
/// egress halves in order, ending at the destination ingress.
struct Replica {
  std::vector<PathVisit> path;
  Port destination;
  std::uint32_t hops = 0;
};

struct MulticastJob {
  Port source;
  std::uint32_t destination_switch = 0;
  RoutingMode mode = RoutingMode::two_tier;
  NetPacket payload;
};

namespace detail {

inline void require_lowest_tier(const FabricDescriptor& d, std::uint32_t sw, const char* role) {
  if (sw >= d.switch_count()) throw FabricError(std::string("route: ") + role + " switch out of range");
  if (d.tier_of(sw) != 0) throw FabricError(std::string("route: ") + role + " switch is not in the lowest tier");
}

}  // namespace detail

/// Replicas of one multicast, one per destination pipeline, in pipeline order.
///
/// 2-tier: the source traffic manager replicates to every egress e; replica e
/// rides the uplink to upper switch e and comes down on the link that lands
/// on pipeline e of the destination.
///
/// 3-tier: the source leaves on its own pipeline q, reaching middle switch q
/// (the lowest-id tier-2 switch wired to q). Its traffic manager replicates to
/// every egress e; replica e climbs to tier-3 switch e, descends to tier-2
/// switch e (middle switch q itself when e == q) and then down to pipeline e
/// of the destination. Every replica takes four hops.
inline std::vector<Replica> multicast_routes(const FabricDescriptor& d, Port source, std::uint32_t dest_switch,
                                             RoutingMode mode) {
  validate(d);
  const std::uint32_t P = d.pipelines_per_switch;
  if (source.sw >= d.switch_count() || source.pipeline >= P) throw FabricError("route: source port out of range");
  if (dest_switch >= d.switch_count()) throw FabricError("route: destination switch out of range");
  std::vector<Replica> out;

  if (dest_switch == source.sw) {
    for (std::uint32_t e = 0; e < P; ++e) {
      Port dst{dest_switch, e};
      out.push_back({{{source, false}, {dst, true}, {dst, false}}, dst, 0});
    }
    return out;
  }

  switch (mode) {
    case RoutingMode::host:
    case RoutingMode::local:
      throw FabricError("route: switch " + std::to_string(dest_switch + 1) + " is unreachable through the local " +
                        "traffic manager of switch " + std::to_string(source.sw + 1));
    case RoutingMode::two_tier: {
      if (d.tiers < 2) throw FabricError("route: 2-tier routing on a single-tier fabric");
      detail::require_lowest_tier(d, source.sw, "source");
      detail::require_lowest_tier(d, dest_switch, "destination");
      const std::uint32_t a = d.index_of(source.sw);
      const std::uint32_t b = d.index_of(dest_switch);
      for (std::uint32_t e = 0; e < P; ++e) {
        Link up = clos_link(d, 0, a, e);
        Link down = clos_link(d, 0, b, e);
        out.push_back({{{source, false}, {up.lower, true}, {up.upper, false}, {down.upper, true}, {down.lower, false}},
                       down.lower,
                       2});
      }
      return out;
    }
    case RoutingMode::three_tier: {
      if (d.tiers < 3) throw FabricError("route: 3-tier routing needs three tiers");
      detail::require_lowest_tier(d, source.sw, "source");
      detail::require_lowest_tier(d, dest_switch, "destination");
      const std::uint32_t a = d.index_of(source.sw);
      const std::uint32_t b = d.index_of(dest_switch);
      const std::uint32_t q = source.pipeline;
      Link first = clos_link(d, 0, a, q);
      for (std::uint32_t e = 0; e < P; ++e) {
        Link climb = clos_link(d, 1, q, e);    // middle switch q -> tier-3 switch e
        Link descend = clos_link(d, 1, e, e);  // tier-3 switch e -> tier-2 switch e
        Link down = clos_link(d, 0, b, e);     // tier-2 switch e -> destination
        out.push_back({{{source, false},
                        {first.lower, true},
                        {first.upper, false},
                        {climb.lower, true},
                        {climb.upper, false},
                        {descend.upper, true},
                        {descend.lower, false},
                        {down.upper, true},
                        {down.lower, false}},
                       down.lower,
                       4});
      }
      return out;
    }
  }
  throw FabricError("route: unknown mode");
}

/// Cheapest path from src ingress to dst ingress (links cost 1, traffic
/// managers are free). With source_tm == false the packet must leave the
/// source switch on its arrival pipeline. The source switch is never
/// re-entered.
inline std::optional<Replica> unicast_route(const FabricDescriptor& d, Port src, Port dst, bool source_tm = true) {
  validate(d);
  const std::uint32_t P = d.pipelines_per_switch;
  const std::size_t n = std::size_t{d.switch_count()} * P * 2;
  auto index = [&](Port p, bool eg) { return (std::size_t{p.sw} * P + p.pipeline) * 2 + (eg ? 1 : 0); };
  auto port_of = [&](std::size_t i) {
    return PathVisit{Port{static_cast<std::uint32_t>(i / 2 / P), static_cast<std::uint32_t>(i / 2 % P)}, (i & 1) != 0};
  };
  constexpr std::uint32_t kInf = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> dist(n, kInf);
  std::vector<std::size_t> prev(n, n);
  std::deque<std::size_t> dq;
  dist[index(src, false)] = 0;
  dq.push_back(index(src, false));
  while (!dq.empty()) {
    std::size_t cur = dq.front();
    dq.pop_front();
    PathVisit v = port_of(cur);
    auto relax = [&](std::size_t next, std::uint32_t cost) {
      if (dist[cur] + cost < dist[next]) {
        dist[next] = dist[cur] + cost;
        prev[next] = cur;
        if (cost == 0) dq.push_front(next);
        else dq.push_back(next);
      }
    };
    if (!v.egress) {
      if (v.port == dst) continue;
      for (std::uint32_t e = 0; e < P; ++e) {
        if (!source_tm && v.port.sw == src.sw && e != v.port.pipeline) continue;
        relax(index(Port{v.port.sw, e}, true), 0);
      }
    } else {
      for (Port nb : neighbours(d, v.port))
        if (nb.sw != src.sw) relax(index(nb, false), 1);
    }
  }
  std::size_t goal = index(dst, false);
  if (dist[goal] == kInf) return std::nullopt;
  Replica r;
  r.destination = dst;
  r.hops = dist[goal];
  for (std::size_t i = goal; i != n; i = prev[i]) r.path.push_back(port_of(i));
  std::reverse(r.path.begin(), r.path.end());
  return r;
}

// ---------------------------------------------------------------------------
// Packet generator

/// Turns the value stream of one layer into the packets of the next.
/// For a conv consumer, values are written to a register array and each
/// window's arrival count is bumped; a window that reaches the kernel width is
/// read back into one CONV_INPUT. Dense consumers take one DENSE_INPUT per
/// value.
class PacketGenerator {
 public:
  explicit PacketGenerator(const Placement& consumer) : consumer_(consumer) {}

  std::vector<NetPacket> accept(std::uint32_t flow, std::uint32_t index, Activation value, std::uint64_t& ops) {
    const Placement& c = consumer_;
    if (index >= c.in_width) throw std::logic_error(c.name + " generator: value index out of range");
    std::vector<NetPacket> out;
    if (c.kind == LayerKind::dense) {
      NetPacket p;
      p.flow_id = flow;
      p.layer_id = c.model_layer;
      p.kind = PacketKind::dense_input;
      p.position = index;
      p.value = value;
      out.push_back(std::move(p));
      return out;
    }
    auto [it, fresh] = state_.try_emplace(flow);
    State& st = it->second;
    if (fresh) {
      st.values.assign(c.in_width, 0);
      st.arrived.assign(c.in_width, false);
      st.counts.assign(c.out_length, 0);
    }
    if (st.arrived[index]) throw std::logic_error(c.name + " generator: value " + std::to_string(index) + " twice");
    st.arrived[index] = true;
    st.values[index] = value;
    ++ops;
    const std::uint32_t K = c.kernel_width;
    const std::uint32_t S = c.stride;
    std::uint32_t lo = index + 1 >= K ? (index + 1 - K + S - 1) / S : 0;
    std::uint32_t hi = std::min(index / S, c.out_length - 1);
    for (std::uint32_t p = lo; p <= hi && p < c.out_length; ++p) {
      ops += 2;
      if (++st.counts[p] == K) {
        NetPacket pkt;
        pkt.flow_id = flow;
        pkt.layer_id = c.model_layer;
        pkt.kind = PacketKind::conv_input;
        pkt.position = p;
        pkt.kernel_i = 0;
        pkt.kernel_j = p * S;
        pkt.payload.assign(st.values.begin() + std::size_t{p} * S, st.values.begin() + std::size_t{p} * S + K);
        ops += K;
        out.push_back(std::move(pkt));
      }
    }
    if (++st.received == c.in_width) state_.erase(it);
    return out;
  }

  std::size_t residual_state() const { return state_.size(); }

 private:
  struct State {
    std::vector<Activation> values;
    std::vector<bool> arrived;
    std::vector<std::uint32_t> counts;
    std::uint32_t received = 0;
  };
  Placement consumer_;
  std::unordered_map<std::uint32_t, State> state_;
};

// ---------------------------------------------------------------------------
// Run trace

struct TraceEvent {
  std::uint64_t step = 0;
  std::uint32_t sw = 0;
  std::uint32_t pipeline = 0;
  PacketKind kind = PacketKind::conv_input;
  std::uint32_t flow = 0;
  std::uint32_t layer = 0;
  std::uint32_t position = 0;
  std::uint32_t hop_count = 0;
  std::uint64_t ops = 0;
  std::uint32_t depth = 0;
  std::uint32_t emitted = 0;

  bool operator==(const TraceEvent&) const = default;
};

struct Verdict {
  std::uint32_t flow = 0;
  std::uint32_t class_index = 0;
  std::int32_t score = 0;
  std::uint64_t step = 0;

  bool operator==(const Verdict&) const = default;
};

struct LayerTally {
  std::uint64_t packets = 0;     // logical packets entering the layer
  std::uint64_t deliveries = 0;  // replicas landing on its pipelines
  ActionTally ops;               // switch actions
  std::uint64_t generator_ops = 0;

  bool operator==(const LayerTally&) const = default;
};

inline constexpr std::int32_t kUnsetActivation = std::numeric_limits<std::int32_t>::min();

struct RunTrace {
  std::vector<TraceEvent> events;
  std::vector<Verdict> verdicts;
  std::map<std::uint32_t, std::uint64_t> hop_histogram;  // hop count -> replicas
  std::map<std::uint32_t, LayerTally> layers;            // keyed by model layer
  // (flow, model layer) -> per-index values; kUnsetActivation where nothing arrived
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::int32_t>> activations;
  std::uint64_t steps = 0;

  bool operator==(const RunTrace&) const = default;

  void write_jsonl(std::ostream& os) const {
    using nlohmann::json;
    for (const auto& e : events)
      os << json{{"type", "event"},     {"step", e.step},         {"switch", e.sw},     {"pipeline", e.pipeline},
                 {"kind", to_string(e.kind)}, {"flow", e.flow},   {"layer", e.layer},   {"position", e.position},
                 {"hops", e.hop_count}, {"ops", e.ops},           {"depth", e.depth},   {"emitted", e.emitted}}
                .dump()
         << '\n';
    for (const auto& v : verdicts)
      os << json{{"type", "verdict"}, {"flow", v.flow}, {"class", v.class_index}, {"score", v.score}, {"step", v.step}}
                .dump()
         << '\n';
    for (const auto& [layer, t] : layers)
      os << json{{"type", "layer"},          {"layer", layer},        {"packets", t.packets},
                 {"deliveries", t.deliveries}, {"ops", t.ops.total()}, {"generator_ops", t.generator_ops}}
                .dump()
         << '\n';
    for (const auto& [hops, n] : hop_histogram)
      os << json{{"type", "hops"}, {"hop_count", hops}, {"replicas", n}}.dump() << '\n';
    os << json{{"type", "summary"}, {"steps", steps}, {"verdicts", verdicts.size()}, {"events", events.size()}}.dump()
       << '\n';
  }
};

// ---------------------------------------------------------------------------
// Fabric

class LivelockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FabricConfig {
  SwitchConfig switch_config;
  std::uint64_t max_steps = 10000;
  bool record_events = true;
  bool capture_activations = false;
  bool parallel = false;
};

/// One inference to run: a tag that names it inside the fabric and its
/// input tensor.
struct InferenceRequest {
  std::uint32_t flow = 0;
  std::vector<Activation> input;
};

class Fabric {
 public:
  Fabric(FabricDescriptor desc, FabricConfig config = {}) : desc_(desc), config_(config) {
    validate(desc_);
    for (std::uint32_t s = 0; s < desc_.switch_count(); ++s)
      switches_.push_back(std::make_unique<SwitchState>(s, desc_.pipelines_per_switch, config_.switch_config));
  }

  const FabricDescriptor& descriptor() const { return desc_; }
  const FabricConfig& config() const { return config_; }
  SwitchState& switch_state(std::uint32_t id) { return *switches_.at(id); }
  const SwitchState& switch_state(std::uint32_t id) const { return *switches_.at(id); }

  void install(const MappingPlan& plan) {
    if (!(plan.fabric == desc_)) throw FabricError("install: plan was built for a different fabric");
    if (plan_) throw FabricError("install: a plan is already installed");
    for (std::uint32_t ord = 0; ord < plan.placements.size(); ++ord)
      switches_.at(plan.placements[ord].switch_id)->install_plan(plan, ord);
    plan_ = plan;
    plan_->tables.clear();  // weights now live in the switches
    generators_.clear();
    for (const Placement& pl : plan_->placements) generators_.emplace_back(pl);
    // Routes depend only on the transition and the emitting pipeline.
    routes_.assign(plan_->transitions.size(), {});
    for (const Transition& t : plan_->transitions) {
      if (!t.source_switch) continue;
      for (std::uint32_t e = 0; e < desc_.pipelines_per_switch; ++e)
        routes_[t.to].push_back(multicast_routes(desc_, Port{*t.source_switch, e}, t.dest_switch, t.mode));
    }
  }

  const MappingPlan& plan() const {
    if (!plan_) throw FabricError("no plan installed");
    return *plan_;
  }

  std::vector<std::pair<Replica, NetPacket>> route_multicast(const MulticastJob& job) const {
    std::vector<std::pair<Replica, NetPacket>> out;
    for (Replica& r : multicast_routes(desc_, job.source, job.destination_switch, job.mode)) {
      NetPacket p = job.payload;
      p.hop_count = r.hops;
      out.emplace_back(std::move(r), std::move(p));
    }
    return out;
  }

  /// Packets the feature extractor hands to the first layer for one input.
  std::vector<NetPacket> generate_input(std::uint32_t flow, std::span<const Activation> input,
                                        std::uint64_t* ops = nullptr) {
    const MappingPlan& p = plan();
    if (input.size() != p.input_width)
      throw std::invalid_argument("input width " + std::to_string(input.size()) + " != model input width " +
                                  std::to_string(p.input_width));
    std::uint64_t local = 0;
    std::vector<NetPacket> out;
    for (std::uint32_t i = 0; i < input.size(); ++i)
      for (NetPacket& pkt : generators_.front().accept(flow, i, input[i], local)) out.push_back(std::move(pkt));
    if (ops) *ops += local;
    return out;
  }

  /// Generates and runs a batch of inferences; generator work for the first
  /// layer is included in the trace.
  RunTrace run(const std::vector<InferenceRequest>& requests) {
    std::vector<NetPacket> initial;
    std::uint64_t ops = 0;
    for (const auto& r : requests)
      for (NetPacket& pkt : generate_input(r.flow, r.input, &ops)) initial.push_back(std::move(pkt));
    RunTrace trace = run_until_quiescent(initial);
    if (!requests.empty()) trace.layers[plan().placements.front().model_layer].generator_ops += ops;
    return trace;
  }

  RunTrace run_until_quiescent(const std::vector<NetPacket>& initial) {
    RunTrace trace;
    if (initial.empty()) return trace;
    const MappingPlan& p = plan();
    const std::uint32_t P = desc_.pipelines_per_switch;
    const std::uint32_t first_switch = p.placements.front().switch_id;
    Queues queues(std::size_t{desc_.switch_count()} * P);

    for (const NetPacket& pkt : initial) {
      if (pkt.layer_id != p.placements.front().model_layer)
        throw FabricError("initial packets must address the first layer");
      LayerTally& lt = trace.layers[pkt.layer_id];
      ++lt.packets;
      for (std::uint32_t e = 0; e < P; ++e) {
        NetPacket copy = pkt;
        copy.hop_count = 1;
        queues[std::size_t{first_switch} * P + e].push_back(std::move(copy));
        ++lt.deliveries;
        ++trace.hop_histogram[1];
      }
    }

    while (std::any_of(queues.begin(), queues.end(), [](const auto& q) { return !q.empty(); })) {
      ++trace.steps;
      if (trace.steps > config_.max_steps) {
        std::size_t pending = 0;
        for (const auto& q : queues) pending += q.size();
        throw LivelockError("fabric did not quiesce within " + std::to_string(config_.max_steps) + " steps (" +
                            std::to_string(pending) + " packets still queued)");
      }
      Queues batch(queues.size());
      batch.swap(queues);
      std::vector<std::vector<ProcessResult>> results = process_batch(batch);
      for (std::size_t slot = 0; slot < batch.size(); ++slot) {
        const std::uint32_t sw = static_cast<std::uint32_t>(slot / P);
        const std::uint32_t pipe = static_cast<std::uint32_t>(slot % P);
        for (std::size_t i = 0; i < batch[slot].size(); ++i)
          absorb(trace, queues, sw, pipe, batch[slot][i], results[slot][i]);
      }
    }
    return trace;
  }

  /// Per-flow state left in switches and generators (0 after a clean run).
  std::size_t residual_state() const {
    std::size_t n = 0;
    for (const auto& s : switches_) n += s->residual_state();
    for (const auto& g : generators_) n += g.residual_state();
    return n;
  }

 private:
  using Queues = std::vector<std::deque<NetPacket>>;

  std::vector<std::vector<ProcessResult>> process_batch(const Queues& batch) {
    const std::uint32_t P = desc_.pipelines_per_switch;
    std::vector<std::vector<ProcessResult>> results(batch.size());
    auto run_switch = [&](std::uint32_t sw) {
      for (std::uint32_t pipe = 0; pipe < P; ++pipe) {
        std::size_t slot = std::size_t{sw} * P + pipe;
        results[slot].reserve(batch[slot].size());
        for (const NetPacket& pkt : batch[slot]) results[slot].push_back(switches_[sw]->process_packet(pipe, pkt));
      }
    };
    std::vector<std::uint32_t> busy;
    for (std::uint32_t sw = 0; sw < desc_.switch_count(); ++sw)
      for (std::uint32_t pipe = 0; pipe < P; ++pipe)
        if (!batch[std::size_t{sw} * P + pipe].empty()) {
          busy.push_back(sw);
          break;
        }
    if (config_.parallel && busy.size() > 1) {
      // Switches share nothing; emissions are merged afterwards in serial order.
      std::vector<std::future<void>> jobs;
      for (std::uint32_t sw : busy) jobs.push_back(std::async(std::launch::async, run_switch, sw));
      for (auto& j : jobs) j.get();
    } else {
      for (std::uint32_t sw : busy) run_switch(sw);
    }
    return results;
  }

  void absorb(RunTrace& trace, Queues& queues, std::uint32_t sw, std::uint32_t pipe, const NetPacket& in,
              const ProcessResult& res) {
    const MappingPlan& p = *plan_;
    const std::uint32_t P = desc_.pipelines_per_switch;
    trace.layers[res.model_layer].ops += res.tally;
    if (config_.record_events)
      trace.events.push_back({trace.steps, sw, pipe, in.kind, in.flow_id, in.layer_id, in.position, in.hop_count,
                              res.tally.total(), res.depth, static_cast<std::uint32_t>(res.emitted.size())});
    if (config_.capture_activations)
      for (const ProbeValue& pv : res.probes) capture(trace, in.flow_id, pv);

    for (std::size_t k = 0; k < res.emitted.size(); ++k) {
      const NetPacket& out = res.emitted[k];
      if (out.layer_id < in.layer_id) throw std::logic_error("layer_id decreased along a packet's lifetime");
      switch (out.kind) {
        case PacketKind::verdict:
          trace.verdicts.push_back({out.flow_id, out.position, out.score, trace.steps});
          break;
        case PacketKind::class_score: {
          NetPacket copy = out;
          copy.hop_count = 0;
          queues[std::size_t{sw} * P + SwitchState::kArgmaxPipeline].push_back(std::move(copy));
          break;
        }
        case PacketKind::pool_result:
        case PacketKind::neuron_result: {
          const Placement* consumer = p.placement_for_layer(out.layer_id);
          if (!consumer) throw FabricError("no placement consumes layer " + std::to_string(out.layer_id));
          const Transition& t = p.transitions[consumer->ordinal];
          if (!t.source_switch || *t.source_switch != sw)
            throw FabricError("switch " + std::to_string(sw) + " is not the producer for " + consumer->name);
          LayerTally& lt = trace.layers[consumer->model_layer];
          const std::vector<Replica>& replicas = routes_[consumer->ordinal].at(res.emit_pipeline[k]);
          for (NetPacket& next :
               generators_[consumer->ordinal].accept(out.flow_id, out.position, out.value, lt.generator_ops)) {
            ++lt.packets;
            for (std::size_t r = 0; r < replicas.size(); ++r) {
              const Replica& replica = replicas[r];
              ++lt.deliveries;
              ++trace.hop_histogram[replica.hops];
              NetPacket& pkt = queues[std::size_t{replica.destination.sw} * P + replica.destination.pipeline].emplace_back(
                  r + 1 == replicas.size() ? std::move(next) : next);
              pkt.hop_count = replica.hops;
            }
          }
          break;
        }
        default:
          throw std::logic_error(std::string("switch emitted an input packet kind ") + to_string(out.kind));
      }
    }
  }

  void capture(RunTrace& trace, std::uint32_t flow, const ProbeValue& pv) {
    auto& slot = trace.activations[{flow, pv.model_layer}];
    if (slot.empty()) slot.assign(layer_width(pv.model_layer), kUnsetActivation);
    if (pv.index >= slot.size()) throw std::logic_error("probe index out of range");
    if (slot[pv.index] != kUnsetActivation) throw std::logic_error("probe value produced twice");
    slot[pv.index] = pv.value;
  }

  std::size_t layer_width(std::uint32_t model_layer) const {
    for (const Placement& pl : plan_->placements) {
      if (pl.model_layer == model_layer)
        return pl.kind == LayerKind::conv ? std::size_t{pl.units} * pl.out_length : pl.units;
      if (pl.pool_layer && *pl.pool_layer == model_layer) return pl.emitted_width;
    }
    throw std::logic_error("unknown layer " + std::to_string(model_layer));
  }

  FabricDescriptor desc_;
  FabricConfig config_;
  std::vector<std::unique_ptr<SwitchState>> switches_;
  std::optional<MappingPlan> plan_;
  std::vector<PacketGenerator> generators_;
  std::vector<std::vector<std::vector<Replica>>> routes_;  // [ordinal][source pipeline]
};

inline Fabric build_clos(const FabricDescriptor& desc, FabricConfig config = {}) { return Fabric(desc, config); }

inline std::vector<std::pair<Replica, NetPacket>> route_multicast(const Fabric& fabric, const MulticastJob& job) {
  return fabric.route_multicast(job);
}

inline RunTrace run_until_quiescent(Fabric& fabric, const std::vector<NetPacket>& initial) {
  return fabric.run_until_quiescent(initial);
}

}  // namespace netnn
