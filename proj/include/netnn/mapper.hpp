#pragma once

// Compiles a QuantizedModel onto the lowest tier of a Clos fabric: one
// weight-bearing layer per switch, filters/neurons round-robin across the
// switch's pipelines, maxpool on the conv switch, weights in per-pipeline
// exact-match tables.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "netnn/arith.hpp"
#include "netnn/model.hpp"
#include "netnn/packet.hpp"
#include "netnn/topology.hpp"

namespace netnn {

enum class PlanErrc { insufficient_switches, unreachable, mode_mismatch, unsupported };

class PlanError : public std::runtime_error {
 public:
  PlanError(PlanErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  PlanErrc code() const noexcept { return code_; }

 private:
  PlanErrc code_;
};

enum class RoutingMode { host, local, two_tier, three_tier };

inline const char* to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::host: return "host";
    case RoutingMode::local: return "local";
    case RoutingMode::two_tier: return "2-tier";
    case RoutingMode::three_tier: return "3-tier";
  }
  return "?";
}

enum class KeyScheme { hashed, linear };

inline const char* to_string(KeyScheme s) { return s == KeyScheme::hashed ? "hashed" : "linear"; }

/// Index domain of one layer's weights: units (filters or neurons) x height x width.
struct TableDims {
  std::uint32_t units = 0;
  std::uint32_t height = 1;
  std::uint32_t width = 0;

  std::uint64_t size() const { return std::uint64_t{units} * height * width; }
};

/// 32-bit FNV-1a over the little-endian packed (filter, i, j) triple.
constexpr std::uint32_t hashed_key(std::uint32_t filter, std::uint32_t i, std::uint32_t j) {
  std::uint32_t h = 2166136261u;
  auto mix = [&h](std::uint32_t word) {
    h = (h ^ (word & 0xffu)) * 16777619u;
    h = (h ^ ((word >> 8) & 0xffu)) * 16777619u;
    h = (h ^ ((word >> 16) & 0xffu)) * 16777619u;
    h = (h ^ (word >> 24)) * 16777619u;
  };
  mix(filter);
  mix(i);
  mix(j);
  return h;
}

constexpr std::uint32_t linear_key(std::uint32_t filter, std::uint32_t i, std::uint32_t j, const TableDims& dims) {
  return (filter * dims.height + i) * dims.width + j;
}

constexpr std::uint32_t weight_index(std::uint32_t filter, std::uint32_t i, std::uint32_t j, const TableDims& dims,
                                     KeyScheme scheme) {
  return scheme == KeyScheme::hashed ? hashed_key(filter, i, j) : linear_key(filter, i, j, dims);
}

/// True when hashed_key is injective over the whole domain.
inline bool hashed_keys_injective(const TableDims& dims) {
  std::vector<std::uint32_t> keys;
  keys.reserve(dims.size());
  for (std::uint32_t f = 0; f < dims.units; ++f)
    for (std::uint32_t i = 0; i < dims.height; ++i)
      for (std::uint32_t j = 0; j < dims.width; ++j) keys.push_back(hashed_key(f, i, j));
  std::sort(keys.begin(), keys.end());
  return std::adjacent_find(keys.begin(), keys.end()) == keys.end();
}

/// Sorted flat exact-match table (key -> signed 8-bit weight).
class WeightTable {
 public:
  struct Entry {
    std::uint32_t key;
    Weight weight;
  };

  /// Entries may arrive in any order; duplicates are rejected.
  void insert_all(std::vector<Entry> entries) {
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
    std::vector<std::uint32_t> keys;
    std::vector<Weight> weights;
    keys.reserve(keys_.size() + entries.size());
    weights.reserve(keys_.size() + entries.size());
    std::size_t a = 0;
    std::size_t b = 0;
    while (a < keys_.size() || b < entries.size()) {
      bool take_old = b == entries.size() || (a < keys_.size() && keys_[a] < entries[b].key);
      std::uint32_t key = take_old ? keys_[a] : entries[b].key;
      if (!keys.empty() && keys.back() == key)
        throw std::invalid_argument("weight table: duplicate key " + std::to_string(key));
      keys.push_back(key);
      weights.push_back(take_old ? weights_[a++] : entries[b++].weight);
    }
    keys_ = std::move(keys);
    weights_ = std::move(weights);
    index();
  }

  std::optional<Weight> find(std::uint32_t key) const {
    std::size_t i = slot(key);
    if (i == keys_.size()) return std::nullopt;
    return weights_[i];
  }

  bool overwrite(std::uint32_t key, Weight w) {
    std::size_t i = slot(key);
    if (i == keys_.size()) return false;
    weights_[i] = w;
    return true;
  }

  std::vector<Entry> entries() const {
    std::vector<Entry> out;
    out.reserve(keys_.size());
    for (std::size_t i = 0; i < keys_.size(); ++i) out.push_back({keys_[i], weights_[i]});
    return out;
  }

  std::size_t size() const { return keys_.size(); }
  std::size_t bytes() const { return weights_.size() * sizeof(Weight); }

 private:
  // Bucket directory over the high key bits so a lookup touches one short
  // run of keys instead of a full binary search.
  void index() {
    directory_.clear();
    shift_ = 32;
    if (keys_.empty()) return;
    unsigned bits = static_cast<unsigned>(std::bit_width(keys_.size()));
    unsigned span = static_cast<unsigned>(std::bit_width(keys_.back()));
    shift_ = span > bits ? span - bits : 0;
    std::size_t buckets = (std::size_t{keys_.back()} >> shift_) + 2;
    directory_.assign(buckets, 0);
    for (std::uint32_t k : keys_) ++directory_[(k >> shift_) + 1];
    for (std::size_t b = 1; b < buckets; ++b) directory_[b] += directory_[b - 1];
  }

  std::size_t slot(std::uint32_t key) const {
    if (keys_.empty()) return 0;
    std::size_t b = key >> shift_;
    if (b + 1 >= directory_.size()) return keys_.size();
    auto first = keys_.begin() + directory_[b];
    auto last = keys_.begin() + directory_[b + 1];
    auto it = std::lower_bound(first, last, key);
    if (it == last || *it != key) return keys_.size();
    return static_cast<std::size_t>(it - keys_.begin());
  }

  std::vector<std::uint32_t> keys_;
  std::vector<Weight> weights_;
  std::vector<std::uint32_t> directory_;
  unsigned shift_ = 32;
};

enum class LayerKind { conv, dense };

/// Everything a switch needs to execute one weight-bearing layer.
struct Placement {
  std::string name;  // Conv1, Conv2, Dense1, ...
  std::uint32_t ordinal = 0;
  std::uint32_t model_layer = 0;
  LayerKind kind = LayerKind::conv;
  std::uint32_t switch_id = 0;
  KeyScheme key_scheme = KeyScheme::hashed;
  TableDims dims;

  std::uint32_t in_width = 0;
  std::uint32_t kernel_width = 0;  // conv
  std::uint32_t stride = 0;        // conv
  std::uint32_t out_length = 0;    // conv: positions per filter
  std::uint32_t units = 0;         // filters or neurons
  std::uint32_t requant_shift = 0;

  std::optional<std::uint32_t> pool_layer;  // colocated maxpool model index
  std::uint32_t pool_window = 0;

  bool is_final = false;
  std::uint32_t emitted_width = 0;            // values handed to the next layer
  std::optional<std::uint32_t> next_layer;    // model index of the consumer

  std::vector<std::vector<std::uint32_t>> partitions;  // per pipeline, owned units
};

/// Per-pipeline slice of a placement's tables.
struct PipelineTables {
  WeightTable weights;
  std::vector<std::pair<std::uint32_t, Accumulator>> biases;  // unit -> bias
};

/// Multicast group for packets entering one placement.
struct Transition {
  std::optional<std::uint32_t> from;  // placement ordinal; nullopt = feature extractor
  std::uint32_t to = 0;
  std::optional<std::uint32_t> source_switch;
  std::uint32_t dest_switch = 0;
  std::vector<Port> destinations;
  RoutingMode mode = RoutingMode::two_tier;
  PacketKind packet_kind = PacketKind::conv_input;
  std::uint32_t value_count = 0;  // values the generator receives
};

struct MappingPlan {
  FabricDescriptor fabric;
  RoutingMode routing = RoutingMode::two_tier;
  std::uint32_t input_width = 0;
  std::uint32_t class_count = 0;
  std::vector<Placement> placements;
  std::vector<std::vector<PipelineTables>> tables;  // [ordinal][pipeline]
  std::vector<Transition> transitions;              // transitions[k] enters placement k

  const Placement* placement_for_layer(std::uint32_t model_layer) const {
    for (const auto& p : placements)
      if (p.model_layer == model_layer) return &p;
    return nullptr;
  }
  const Placement* placement_on_switch(std::uint32_t sw) const {
    for (const auto& p : placements)
      if (p.switch_id == sw) return &p;
    return nullptr;
  }
};

struct PlanOptions {
  std::optional<RoutingMode> routing;
};

inline RoutingMode default_routing(const FabricDescriptor& fabric) {
  return fabric.tiers >= 2 ? RoutingMode::two_tier : RoutingMode::local;
}

inline std::vector<std::vector<std::uint32_t>> round_robin(std::uint32_t units, std::uint32_t pipelines) {
  std::vector<std::vector<std::uint32_t>> parts(pipelines);
  for (std::uint32_t u = 0; u < units; ++u) parts[u % pipelines].push_back(u);
  return parts;
}

inline MappingPlan build_plan(const QuantizedModel& model, const FabricDescriptor& fabric, PlanOptions options = {}) {
  std::vector<LayerShape> shapes = validate(model);
  validate(fabric);

  std::vector<std::uint32_t> weight_layers;
  for (std::uint32_t i = 0; i < model.layers.size(); ++i)
    if (is_weight_bearing(model.layers[i])) weight_layers.push_back(i);

  if (weight_layers.size() > fabric.switches_per_tier)
    throw PlanError(PlanErrc::insufficient_switches,
                    "model has " + std::to_string(weight_layers.size()) + " weight-bearing layers but the fabric has " +
                        std::to_string(fabric.switches_per_tier) + " lowest-tier switches");

  RoutingMode routing = options.routing.value_or(default_routing(fabric));
  if (routing == RoutingMode::host) throw PlanError(PlanErrc::mode_mismatch, "host mode is reserved for injection");
  if (routing == RoutingMode::three_tier && fabric.tiers < 3)
    throw PlanError(PlanErrc::mode_mismatch, "3-tier routing needs a fabric with at least 3 tiers");
  if (routing == RoutingMode::two_tier && fabric.tiers < 2)
    throw PlanError(PlanErrc::mode_mismatch, "2-tier routing needs a fabric with at least 2 tiers");
  if (routing == RoutingMode::local && weight_layers.size() > 1)
    throw PlanError(PlanErrc::unreachable,
                    "a single-tier fabric only multicasts through the local traffic manager; "
                    "layers on different switches are unreachable");

  MappingPlan plan;
  plan.fabric = fabric;
  plan.routing = routing;
  plan.input_width = model.input_width;
  plan.class_count = model.class_count;
  const std::uint32_t pipes = fabric.pipelines_per_switch;

  std::uint32_t conv_count = 0;
  std::uint32_t dense_count = 0;
  for (std::uint32_t ord = 0; ord < weight_layers.size(); ++ord) {
    std::uint32_t li = weight_layers[ord];
    Placement pl;
    pl.ordinal = ord;
    pl.model_layer = li;
    pl.switch_id = fabric.switch_id(0, ord);
    pl.in_width = shapes[li].in_width;
    pl.is_final = li + 1 == model.layers.size();
    std::vector<PipelineTables> tables(pipes);

    if (const auto* conv = std::get_if<Conv1D>(&model.layers[li])) {
      pl.kind = LayerKind::conv;
      pl.name = "Conv" + std::to_string(++conv_count);
      pl.kernel_width = conv->kernel_width;
      pl.stride = conv->stride;
      pl.out_length = shapes[li].out_length;
      pl.units = conv->filters;
      pl.requant_shift = conv->requant_shift;
      pl.dims = TableDims{conv->filters, 1, conv->kernel_width};
      pl.emitted_width = shapes[li].out_width;
      if (li + 1 < model.layers.size()) {
        if (const auto* pool = std::get_if<MaxPool1D>(&model.layers[li + 1])) {
          if (pool->window > 32)
            throw PlanError(PlanErrc::unsupported, "maxpool window above 32 exceeds the arrival bitmap");
          pl.pool_layer = li + 1;
          pl.pool_window = pool->window;
          pl.emitted_width = shapes[li + 1].out_width;
        }
      }
    } else {
      const auto& dense = std::get<Dense>(model.layers[li]);
      pl.kind = LayerKind::dense;
      pl.name = "Dense" + std::to_string(++dense_count);
      pl.units = dense.out_width;
      pl.requant_shift = dense.requant_shift;
      pl.dims = TableDims{dense.out_width, 1, dense.in_width};
      pl.emitted_width = dense.out_width;
    }
    if (pl.dims.size() > UINT32_MAX) throw PlanError(PlanErrc::unsupported, pl.name + ": weight domain exceeds 32 bits");
    pl.key_scheme = hashed_keys_injective(pl.dims) ? KeyScheme::hashed : KeyScheme::linear;
    pl.partitions = round_robin(pl.units, pipes);

    for (std::uint32_t p = 0; p < pipes; ++p) {
      std::vector<WeightTable::Entry> entries;
      for (std::uint32_t unit : pl.partitions[p]) {
        for (std::uint32_t j = 0; j < pl.dims.width; ++j) {
          Weight w = pl.kind == LayerKind::conv ? std::get<Conv1D>(model.layers[li]).weight(unit, j)
                                                : std::get<Dense>(model.layers[li]).weight(unit, j);
          entries.push_back({weight_index(unit, 0, j, pl.dims, pl.key_scheme), w});
        }
        Accumulator bias = pl.kind == LayerKind::conv ? std::get<Conv1D>(model.layers[li]).biases[unit]
                                                      : std::get<Dense>(model.layers[li]).biases[unit];
        tables[p].biases.emplace_back(unit, bias);
      }
      tables[p].weights.insert_all(std::move(entries));
    }
    plan.placements.push_back(std::move(pl));
    plan.tables.push_back(std::move(tables));
  }

  for (std::uint32_t ord = 0; ord < plan.placements.size(); ++ord) {
    Placement& pl = plan.placements[ord];
    if (ord + 1 < plan.placements.size()) pl.next_layer = plan.placements[ord + 1].model_layer;
    Transition t;
    t.to = ord;
    t.dest_switch = pl.switch_id;
    for (std::uint32_t p = 0; p < pipes; ++p) t.destinations.push_back(Port{pl.switch_id, p});
    t.packet_kind = pl.kind == LayerKind::conv ? PacketKind::conv_input : PacketKind::dense_input;
    t.value_count = pl.in_width;
    if (ord == 0) {
      t.mode = RoutingMode::host;
    } else {
      t.from = ord - 1;
      t.source_switch = plan.placements[ord - 1].switch_id;
      t.mode = *t.source_switch == t.dest_switch ? RoutingMode::local : routing;
    }
    plan.transitions.push_back(std::move(t));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Closed-form resource accounting

inline constexpr const char* kOpConvention =
    "one op per table lookup, shift, add, compare or register read-modify-write; "
    "packets are logical packets entering the layer before multicast replication; "
    "memory = weight bytes + bias bytes + register state for one in-flight inference; "
    "generator ops = window assembly at the producing egress";

struct LayerResources {
  std::string name;
  std::uint32_t model_layer = 0;
  std::uint64_t packets = 0;
  std::uint64_t deliveries = 0;
  std::uint64_t total_ops = 0;
  std::uint64_t ops_per_packet = 0;
  std::uint64_t memory_bytes = 0;
  std::uint64_t weight_bytes = 0;
  std::uint64_t generator_ops = 0;

  bool operator==(const LayerResources&) const = default;
};

struct ResourceReport {
  std::vector<LayerResources> layers;
  std::string convention = kOpConvention;
  std::uint64_t product_table_bytes_per_pipeline = 0;
};

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return b == 0 ? 0 : (a + b - 1) / b; }

/// Register bytes of one maxpool window: the values plus an arrival bitmap.
constexpr std::uint64_t pool_window_bytes(std::uint32_t window) { return window + (window + 7) / 8; }

inline constexpr std::uint64_t kDenseStateBytes = 8;      // accumulator + arrival counter
inline constexpr std::uint64_t kArgmaxStateBytes = 12;    // best score, best class, count

inline ResourceReport estimate_resources(const QuantizedModel& model, const MappingPlan& plan,
                                         MultiplyBackend backend = MultiplyBackend::tcam) {
  ResourceReport report;
  if (backend == MultiplyBackend::tcam) report.product_table_bytes_per_pipeline = ProductTable::kEntries * sizeof(Product);
  const std::uint64_t pipes = plan.fabric.pipelines_per_switch;

  for (const Placement& pl : plan.placements) {
    LayerResources r;
    r.name = pl.name;
    r.model_layer = pl.model_layer;
    const std::uint64_t units = pl.units;
    if (pl.kind == LayerKind::conv) {
      const auto& conv = std::get<Conv1D>(model.layers[pl.model_layer]);
      const std::uint64_t k = pl.kernel_width;
      const std::uint64_t len = pl.out_length;
      std::uint64_t products = units * k;
      if (backend == MultiplyBackend::shift_add) {
        products = 0;
        for (Weight w : conv.weights) products += shift_add_ops(w);
      }
      r.packets = len;
      // per packet and filter: K+1 lookups, K adds, relu compare, requant shift + clamp
      r.total_ops = len * (units * (2 * k + 4) + products);
      r.weight_bytes = units * k;
      r.memory_bytes = r.weight_bytes + 4 * units;
      if (pl.pool_window != 0) {
        const std::uint64_t w = pl.pool_window;
        r.total_ops += len * units * 3 + units * (len / w) * 2 * w;
        r.memory_bytes += units * (len / w) * pool_window_bytes(pl.pool_window);
      }
      r.generator_ops = pl.in_width + 3 * k * len;
    } else {
      const auto& dense = std::get<Dense>(model.layers[pl.model_layer]);
      const std::uint64_t n = pl.in_width;
      std::uint64_t products = n * units;
      if (backend == MultiplyBackend::shift_add) {
        products = 0;
        for (Weight w : dense.weights) products += shift_add_ops(w);
      }
      r.packets = n;
      r.total_ops = n * units * 6 + products + units * (pl.is_final ? 2 : 5);
      r.weight_bytes = n * units;
      r.memory_bytes = r.weight_bytes + 4 * units + kDenseStateBytes * units;
      if (pl.is_final) {
        r.total_ops += units * 6;
        r.memory_bytes += kArgmaxStateBytes;
      }
    }
    r.deliveries = r.packets * pipes;
    r.ops_per_packet = ceil_div(r.total_ops, r.packets);
    report.layers.push_back(std::move(r));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Plan document

inline nlohmann::json plan_to_json(const MappingPlan& plan) {
  using nlohmann::json;
  json doc;
  doc["format"] = "netnn-plan";
  doc["version"] = 1;
  doc["fabric"] = {{"tiers", plan.fabric.tiers},
                   {"switches_per_tier", plan.fabric.switches_per_tier},
                   {"pipelines_per_switch", plan.fabric.pipelines_per_switch}};
  doc["routing_mode"] = to_string(plan.routing);
  doc["input_width"] = plan.input_width;
  doc["class_count"] = plan.class_count;
  json layers = json::array();
  for (const Placement& pl : plan.placements) {
    json l;
    l["name"] = pl.name;
    l["model_layer"] = pl.model_layer;
    l["kind"] = pl.kind == LayerKind::conv ? "conv1d" : "dense";
    l["switch"] = pl.switch_id;
    l["key_scheme"] = to_string(pl.key_scheme);
    l["table_dims"] = {pl.dims.units, pl.dims.height, pl.dims.width};
    l["requant_shift"] = pl.requant_shift;
    l["final"] = pl.is_final;
    if (pl.pool_layer) l["pool"] = {{"model_layer", *pl.pool_layer}, {"window", pl.pool_window}};
    else l["pool"] = nullptr;
    json pipes = json::array();
    const auto& tables = plan.tables[pl.ordinal];
    for (std::uint32_t p = 0; p < pl.partitions.size(); ++p) {
      pipes.push_back({{"pipeline", p},
                       {"units", pl.partitions[p]},
                       {"weight_entries", tables[p].weights.size()},
                       {"bias_entries", tables[p].biases.size()}});
    }
    l["pipelines"] = std::move(pipes);
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  json transitions = json::array();
  for (const Transition& t : plan.transitions) {
    json dests = json::array();
    for (const Port& p : t.destinations) dests.push_back({p.sw, p.pipeline});
    transitions.push_back({{"into", plan.placements[t.to].name},
                           {"from", t.from ? json(plan.placements[*t.from].name) : json("extractor")},
                           {"source_switch", t.source_switch ? json(*t.source_switch) : json(nullptr)},
                           {"dest_switch", t.dest_switch},
                           {"mode", to_string(t.mode)},
                           {"packet_kind", to_string(t.packet_kind)},
                           {"value_count", t.value_count},
                           {"destinations", std::move(dests)}});
  }
  doc["transitions"] = std::move(transitions);
  return doc;
}

inline nlohmann::json resources_to_json(const ResourceReport& report) {
  using nlohmann::json;
  json rows = json::array();
  for (const LayerResources& r : report.layers) {
    rows.push_back({{"layer", r.name},
                    {"model_layer", r.model_layer},
                    {"packets", r.packets},
                    {"deliveries", r.deliveries},
                    {"ops_per_packet", r.ops_per_packet},
                    {"total_ops", r.total_ops},
                    {"memory_bytes", r.memory_bytes},
                    {"weight_bytes", r.weight_bytes},
                    {"generator_ops", r.generator_ops}});
  }
  return {{"convention", report.convention},
          {"product_table_bytes_per_pipeline", report.product_table_bytes_per_pipeline},
          {"layers", std::move(rows)}};
}

}  // namespace netnn
