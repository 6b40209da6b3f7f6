#pragma once

// Command implementations behind the netnn tool. Each command reads a
// RunConfig, prints a short human summary and returns a structured document
// (also written to output_path when set).

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "netnn/fabric.hpp"
#include "netnn/flow.hpp"
#include "netnn/mapper.hpp"
#include "netnn/model.hpp"
#include "netnn/model_io.hpp"
#include "netnn/reference.hpp"
#include "netnn/synthetic.hpp"

namespace netnn {

struct RunConfig {
  std::string model_path;
  std::string trace_path;
  std::string trace_format = "auto";  // auto | csv-jsonl | pcap
  FabricDescriptor fabric;
  MultiplyBackend backend = MultiplyBackend::tcam;
  std::optional<RoutingMode> routing;  // default: 2-tier, or local on one tier
  std::uint64_t max_inference_point = 1024;
  bool strict_timestamps = true;
  std::uint64_t seed = 0;
  std::string output_path;

  // run
  std::string trace_out_path;
  bool trace_events = false;
  std::uint32_t batch = 64;
  std::uint32_t malicious_class = 1;
  bool parallel = false;
  std::uint32_t stage_budget = 12;

  // verify
  std::uint32_t inputs = 10;
  bool corrupt_weight = false;
};

/// NETNN_MODEL, NETNN_TRACE and NETNN_OUTPUT fill paths left empty by flags.
inline void apply_env_overrides(RunConfig& cfg) {
  auto fill = [](std::string& field, const char* var) {
    if (!field.empty()) return;
    if (const char* v = std::getenv(var); v && *v) field = v;
  };
  fill(cfg.model_path, "NETNN_MODEL");
  fill(cfg.trace_path, "NETNN_TRACE");
  fill(cfg.output_path, "NETNN_OUTPUT");
}

inline MultiplyBackend parse_backend(const std::string& s) {
  if (s == "tcam") return MultiplyBackend::tcam;
  if (s == "shift-add") return MultiplyBackend::shift_add;
  throw std::invalid_argument("unknown multiply backend '" + s + "' (tcam | shift-add)");
}

inline RoutingMode parse_routing(const std::string& s) {
  if (s == "2-tier") return RoutingMode::two_tier;
  if (s == "3-tier") return RoutingMode::three_tier;
  if (s == "local") return RoutingMode::local;
  throw std::invalid_argument("unknown routing mode '" + s + "' (2-tier | 3-tier | local)");
}

struct CommandResult {
  int exit_code = 0;
  nlohmann::json document;
};

namespace detail {

inline void write_document(const std::string& path, const nlohmann::json& doc) {
  if (path.empty()) return;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << doc.dump(2) << '\n';
}

inline QuantizedModel require_model(const RunConfig& cfg) {
  if (cfg.model_path.empty()) throw std::invalid_argument("no model given (--model or NETNN_MODEL)");
  return load_model(cfg.model_path);
}

inline PlanOptions plan_options(const RunConfig& cfg) { return PlanOptions{cfg.routing}; }

inline FabricConfig fabric_config(const RunConfig& cfg, MultiplyBackend backend) {
  FabricConfig fc;
  fc.switch_config.backend = backend;
  fc.switch_config.stage_budget = cfg.stage_budget;
  fc.record_events = cfg.trace_events;
  fc.parallel = cfg.parallel;
  return fc;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// plan

/// Published per-layer deployment figures for the reference architecture:
/// packets, operations per packet, memory bytes.
struct ReferenceRow {
  const char* name;
  std::uint64_t packets;
  std::uint64_t ops_per_packet;
  std::uint64_t memory;
};

inline constexpr ReferenceRow kReferenceDeployment[] = {
    {"Conv1", 3240, 644, 1296},  {"Conv2", 2592, 38895, 5680}, {"Dense1", 496, 3159, 25792},
    {"Dense2", 4, 4950, 1250},   {"Dense3", 1, 378, 51},
};

inline nlohmann::json reference_comparison(const ResourceReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < report.layers.size() && i < std::size(kReferenceDeployment); ++i) {
    const auto& ours = report.layers[i];
    const auto& ref = kReferenceDeployment[i];
    auto delta = [](std::uint64_t a, std::uint64_t b) { return static_cast<std::int64_t>(a) - static_cast<std::int64_t>(b); };
    rows.push_back({{"layer", ours.name},
                    {"packets", ours.packets},
                    {"reference_packets", ref.packets},
                    {"delta_packets", delta(ours.packets, ref.packets)},
                    {"ops_per_packet", ours.ops_per_packet},
                    {"reference_ops_per_packet", ref.ops_per_packet},
                    {"delta_ops_per_packet", delta(ours.ops_per_packet, ref.ops_per_packet)},
                    {"memory_bytes", ours.memory_bytes},
                    {"reference_memory_bytes", ref.memory},
                    {"delta_memory_bytes", delta(ours.memory_bytes, ref.memory)}});
  }
  return rows;
}

inline void print_resource_table(const ResourceReport& report, bool with_reference, std::ostream& out) {
  out << std::left << std::setw(8) << "Layer" << std::right << std::setw(12) << "# packets" << std::setw(16)
      << "ops/packet" << std::setw(14) << "memory (B)";
  if (with_reference)
    out << "  |" << std::setw(10) << "ref pkts" << std::setw(12) << "ref ops" << std::setw(10) << "ref mem" << std::setw(12)
        << "d pkts" << std::setw(14) << "d ops" << std::setw(14) << "d mem";
  out << '\n';
  for (std::size_t i = 0; i < report.layers.size(); ++i) {
    const auto& r = report.layers[i];
    out << std::left << std::setw(8) << r.name << std::right << std::setw(12) << r.packets << std::setw(16)
        << r.ops_per_packet << std::setw(14) << r.memory_bytes;
    if (with_reference && i < std::size(kReferenceDeployment)) {
      const auto& ref = kReferenceDeployment[i];
      auto d = [](std::uint64_t a, std::uint64_t b) { return static_cast<std::int64_t>(a) - static_cast<std::int64_t>(b); };
      out << "  |" << std::setw(10) << ref.packets << std::setw(12) << ref.ops_per_packet << std::setw(10) << ref.memory
          << std::setw(12) << d(r.packets, ref.packets) << std::setw(14) << d(r.ops_per_packet, ref.ops_per_packet)
          << std::setw(14) << d(r.memory_bytes, ref.memory);
    }
    out << '\n';
  }
  out << "product table: " << report.product_table_bytes_per_pipeline << " B per pipeline (not in memory column)\n";
  out << "convention: " << report.convention << '\n';
}

inline CommandResult cmd_plan(const RunConfig& cfg, std::ostream& out) {
  QuantizedModel model = detail::require_model(cfg);
  MappingPlan plan = build_plan(model, cfg.fabric, detail::plan_options(cfg));
  ResourceReport report = estimate_resources(model, plan, cfg.backend);
  bool canonical = has_canonical_architecture(model);
  nlohmann::json doc = plan_to_json(plan);
  doc["multiply_backend"] = to_string(cfg.backend);
  doc["resources"] = resources_to_json(report);
  if (canonical) doc["reference_comparison"] = reference_comparison(report);
  detail::write_document(cfg.output_path, doc);
  out << "planned " << plan.placements.size() << " layers on " << cfg.fabric.tiers << "x"
      << cfg.fabric.switches_per_tier << "x" << cfg.fabric.pipelines_per_switch << " fabric, routing "
      << to_string(plan.routing) << ", backend " << to_string(cfg.backend) << '\n';
  print_resource_table(report, canonical, out);
  return {0, std::move(doc)};
}

// ---------------------------------------------------------------------------
// run

inline std::string detect_trace_format(const RunConfig& cfg) {
  if (cfg.trace_format != "auto") return cfg.trace_format;
  const std::string& p = cfg.trace_path;
  auto ends = [&](const char* suf) {
    std::string s(suf);
    return p.size() >= s.size() && p.compare(p.size() - s.size(), s.size(), s) == 0;
  };
  return ends(".pcap") || ends(".cap") ? "pcap" : "csv-jsonl";
}

inline ParsedTrace load_trace(const RunConfig& cfg) {
  if (cfg.trace_path.empty()) throw std::invalid_argument("no trace given (--trace or NETNN_TRACE)");
  std::ifstream in(cfg.trace_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace " + cfg.trace_path);
  return parse_trace(in, detect_trace_format(cfg));
}

namespace detail {

struct Pending {
  std::size_t flow_index;
  std::uint32_t point;
  std::vector<Activation> input;
};

}  // namespace detail

inline CommandResult cmd_run(const RunConfig& cfg, std::ostream& out) {
  using nlohmann::json;
  QuantizedModel model = detail::require_model(cfg);
  ParsedTrace parsed = load_trace(cfg);
  MappingPlan plan = build_plan(model, cfg.fabric, detail::plan_options(cfg));
  Fabric fabric(cfg.fabric, detail::fabric_config(cfg, cfg.backend));
  fabric.install(plan);

  std::ofstream trace_out;
  if (!cfg.trace_out_path.empty()) {
    trace_out.open(cfg.trace_out_path, std::ios::binary);
    if (!trace_out) throw std::runtime_error("cannot write " + cfg.trace_out_path);
  }

  FlowTable table(FlowOptions{cfg.max_inference_point, cfg.strict_timestamps});
  std::map<std::uint32_t, LayerTally> layers;
  std::map<std::uint32_t, std::uint64_t> hops;
  std::uint64_t steps = 0;
  std::uint64_t inferences = 0;
  std::uint64_t inference_correct = 0;
  std::uint64_t inference_labelled = 0;
  std::vector<detail::Pending> pending;
  std::uint64_t batch_no = 0;
  const std::uint32_t batch = std::max<std::uint32_t>(1, cfg.batch);

  auto flush = [&] {
    if (pending.empty()) return;
    std::vector<InferenceRequest> requests;
    for (std::uint32_t i = 0; i < pending.size(); ++i) requests.push_back({i, std::move(pending[i].input)});
    RunTrace trace = fabric.run(requests);
    if (trace.verdicts.size() != pending.size())
      throw std::runtime_error("fabric returned " + std::to_string(trace.verdicts.size()) + " verdicts for " +
                               std::to_string(pending.size()) + " inferences");
    std::vector<std::optional<std::uint32_t>> cls(pending.size());
    for (const Verdict& v : trace.verdicts) cls.at(v.flow) = v.class_index;
    for (std::size_t i = 0; i < pending.size(); ++i) {
      FlowRecord& rec = table.at(pending[i].flow_index);
      record_vote(rec, pending[i].point, *cls[i]);
      ++inferences;
    }
    for (const auto& [layer, t] : trace.layers) {
      LayerTally& acc = layers[layer];
      acc.packets += t.packets;
      acc.deliveries += t.deliveries;
      acc.ops += t.ops;
      acc.generator_ops += t.generator_ops;
    }
    for (const auto& [h, n] : trace.hop_histogram) hops[h] += n;
    steps += trace.steps;
    if (trace_out.is_open()) {
      for (std::size_t i = 0; i < pending.size(); ++i)
        trace_out << json{{"type", "inference"},
                          {"batch", batch_no},
                          {"tag", i},
                          {"flow_id", table.at(pending[i].flow_index).flow_id},
                          {"point", pending[i].point}}
                         .dump()
                  << '\n';
      trace.write_jsonl(trace_out);
    }
    ++batch_no;
    pending.clear();
  };

  for (const TracePacket& pkt : parsed.packets) {
    FlowUpdate u = update_flow(table, pkt);
    if (!u.is_inference_point) continue;
    const FlowRecord& rec = table.at(u.index);
    if (pkt.label) ++inference_labelled;  // scored once votes are in
    pending.push_back({u.index, static_cast<std::uint32_t>(rec.packet_count), build_input(rec, pkt, model)});
    if (pending.size() >= batch) flush();
  }
  flush();

  // Per-inference accuracy against the label of the packet that triggered it.
  std::map<std::pair<std::size_t, std::uint32_t>, std::uint32_t> point_labels;
  {
    FlowTable replay(FlowOptions{cfg.max_inference_point, false});
    for (const TracePacket& pkt : parsed.packets) {
      FlowUpdate u = update_flow(replay, pkt);
      if (u.is_inference_point && pkt.label)
        point_labels[{u.index, static_cast<std::uint32_t>(replay.at(u.index).packet_count)}] = *pkt.label;
    }
  }

  json flows = json::array();
  std::uint64_t labelled_flows = 0;
  std::uint64_t correct_flows = 0;
  std::size_t max_votes = 0;
  for (const FlowRecord& r : table.records()) max_votes = std::max(max_votes, r.votes.size());
  std::vector<std::uint64_t> correct_by_points(max_votes + 1, 0);
  for (std::size_t fi = 0; fi < table.size(); ++fi) {
    const FlowRecord& r = table.at(fi);
    json votes = json::array();
    for (const Vote& v : r.votes) {
      votes.push_back({v.point, v.class_index});
      auto it = point_labels.find({fi, v.point});
      if (it != point_labels.end() && it->second == v.class_index) ++inference_correct;
    }
    json f{{"flow_id", r.flow_id},
           {"tuple", to_string(r.key)},
           {"packets", r.packet_count},
           {"min_iat_ns", r.has_iat() ? json(r.min_iat) : json(nullptr)},
           {"max_iat_ns", r.has_iat() ? json(r.max_iat) : json(nullptr)},
           {"votes", std::move(votes)}};
    std::optional<std::uint32_t> v;
    if (!r.votes.empty()) v = verdict(r, cfg.malicious_class);
    f["verdict"] = v ? json(*v) : json(nullptr);
    std::optional<std::uint32_t> label = flow_label(r, cfg.malicious_class);
    f["label"] = label ? json(*label) : json(nullptr);
    if (label && v) {
      ++labelled_flows;
      if (*label == *v) ++correct_flows;
      for (std::size_t k = 1; k <= max_votes; ++k)
        if (verdict(std::span<const Vote>(r.votes), cfg.malicious_class, k) == *label) ++correct_by_points[k];
    }
    flows.push_back(std::move(f));
  }

  json layer_rows = json::array();
  for (const Placement& pl : plan.placements) {
    const LayerTally& t = layers[pl.model_layer];
    layer_rows.push_back({{"layer", pl.name},
                          {"model_layer", pl.model_layer},
                          {"switch", pl.switch_id},
                          {"packets", t.packets},
                          {"deliveries", t.deliveries},
                          {"ops", t.ops.total()},
                          {"lookups", t.ops.lookups},
                          {"shifts", t.ops.shifts},
                          {"adds", t.ops.adds},
                          {"compares", t.ops.compares},
                          {"register_accesses", t.ops.register_accesses},
                          {"generator_ops", t.generator_ops}});
  }
  json hop_rows = json::object();
  for (const auto& [h, n] : hops) hop_rows[std::to_string(h)] = n;

  json summary{{"trace_packets", parsed.packets.size()},
               {"skipped_non_ipv4", parsed.skipped_non_ipv4},
               {"flows", table.size()},
               {"inferences", inferences},
               {"steps", steps}};
  if (labelled_flows > 0) {
    summary["labelled_flows"] = labelled_flows;
    summary["accuracy"] = static_cast<double>(correct_flows) / static_cast<double>(labelled_flows);
    json by_points = json::object();
    for (std::size_t k = 1; k <= max_votes; ++k)
      by_points[std::to_string(k)] = static_cast<double>(correct_by_points[k]) / static_cast<double>(labelled_flows);
    summary["flow_accuracy_by_points"] = std::move(by_points);
  }
  if (inference_labelled > 0)
    summary["inference_accuracy"] = static_cast<double>(inference_correct) / static_cast<double>(inference_labelled);

  json doc{{"format", "netnn-run-report"},
           {"version", 1},
           {"config",
            {{"model", cfg.model_path},
             {"trace", cfg.trace_path},
             {"fabric", {cfg.fabric.tiers, cfg.fabric.switches_per_tier, cfg.fabric.pipelines_per_switch}},
             {"multiply_backend", to_string(cfg.backend)},
             {"routing_mode", to_string(plan.routing)},
             {"max_inference_point", cfg.max_inference_point},
             {"strict_timestamps", cfg.strict_timestamps},
             {"malicious_class", cfg.malicious_class}}},
           {"summary", std::move(summary)},
           {"layers", std::move(layer_rows)},
           {"hops", std::move(hop_rows)},
           {"flows", std::move(flows)}};
  detail::write_document(cfg.output_path, doc);

  out << "flows " << table.size() << ", inferences " << inferences << ", trace packets " << parsed.packets.size();
  if (doc["summary"].contains("accuracy")) out << ", flow accuracy " << doc["summary"]["accuracy"].get<double>();
  out << '\n';
  return {0, std::move(doc)};
}

// ---------------------------------------------------------------------------
// verify

struct Divergence {
  std::uint64_t seed = 0;
  std::uint32_t layer = 0;
  std::uint32_t position = 0;
  std::string what;
};

namespace detail {

inline std::vector<Activation> random_input(std::uint64_t seed, std::uint32_t width) {
  FixtureRng rng(seed);
  std::vector<Activation> in(width);
  for (auto& v : in) v = static_cast<Activation>(rng.uniform(0, 255));
  return in;
}

/// Compares captured fabric values of one inference against the reference.
inline std::optional<Divergence> compare_with_reference(const QuantizedModel& model, const LayerTrace& ref,
                                                        const RunTrace& trace, std::uint32_t tag, std::uint64_t seed) {
  for (std::uint32_t li = 0; li < model.layers.size(); ++li) {
    std::vector<std::int32_t> expected;
    if (li + 1 < model.layers.size()) expected.assign(ref.hidden[li].begin(), ref.hidden[li].end());
    else expected = ref.result.scores;
    auto it = trace.activations.find({tag, li});
    if (it == trace.activations.end()) return Divergence{seed, li, 0, "no values captured"};
    const auto& got = it->second;
    if (got.size() != expected.size()) return Divergence{seed, li, 0, "width mismatch"};
    for (std::uint32_t p = 0; p < got.size(); ++p)
      if (got[p] != expected[p])
        return Divergence{seed, li, p, "fabric " + std::to_string(got[p]) + " != reference " + std::to_string(expected[p])};
  }
  return std::nullopt;
}

inline std::optional<Divergence> compare_runs(const RunTrace& a, const RunTrace& b, std::uint32_t tag,
                                              std::uint64_t seed) {
  for (const auto& [key, va] : a.activations) {
    if (key.first != tag) continue;
    auto it = b.activations.find(key);
    if (it == b.activations.end()) return Divergence{seed, key.second, 0, "missing in shift-add run"};
    for (std::uint32_t p = 0; p < va.size(); ++p)
      if (va[p] != it->second[p])
        return Divergence{seed, key.second, p,
                          "tcam " + std::to_string(va[p]) + " != shift-add " + std::to_string(it->second[p])};
  }
  return std::nullopt;
}

}  // namespace detail

/// Differential check of the fabric against the reference engine, and of the
/// two multiply backends against each other, over `inputs` seeded inputs.
inline CommandResult cmd_verify(const RunConfig& cfg, const QuantizedModel& model, std::ostream& out) {
  using nlohmann::json;
  json doc{{"format", "netnn-verify-report"}, {"version", 1}, {"inputs", cfg.inputs}, {"seed", cfg.seed}};
  if (cfg.inputs == 0) {
    out << "warning: 0 inputs requested, nothing to verify\nPASS (trivially)\n";
    doc["status"] = "pass";
    doc["warning"] = "no inputs";
    detail::write_document(cfg.output_path, doc);
    return {0, std::move(doc)};
  }
  MappingPlan plan = build_plan(model, cfg.fabric, detail::plan_options(cfg));

  auto make = [&](MultiplyBackend backend) {
    FabricConfig fc = detail::fabric_config(cfg, backend);
    fc.record_events = false;
    fc.capture_activations = true;
    auto f = std::make_unique<Fabric>(cfg.fabric, fc);
    f->install(plan);
    return f;
  };
  auto tcam = make(MultiplyBackend::tcam);
  auto shift = make(MultiplyBackend::shift_add);

  if (cfg.corrupt_weight) {
    // Flip the top bit of the first weight of the first layer, on the tcam side only.
    const Placement& pl = plan.placements.front();
    Weight w = std::visit(
        [](const auto& l) -> Weight {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, MaxPool1D>) return 0;
          else return l.weights.front();
        },
        model.layers[pl.model_layer]);
    auto corrupted = static_cast<Weight>(static_cast<std::uint8_t>(w) ^ 0x80u);
    tcam->switch_state(pl.switch_id).overwrite_weight(pl.model_layer, 0, 0, corrupted);
    doc["fault"] = {{"layer", pl.model_layer}, {"unit", 0}, {"index", 0}, {"from", w}, {"to", corrupted}};
  }

  std::vector<InferenceRequest> requests;
  for (std::uint32_t i = 0; i < cfg.inputs; ++i)
    requests.push_back({i, detail::random_input(cfg.seed + i, model.input_width)});
  RunTrace a = tcam->run(requests);
  RunTrace b = shift->run(requests);

  std::map<std::uint32_t, std::uint32_t> verdict_a;
  std::map<std::uint32_t, std::uint32_t> verdict_b;
  for (const Verdict& v : a.verdicts) verdict_a[v.flow] = v.class_index;
  for (const Verdict& v : b.verdicts) verdict_b[v.flow] = v.class_index;

  std::optional<Divergence> first;
  std::string which;
  json per_seed = json::array();
  for (std::uint32_t i = 0; i < cfg.inputs; ++i) {
    const std::uint64_t seed = cfg.seed + i;
    LayerTrace ref = infer_trace(model, requests[i].input);
    std::optional<Divergence> d = detail::compare_with_reference(model, ref, a, i, seed);
    std::string kind = "fabric-vs-reference";
    if (!d && verdict_a[i] != ref.result.argmax) d = Divergence{seed, 0, 0, "verdict differs from reference argmax"};
    if (!d) {
      d = detail::compare_runs(a, b, i, seed);
      kind = "tcam-vs-shift-add";
      if (!d && verdict_a[i] != verdict_b[i]) d = Divergence{seed, 0, 0, "backend verdicts differ"};
    }
    json row{{"seed", seed}, {"class", ref.result.argmax}, {"ok", !d.has_value()}};
    if (d) {
      row["divergence"] = {{"check", kind}, {"layer", d->layer}, {"position", d->position}, {"detail", d->what}};
      if (!first) {
        first = d;
        which = kind;
      }
    }
    per_seed.push_back(std::move(row));
  }
  doc["results"] = std::move(per_seed);
  doc["status"] = first ? "fail" : "pass";
  if (first)
    doc["first_divergence"] = {
        {"seed", first->seed}, {"layer", first->layer}, {"position", first->position}, {"check", which}, {"detail", first->what}};
  detail::write_document(cfg.output_path, doc);
  if (first) {
    out << "FAIL: first divergence at seed " << first->seed << ", layer " << first->layer << ", position "
        << first->position << " (" << which << ": " << first->what << ")\n";
    return {1, std::move(doc)};
  }
  out << "PASS: " << cfg.inputs << " inputs, fabric == reference and tcam == shift-add on every layer\n";
  return {0, std::move(doc)};
}

inline CommandResult cmd_verify(const RunConfig& cfg, std::ostream& out) {
  return cmd_verify(cfg, detail::require_model(cfg), out);
}

// ---------------------------------------------------------------------------
// report

/// Summarises a trace written by `run --trace-out`.
inline CommandResult cmd_report(const std::string& trace_path, std::ostream& out) {
  using nlohmann::json;
  std::ifstream in(trace_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + trace_path);
  std::map<std::string, std::uint64_t> kinds;
  std::map<std::string, std::uint64_t> event_kinds;
  std::map<std::uint64_t, std::map<std::string, std::uint64_t>> layer_totals;
  std::map<std::uint64_t, std::uint64_t> hops;
  std::map<std::uint64_t, std::uint64_t> classes;
  std::uint64_t steps = 0;
  std::string line;
  std::uint64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(trace_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    std::string type = rec.value("type", "");
    ++kinds[type];
    if (type == "event") ++event_kinds[rec.value("kind", "")];
    else if (type == "verdict") ++classes[rec.value("class", 0u)];
    else if (type == "layer") {
      auto& t = layer_totals[rec.value("layer", 0u)];
      for (const char* k : {"packets", "deliveries", "ops", "generator_ops"}) t[k] += rec.value(k, std::uint64_t{0});
    } else if (type == "hops") hops[rec.value("hop_count", 0u)] += rec.value("replicas", std::uint64_t{0});
    else if (type == "summary") steps += rec.value("steps", std::uint64_t{0});
  }
  json layers = json::array();
  for (const auto& [layer, t] : layer_totals) {
    json row{{"model_layer", layer}};
    for (const auto& [k, v] : t) row[k] = v;
    layers.push_back(std::move(row));
  }
  json hop_rows = json::object();
  for (const auto& [h, n] : hops) hop_rows[std::to_string(h)] = n;
  json class_rows = json::object();
  for (const auto& [c, n] : classes) class_rows[std::to_string(c)] = n;
  json doc{{"format", "netnn-trace-summary"},
           {"records", kinds},
           {"events_by_kind", event_kinds},
           {"verdicts_by_class", class_rows},
           {"layers", layers},
           {"hops", hop_rows},
           {"steps", steps}};
  out << "records: " << lineno << ", inferences: " << kinds["inference"] << ", verdicts: " << kinds["verdict"]
      << ", events: " << kinds["event"] << ", steps: " << steps << '\n';
  for (const auto& row : layers)
    out << "  layer " << row["model_layer"] << ": packets " << row.value("packets", 0ull) << ", ops "
        << row.value("ops", 0ull) << '\n';
  return {0, std::move(doc)};
}

// ---------------------------------------------------------------------------
// fixtures and conformance

inline CommandResult cmd_fixture(const std::string& kind, std::uint64_t seed, const std::string& output,
                                 std::ostream& out) {
  QuantizedModel m;
  if (kind == "canonical") m = canonical_fixture(seed);
  else if (kind == "random") m = random_model(seed, random_shape(seed));
  else if (kind == "separability") m = separability_model();
  else throw std::invalid_argument("unknown fixture kind '" + kind + "' (canonical | random | separability)");
  if (output.empty()) throw std::invalid_argument("fixture needs --output");
  std::ofstream os(output, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + output);
  serialize_model(m, os);
  out << "wrote " << kind << " model (" << m.layers.size() << " layers, input width " << m.input_width << ") to "
      << output << '\n';
  return {0, nlohmann::json{{"kind", kind}, {"layers", m.layers.size()}}};
}

inline CommandResult cmd_synth_trace(const SyntheticOptions& opt, const std::string& output, std::ostream& out) {
  if (output.empty()) throw std::invalid_argument("synth-trace needs --output");
  std::ofstream os(output, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + output);
  os << "# timestamp_ns,src_ip,src_port,dst_ip,dst_port,proto,prefix_hex,label\n";
  std::vector<TracePacket> pkts = synthetic_trace(opt);
  for (const TracePacket& p : pkts) os << format_trace_line(p) << '\n';
  out << "wrote " << pkts.size() << " packets in " << opt.flows << " flows to " << output << '\n';
  return {0, nlohmann::json{{"packets", pkts.size()}}};
}

/// Checks build_input against a vector file:
///   {"vectors": [{"name", "prefix_hex", "packet_count", "min_iat_ns",
///                 "max_iat_ns", "flow_id", "tensor_hex"}]}
/// tensor_hex holds the 568 expected activations, one byte each.
inline CommandResult cmd_conformance(const std::string& path, std::ostream& out) {
  using nlohmann::json;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  json doc = json::parse(in);
  std::uint64_t checked = 0;
  json failures = json::array();
  for (const json& v : doc.at("vectors")) {
    FlowRecord rec;
    rec.packet_count = v.at("packet_count").get<std::uint64_t>();
    rec.min_iat = v.at("min_iat_ns").get<std::uint64_t>();
    rec.max_iat = v.at("max_iat_ns").get<std::uint64_t>();
    rec.flow_id = v.at("flow_id").get<std::uint32_t>();
    TracePacket pkt;
    pkt.raw_prefix = detail::parse_hex(v.at("prefix_hex").get<std::string>());
    std::vector<Activation> got = build_input(rec, pkt, kBitInputWidth);
    std::string hex = to_hex(got);
    if (hex != v.at("tensor_hex").get<std::string>()) failures.push_back(v.value("name", std::to_string(checked)));
    ++checked;
  }
  out << "conformance: " << checked << " vectors, " << failures.size() << " mismatches\n";
  return {failures.empty() ? 0 : 1, json{{"checked", checked}, {"failures", failures}}};
}

}  // namespace netnn
