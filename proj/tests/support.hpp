#pragma once

// Independent checks shared by the unit tests and the acceptance runner.
// Each returns an empty string on success, otherwise the first violation.

#include <deque>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "netnn/fabric.hpp"
#include "netnn/mapper.hpp"
#include "netnn/reference.hpp"

namespace netnn::testing {

inline std::vector<Activation> random_input(std::uint64_t seed, std::uint32_t width) {
  FixtureRng rng(seed);
  std::vector<Activation> in(width);
  for (auto& v : in) v = static_cast<Activation>(rng.uniform(0, 255));
  return in;
}

inline std::string port_name(Port p) { return describe(p); }

/// A route must alternate ingress -> egress inside one switch and
/// egress -> ingress across a physical link; hops count the links.
inline std::string check_path(const FabricDescriptor& d, const Replica& r, Port source) {
  std::set<std::pair<Port, Port>> links;
  for (const Link& l : link_map(d)) {
    links.insert({l.lower, l.upper});
    links.insert({l.upper, l.lower});
  }
  if (r.path.empty() || r.path.front().port != source || r.path.front().egress) return "path does not start at source";
  if (r.path.back().port != r.destination || r.path.back().egress) return "path does not end at destination ingress";
  std::uint32_t hops = 0;
  for (std::size_t i = 0; i + 1 < r.path.size(); ++i) {
    const PathVisit& a = r.path[i];
    const PathVisit& b = r.path[i + 1];
    if (!a.egress && b.egress) {
      if (a.port.sw != b.port.sw) return "traffic manager step leaves the switch at " + port_name(a.port);
    } else if (a.egress && !b.egress) {
      if (a.port == b.port) continue;  // recirculation into the same pipeline, no link
      if (!links.count({a.port, b.port})) return "no link " + port_name(a.port) + " -> " + port_name(b.port);
      ++hops;
    } else {
      return "path does not alternate ingress/egress at " + port_name(a.port);
    }
  }
  if (hops != r.hops) return "hop count " + std::to_string(r.hops) + " != links traversed " + std::to_string(hops);
  return {};
}

/// Completeness, equal hops and path validity for every (source port,
/// destination switch) pair of the lowest tier.
inline std::string check_multicast_laws(const FabricDescriptor& d, RoutingMode mode, std::uint32_t expected_hops,
                                        std::uint64_t* jobs = nullptr) {
  const std::uint32_t P = d.pipelines_per_switch;
  for (std::uint32_t a = 0; a < d.switches_per_tier; ++a)
    for (std::uint32_t q = 0; q < P; ++q)
      for (std::uint32_t b = 0; b < d.switches_per_tier; ++b) {
        Port src{d.switch_id(0, a), q};
        std::uint32_t dst = d.switch_id(0, b);
        std::vector<Replica> reps = multicast_routes(d, src, dst, mode);
        if (jobs) ++*jobs;
        std::string where = port_name(src) + " -> switch " + std::to_string(dst + 1) + ": ";
        std::vector<int> got(P, 0);
        for (const Replica& r : reps) {
          if (r.destination.sw != dst) return where + "replica lands on the wrong switch";
          ++got.at(r.destination.pipeline);
          if (r.hops != reps.front().hops) return where + "unequal hop counts";
          if (std::string e = check_path(d, r, src); !e.empty()) return where + e;
        }
        for (std::uint32_t e = 0; e < P; ++e)
          if (got[e] != 1) return where + "pipeline " + std::to_string(e + 1) + " receives " + std::to_string(got[e]) + " copies";
        std::uint32_t want = a == b ? 0 : expected_hops;
        if (reps.front().hops != want)
          return where + "hop count " + std::to_string(reps.front().hops) + " != " + std::to_string(want);
      }
  return {};
}

/// Switch-graph distance between distinct switches of one tier is exactly 2,
/// and the cheapest port-to-port unicast route between them takes 2 links.
inline std::string check_same_tier_two_hops(const FabricDescriptor& d) {
  const std::uint32_t n = d.switch_count();
  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const Link& l : link_map(d)) {
    adj[l.lower.sw].push_back(l.upper.sw);
    adj[l.upper.sw].push_back(l.lower.sw);
  }
  for (std::uint32_t s = 0; s < n; ++s) {
    std::vector<int> dist(n, -1);
    std::deque<std::uint32_t> q{s};
    dist[s] = 0;
    while (!q.empty()) {
      auto u = q.front();
      q.pop_front();
      for (auto v : adj[u])
        if (dist[v] < 0) {
          dist[v] = dist[u] + 1;
          q.push_back(v);
        }
    }
    for (std::uint32_t t = 0; t < n; ++t)
      if (t != s && d.tier_of(t) == d.tier_of(s) && dist[t] != 2)
        return "switch " + std::to_string(s + 1) + " to switch " + std::to_string(t + 1) + " is " +
               std::to_string(dist[t]) + " hops";
  }
  const std::uint32_t P = d.pipelines_per_switch;
  for (std::uint32_t s = 0; s < n; ++s)
    for (std::uint32_t t = 0; t < n; ++t) {
      if (s == t || d.tier_of(s) != d.tier_of(t)) continue;
      for (std::uint32_t p = 0; p < P; ++p)
        for (std::uint32_t r = 0; r < P; ++r) {
          auto route = unicast_route(d, Port{s, p}, Port{t, r});
          if (!route) return "no route " + port_name({s, p}) + " -> " + port_name({t, r});
          if (route->hops != 2)
            return port_name({s, p}) + " -> " + port_name({t, r}) + " takes " + std::to_string(route->hops) + " hops";
          if (std::string e = check_path(d, *route, Port{s, p}); !e.empty()) return e;
        }
    }
  return {};
}

/// The quoted middle-switch route: pipeline 1 of Switch 1 reaches pipeline 1
/// of Switch 8 only through pipeline 4 of Switch 1 or pipeline 4 of Switch 9.
inline std::string check_alignment_route() {
  FabricDescriptor d{3, 4, 4};
  const Port s1p1{0, 0}, s1p4{0, 3}, s8p1{7, 0}, s9p4{8, 3};
  if (neighbours(d, s8p1) != std::vector<Port>{s1p4, s9p4}) return "pipeline 1 of Switch 8 is not wired to S1p4 and S9p4";
  std::vector<Port> from_s1p1 = neighbours(d, s1p1);
  if (std::find(from_s1p1.begin(), from_s1p1.end(), s8p1) != from_s1p1.end()) return "unexpected direct link S1p1 -> S8p1";
  auto via_tm = unicast_route(d, s1p1, s8p1, true);
  if (!via_tm) return "no route with the source traffic manager";
  auto last_egress = [](const Replica& r) { return r.path[r.path.size() - 2].port; };
  if (last_egress(*via_tm) != s1p4 || via_tm->hops != 1) return "source-TM route does not leave via S1p4";
  auto via_middle = unicast_route(d, s1p1, s8p1, false);
  if (!via_middle) return "no route without the source traffic manager";
  if (last_egress(*via_middle) != s9p4) return "middle-switch route does not arrive via S9p4";
  if (std::string e = check_path(d, *via_middle, s1p1); !e.empty()) return e;
  return {};
}

/// Fabric verdicts and every captured layer value against the reference.
inline std::string compare_with_reference(const QuantizedModel& m, const std::vector<InferenceRequest>& reqs,
                                          const RunTrace& trace) {
  if (trace.verdicts.size() != reqs.size())
    return std::to_string(trace.verdicts.size()) + " verdicts for " + std::to_string(reqs.size()) + " inputs";
  std::map<std::uint32_t, std::uint32_t> verdicts;
  for (const Verdict& v : trace.verdicts)
    if (!verdicts.emplace(v.flow, v.class_index).second) return "two verdicts for tag " + std::to_string(v.flow);
  for (const InferenceRequest& r : reqs) {
    LayerTrace ref = infer_trace(m, r.input);
    if (verdicts.at(r.flow) != ref.result.argmax) return "verdict differs for tag " + std::to_string(r.flow);
    for (std::uint32_t li = 0; li < m.layers.size(); ++li) {
      std::vector<std::int32_t> want;
      if (li + 1 < m.layers.size()) want.assign(ref.hidden[li].begin(), ref.hidden[li].end());
      else want = ref.result.scores;
      auto it = trace.activations.find({r.flow, li});
      if (it == trace.activations.end()) return "layer " + std::to_string(li) + " not captured";
      if (it->second != want) return "layer " + std::to_string(li) + " differs for tag " + std::to_string(r.flow);
    }
  }
  return {};
}

/// Closed-form resources against the simulator's tallies for one inference.
inline std::string compare_resources(const QuantizedModel& m, const MappingPlan& plan, const Fabric& fabric,
                                     const RunTrace& one, MultiplyBackend backend) {
  ResourceReport rep = estimate_resources(m, plan, backend);
  for (std::size_t i = 0; i < rep.layers.size(); ++i) {
    const LayerResources& r = rep.layers[i];
    auto it = one.layers.find(r.model_layer);
    if (it == one.layers.end()) return r.name + ": no tally";
    const LayerTally& t = it->second;
    std::ostringstream why;
    if (r.packets != t.packets) why << " packets " << r.packets << " vs " << t.packets;
    if (r.deliveries != t.deliveries) why << " deliveries " << r.deliveries << " vs " << t.deliveries;
    if (r.total_ops != t.ops.total()) why << " ops " << r.total_ops << " vs " << t.ops.total();
    if (r.generator_ops != t.generator_ops) why << " generator ops " << r.generator_ops << " vs " << t.generator_ops;
    std::uint64_t mem = fabric.switch_state(plan.placements[i].switch_id).memory_bytes(r.model_layer);
    if (r.memory_bytes != mem) why << " memory " << r.memory_bytes << " vs " << mem;
    if (!why.str().empty()) return r.name + ":" + why.str();
  }
  return {};
}

}  // namespace netnn::testing
