#include <gtest/gtest.h>

#include <sstream>

#include "netnn/fabric.hpp"
#include "netnn/model.hpp"
#include "support.hpp"

using namespace netnn;
using netnn::testing::random_input;

namespace {

FabricConfig capture_config(MultiplyBackend backend = MultiplyBackend::tcam, bool parallel = false) {
  FabricConfig fc;
  fc.switch_config.backend = backend;
  // shift-add conv with kernel 3 and a window-4 pool needs 13 dependent stages
  if (backend == MultiplyBackend::shift_add) fc.switch_config.stage_budget = 16;
  fc.record_events = true;
  fc.capture_activations = true;
  fc.parallel = parallel;
  return fc;
}

std::vector<InferenceRequest> requests_for(const QuantizedModel& m, std::uint64_t seed, std::uint32_t n) {
  std::vector<InferenceRequest> reqs;
  for (std::uint32_t i = 0; i < n; ++i) reqs.push_back({i, random_input(seed * 1000 + i, m.input_width)});
  return reqs;
}

}  // namespace

TEST(Topology, LinkMap) {
  FabricDescriptor d{2, 4, 4};
  auto links = link_map(d);
  EXPECT_EQ(links.size(), 16u);
  std::set<Port> ports;
  for (const Link& l : links) {
    EXPECT_TRUE(ports.insert(l.lower).second) << describe(l.lower);
    EXPECT_TRUE(ports.insert(l.upper).second) << describe(l.upper);
  }
  EXPECT_EQ(ports.size(), 32u);  // every pipeline owns exactly one link
  EXPECT_EQ(clos_link(d, 0, 0, 3).lower, (Port{0, 3}));
  EXPECT_EQ(clos_link(d, 0, 0, 3).upper, (Port{7, 0}));
  EXPECT_TRUE(link_map(FabricDescriptor{1, 4, 4}).empty());
  EXPECT_THROW(validate(FabricDescriptor{2, 3, 4}), FabricError);
  EXPECT_THROW(validate(FabricDescriptor{0, 3, 4}), FabricError);
}

TEST(Routing, TwoTierLaws) {
  EXPECT_EQ(netnn::testing::check_multicast_laws(FabricDescriptor{2, 4, 4}, RoutingMode::two_tier, 2), "");
  EXPECT_EQ(netnn::testing::check_multicast_laws(FabricDescriptor{2, 5, 4}, RoutingMode::two_tier, 2), "");
  EXPECT_EQ(netnn::testing::check_multicast_laws(FabricDescriptor{2, 3, 2}, RoutingMode::two_tier, 2), "");
}

TEST(Routing, ThreeTierLaws) {
  EXPECT_EQ(netnn::testing::check_multicast_laws(FabricDescriptor{3, 4, 4}, RoutingMode::three_tier, 4), "");
  EXPECT_EQ(netnn::testing::check_multicast_laws(FabricDescriptor{3, 5, 4}, RoutingMode::three_tier, 4), "");
}

TEST(Routing, SameTierTwoHops) {
  EXPECT_EQ(netnn::testing::check_same_tier_two_hops(FabricDescriptor{2, 4, 4}), "");
  EXPECT_EQ(netnn::testing::check_same_tier_two_hops(FabricDescriptor{3, 4, 4}), "");
}

TEST(Routing, AlignmentRoute) { EXPECT_EQ(netnn::testing::check_alignment_route(), ""); }

TEST(Routing, SwitchOneToSwitchTwo) {
  FabricDescriptor d{2, 4, 4};
  auto reps = multicast_routes(d, Port{0, 0}, 1, RoutingMode::two_tier);
  ASSERT_EQ(reps.size(), 4u);
  for (std::uint32_t e = 0; e < 4; ++e) {
    EXPECT_EQ(reps[e].destination, (Port{1, e}));
    EXPECT_EQ(reps[e].hops, 2u);
  }
}

TEST(Routing, LocalAndSingleTier) {
  FabricDescriptor one{1, 3, 4};
  auto reps = multicast_routes(one, Port{1, 2}, 1, RoutingMode::local);
  ASSERT_EQ(reps.size(), 4u);
  for (const Replica& r : reps) EXPECT_EQ(r.hops, 0u);
  EXPECT_THROW(multicast_routes(one, Port{0, 0}, 1, RoutingMode::local), FabricError);
  EXPECT_THROW(multicast_routes(one, Port{0, 0}, 1, RoutingMode::two_tier), FabricError);
  EXPECT_FALSE(unicast_route(one, Port{0, 0}, Port{1, 0}).has_value());
  EXPECT_THROW(multicast_routes(FabricDescriptor{2, 4, 4}, Port{4, 0}, 1, RoutingMode::two_tier), FabricError);
}

TEST(Fabric, EmptyInitialListGivesEmptyTrace) {
  QuantizedModel m = random_model(1, random_shape(1));
  Fabric f = build_clos(FabricDescriptor{2, 5, 4});
  f.install(build_plan(m, f.descriptor()));
  RunTrace t = run_until_quiescent(f, {});
  EXPECT_TRUE(t.events.empty());
  EXPECT_TRUE(t.verdicts.empty());
  EXPECT_EQ(t.steps, 0u);
  EXPECT_EQ(f.run({}), RunTrace{});
}

TEST(Fabric, RouteMulticastSetsHopCount) {
  QuantizedModel m = random_model(1, random_shape(1));
  Fabric f = build_clos(FabricDescriptor{2, 4, 4});
  NetPacket p;
  p.value = 9;
  auto out = route_multicast(f, MulticastJob{Port{0, 1}, 2, RoutingMode::two_tier, p});
  ASSERT_EQ(out.size(), 4u);
  for (const auto& [rep, pkt] : out) {
    EXPECT_EQ(pkt.hop_count, 2u);
    EXPECT_EQ(pkt.value, 9);
  }
}

TEST(Fabric, CanonicalSingleInference) {
  QuantizedModel m = canonical_fixture(0);
  FabricDescriptor d{2, 5, 4};
  MappingPlan plan = build_plan(m, d);
  Fabric f(d, [] {
    FabricConfig fc = capture_config();
    fc.record_events = false;
    return fc;
  }());
  f.install(plan);
  std::vector<InferenceRequest> reqs{{0, random_input(5, m.input_width)}};
  for (auto& v : reqs[0].input) v &= 1;  // bit-mode input
  RunTrace t = f.run(reqs);
  ASSERT_EQ(t.verdicts.size(), 1u);
  EXPECT_EQ(netnn::testing::compare_with_reference(m, reqs, t), "");
  EXPECT_EQ(netnn::testing::compare_resources(m, plan, f, t, MultiplyBackend::tcam), "");
  EXPECT_EQ(f.residual_state(), 0u);
}

TEST(Fabric, InterleavedFlowsAreIsolated) {
  QuantizedModel m = random_model(4, ModelShape{24, {ConvSpec{3, 3, 1}, PoolSpec{2}, DenseSpec{7}, DenseSpec{3}}});
  FabricDescriptor d{2, 5, 4};
  Fabric f(d, capture_config());
  f.install(build_plan(m, d));
  std::vector<InferenceRequest> reqs{{11, random_input(1, 24)}, {42, random_input(2, 24)}};
  std::vector<NetPacket> a = f.generate_input(11, reqs[0].input);
  std::vector<NetPacket> b = f.generate_input(42, reqs[1].input);
  std::vector<NetPacket> mixed;
  for (std::size_t i = 0; i < std::max(a.size(), b.size()); ++i) {
    if (i < b.size()) mixed.push_back(b[b.size() - 1 - i]);
    if (i < a.size()) mixed.push_back(a[i]);
  }
  RunTrace t = f.run_until_quiescent(mixed);
  EXPECT_EQ(netnn::testing::compare_with_reference(m, reqs, t), "");
  EXPECT_EQ(f.residual_state(), 0u);
}

TEST(Fabric, RandomModelsMatchReference) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    for (MultiplyBackend backend : {MultiplyBackend::tcam, MultiplyBackend::shift_add}) {
      FabricDescriptor d{2, 5, seed % 2 == 0 ? 4u : 3u};
      Fabric f(d, capture_config(backend));
      f.install(build_plan(m, d));
      auto reqs = requests_for(m, seed, 10);
      RunTrace t = f.run(reqs);
      ASSERT_EQ(netnn::testing::compare_with_reference(m, reqs, t), "") << "seed " << seed;
      ASSERT_EQ(f.residual_state(), 0u);
      for (const auto& [layer, tally] : t.layers) ASSERT_EQ(tally.deliveries, tally.packets * d.pipelines_per_switch);
    }
  }
}

TEST(Fabric, ThreeTierAndLocalRoutingMatchReference) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    FabricDescriptor d{3, 5, 4};
    Fabric f(d, capture_config());
    MappingPlan plan = build_plan(m, d, PlanOptions{RoutingMode::three_tier});
    f.install(plan);
    auto reqs = requests_for(m, seed, 4);
    RunTrace t = f.run(reqs);
    ASSERT_EQ(netnn::testing::compare_with_reference(m, reqs, t), "") << "seed " << seed;
    for (const auto& [hops, n] : t.hop_histogram) EXPECT_TRUE(hops == 1 || hops == 4) << hops;
  }
  QuantizedModel single = random_model(3, ModelShape{10, {DenseSpec{4}}});
  FabricDescriptor one{1, 1, 4};
  Fabric f(one, capture_config());
  f.install(build_plan(single, one));
  auto reqs = requests_for(single, 3, 3);
  EXPECT_EQ(netnn::testing::compare_with_reference(single, reqs, f.run(reqs)), "");
}

TEST(Fabric, ResourcesMatchSimulatorTallies) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    for (MultiplyBackend backend : {MultiplyBackend::tcam, MultiplyBackend::shift_add}) {
      FabricDescriptor d{2, 5, 4};
      MappingPlan plan = build_plan(m, d);
      Fabric f(d, capture_config(backend));
      f.install(plan);
      RunTrace t = f.run(requests_for(m, seed, 1));
      ASSERT_EQ(netnn::testing::compare_resources(m, plan, f, t, backend), "") << "seed " << seed;
    }
  }
}

TEST(Fabric, DeterministicAndParallelEqualsSerial) {
  QuantizedModel m = random_model(8, random_shape(8));
  FabricDescriptor d{2, 5, 4};
  MappingPlan plan = build_plan(m, d);
  auto run = [&](bool parallel) {
    Fabric f(d, capture_config(MultiplyBackend::tcam, parallel));
    f.install(plan);
    return f.run(requests_for(m, 8, 6));
  };
  RunTrace a = run(false);
  RunTrace b = run(false);
  RunTrace c = run(true);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
  std::ostringstream sa, sc;
  a.write_jsonl(sa);
  c.write_jsonl(sc);
  EXPECT_EQ(sa.str(), sc.str());
}

TEST(Fabric, LayerIdsNeverDecrease) {
  QuantizedModel m = random_model(12, ModelShape{20, {ConvSpec{2, 3, 1}, PoolSpec{2}, DenseSpec{6}, DenseSpec{2}}});
  FabricDescriptor d{2, 5, 4};
  Fabric f(d, capture_config());
  f.install(build_plan(m, d));
  RunTrace t = f.run(requests_for(m, 12, 2));
  std::map<std::uint32_t, std::uint32_t> last_layer;
  std::uint64_t last_step = 0;
  for (const TraceEvent& e : t.events) {
    EXPECT_GE(e.step, last_step);
    last_step = e.step;
    auto [it, fresh] = last_layer.try_emplace(e.flow, e.layer);
    EXPECT_GE(e.layer, it->second);
    it->second = e.layer;
  }
  EXPECT_FALSE(t.events.empty());
}

TEST(Fabric, LivelockGuard) {
  QuantizedModel m = random_model(5, random_shape(5));
  FabricDescriptor d{2, 5, 4};
  FabricConfig fc;
  fc.max_steps = 1;
  Fabric f(d, fc);
  f.install(build_plan(m, d));
  EXPECT_THROW(f.run(requests_for(m, 5, 1)), LivelockError);
}

TEST(Fabric, ShiftAddOverrunsDefaultBudget) {
  QuantizedModel m = random_model(1, ModelShape{18, {ConvSpec{2, 3, 1}, PoolSpec{4}, DenseSpec{2}}});
  FabricDescriptor d{2, 5, 4};
  FabricConfig fc;
  fc.switch_config.backend = MultiplyBackend::shift_add;
  Fabric f(d, fc);
  f.install(build_plan(m, d));
  EXPECT_THROW(f.run(requests_for(m, 1, 1)), SwitchError);
  fc.switch_config.backend = MultiplyBackend::tcam;
  Fabric g(d, fc);
  g.install(build_plan(m, d));
  EXPECT_EQ(g.run(requests_for(m, 1, 1)).verdicts.size(), 1u);
}

TEST(Fabric, InstallErrors) {
  QuantizedModel m = random_model(5, ModelShape{8, {DenseSpec{4}, DenseSpec{2}}});
  Fabric f(FabricDescriptor{2, 5, 4});
  EXPECT_THROW(f.install(build_plan(m, FabricDescriptor{2, 4, 4})), FabricError);
  f.install(build_plan(m, FabricDescriptor{2, 5, 4}));
  EXPECT_THROW(f.install(build_plan(m, FabricDescriptor{2, 5, 4})), FabricError);
  EXPECT_THROW(f.generate_input(0, std::vector<Activation>(m.input_width + 1)), std::invalid_argument);
}

TEST(Fabric, TraceJsonl) {
  QuantizedModel m = random_model(6, random_shape(6));
  FabricDescriptor d{2, 5, 4};
  Fabric f(d, capture_config());
  f.install(build_plan(m, d));
  RunTrace t = f.run(requests_for(m, 6, 2));
  std::ostringstream os;
  t.write_jsonl(os);
  std::istringstream in(os.str());
  std::string line;
  std::map<std::string, int> types;
  while (std::getline(in, line)) ++types[nlohmann::json::parse(line).at("type").get<std::string>()];
  EXPECT_EQ(types["verdict"], 2);
  EXPECT_EQ(types["summary"], 1);
  EXPECT_EQ(static_cast<std::size_t>(types["event"]), t.events.size());
}
