#include <gtest/gtest.h>

#include <set>

#include "netnn/mapper.hpp"

using namespace netnn;

namespace {

FabricDescriptor default_fabric() { return FabricDescriptor{2, 5, 4}; }

PlanErrc plan_code(const QuantizedModel& m, const FabricDescriptor& f, PlanOptions o = {}) {
  try {
    build_plan(m, f, o);
  } catch (const PlanError& e) {
    return e.code();
  }
  ADD_FAILURE() << "plan unexpectedly succeeded";
  return PlanErrc::unsupported;
}

Weight model_weight(const QuantizedModel& m, const Placement& pl, std::uint32_t unit, std::uint32_t j) {
  if (pl.kind == LayerKind::conv) return std::get<Conv1D>(m.layers[pl.model_layer]).weight(unit, j);
  return std::get<Dense>(m.layers[pl.model_layer]).weight(unit, j);
}

}  // namespace

TEST(WeightIndex, Examples) {
  TableDims dims{2, 1, 3};
  EXPECT_EQ(weight_index(1, 0, 2, dims, KeyScheme::linear), 5u);
  EXPECT_EQ(weight_index(1, 0, 2, dims, KeyScheme::hashed), weight_index(1, 0, 2, dims, KeyScheme::hashed));
  TableDims big{64, 1, 3};
  std::set<std::uint32_t> keys;
  for (std::uint32_t f = 0; f < 64; ++f)
    for (std::uint32_t j = 0; j < 3; ++j) keys.insert(weight_index(f, 0, j, big, KeyScheme::hashed));
  EXPECT_EQ(keys.size(), 192u);
  EXPECT_TRUE(hashed_keys_injective(big));
}

TEST(WeightIndex, LinearIsBijective) {
  TableDims dims{5, 3, 7};
  std::set<std::uint32_t> keys;
  for (std::uint32_t f = 0; f < 5; ++f)
    for (std::uint32_t i = 0; i < 3; ++i)
      for (std::uint32_t j = 0; j < 7; ++j) keys.insert(linear_key(f, i, j, dims));
  EXPECT_EQ(keys.size(), 105u);
  EXPECT_EQ(*keys.rbegin(), 104u);
}

TEST(WeightTable, FindAndOverwrite) {
  WeightTable t;
  t.insert_all({{900, 3}, {7, -2}, {123456, 127}});
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.find(7), Weight{-2});
  EXPECT_EQ(t.find(123456), Weight{127});
  EXPECT_FALSE(t.find(8).has_value());
  EXPECT_TRUE(t.overwrite(900, -1));
  EXPECT_EQ(t.find(900), Weight{-1});
  EXPECT_FALSE(t.overwrite(1, 0));
}

TEST(Plan, CanonicalPartitions) {
  QuantizedModel m = canonical_fixture(0);
  MappingPlan plan = build_plan(m, default_fabric());
  ASSERT_EQ(plan.placements.size(), 5u);
  const char* names[] = {"Conv1", "Conv2", "Dense1", "Dense2", "Dense3"};
  for (std::uint32_t i = 0; i < 5; ++i) {
    EXPECT_EQ(plan.placements[i].name, names[i]);
    EXPECT_EQ(plan.placements[i].switch_id, i);
  }
  for (std::uint32_t p = 0; p < 4; ++p) {
    EXPECT_EQ(plan.placements[0].partitions[p].size(), 8u);
    EXPECT_EQ(plan.placements[1].partitions[p].size(), 16u);
  }
  EXPECT_EQ(plan.placements[0].pool_window, 2u);
  EXPECT_EQ(plan.placements[0].pool_layer, 1u);
  EXPECT_EQ(plan.placements[1].pool_layer, 3u);
  EXPECT_TRUE(plan.placements[4].is_final);
  EXPECT_EQ(plan.transitions[0].mode, RoutingMode::host);
  for (std::uint32_t i = 1; i < 5; ++i) EXPECT_EQ(plan.transitions[i].mode, RoutingMode::two_tier);

  ResourceReport r = estimate_resources(m, plan);
  ASSERT_EQ(r.layers.size(), 5u);
  const std::uint64_t packets[] = {566, 9054, 289728, 50, 100};
  const std::uint64_t weights[] = {32 * 3, 64 * 3, 289728ull * 50, 50 * 100, 100 * 2};
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(r.layers[i].packets, packets[i]) << names[i];
    EXPECT_EQ(r.layers[i].weight_bytes, weights[i]) << names[i];
    EXPECT_EQ(r.layers[i].deliveries, packets[i] * 4);
  }
  EXPECT_EQ(r.product_table_bytes_per_pipeline, 131072u);
}

TEST(Plan, TablesHoldExactlyTheModelWeights) {
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    for (std::uint32_t pipes : {1u, 3u, 4u}) {
      FabricDescriptor f{2, 5, pipes};
      MappingPlan plan = build_plan(m, f);
      for (const Placement& pl : plan.placements) {
        // every unit owned exactly once, balanced within one
        std::vector<int> owners(pl.units, 0);
        std::size_t lo = SIZE_MAX, hi = 0;
        for (std::uint32_t p = 0; p < pipes; ++p) {
          lo = std::min(lo, pl.partitions[p].size());
          hi = std::max(hi, pl.partitions[p].size());
          const PipelineTables& t = plan.tables[pl.ordinal][p];
          ASSERT_EQ(t.weights.size(), pl.partitions[p].size() * pl.dims.width);
          ASSERT_EQ(t.biases.size(), pl.partitions[p].size());
          for (std::uint32_t u : pl.partitions[p]) {
            ++owners.at(u);
            EXPECT_EQ(u % pipes, p);
            for (std::uint32_t j = 0; j < pl.dims.width; ++j)
              ASSERT_EQ(t.weights.find(weight_index(u, 0, j, pl.dims, pl.key_scheme)), model_weight(m, pl, u, j));
          }
        }
        EXPECT_LE(hi - lo, 1u);
        for (int c : owners) ASSERT_EQ(c, 1) << "seed " << seed;
        EXPECT_EQ(pl.key_scheme == KeyScheme::hashed, hashed_keys_injective(pl.dims));
      }
    }
  }
}

TEST(Plan, Errors) {
  QuantizedModel canon = canonical_fixture(0);
  EXPECT_EQ(plan_code(canon, FabricDescriptor{2, 4, 4}), PlanErrc::insufficient_switches);
  QuantizedModel two = random_model(1, ModelShape{8, {DenseSpec{4}, DenseSpec{2}}});
  EXPECT_EQ(plan_code(two, FabricDescriptor{1, 1, 4}), PlanErrc::insufficient_switches);
  EXPECT_EQ(plan_code(two, FabricDescriptor{1, 4, 4}), PlanErrc::unreachable);
  EXPECT_EQ(plan_code(two, FabricDescriptor{2, 4, 4}, PlanOptions{RoutingMode::three_tier}), PlanErrc::mode_mismatch);
  EXPECT_EQ(plan_code(two, FabricDescriptor{1, 4, 4}, PlanOptions{RoutingMode::two_tier}), PlanErrc::mode_mismatch);
  EXPECT_THROW(build_plan(two, FabricDescriptor{2, 3, 4}), FabricError);  // not a Clos
}

TEST(Plan, SingleLayerOnOneSwitch) {
  QuantizedModel one = random_model(2, ModelShape{8, {DenseSpec{3}}});
  MappingPlan plan = build_plan(one, FabricDescriptor{1, 1, 4});
  EXPECT_EQ(plan.routing, RoutingMode::local);
  ASSERT_EQ(plan.placements.size(), 1u);
}

TEST(Plan, Json) {
  QuantizedModel m = random_model(3, ModelShape{12, {ConvSpec{4, 3, 1}, PoolSpec{2}, DenseSpec{5}, DenseSpec{2}}});
  MappingPlan plan = build_plan(m, default_fabric());
  auto doc = plan_to_json(plan);
  EXPECT_EQ(doc["format"], "netnn-plan");
  ASSERT_EQ(doc["layers"].size(), 3u);
  EXPECT_EQ(doc["layers"][0]["pool"]["window"], 2);
  EXPECT_EQ(doc["transitions"][1]["mode"], to_string(RoutingMode::two_tier));
  EXPECT_EQ(doc["transitions"][0]["from"], "extractor");
  auto res = resources_to_json(estimate_resources(m, plan));
  EXPECT_EQ(res["layers"].size(), 3u);
  EXPECT_FALSE(res["convention"].get<std::string>().empty());
}
