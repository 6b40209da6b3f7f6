#pragma once

// Clos fabric description and its fixed wiring.
//
// Switch ids are tier-major: tier t, index a -> t * switches_per_tier + a.
// Between adjacent tiers every lower switch a has one link to every upper
// switch u. The link leaves switch a on pipeline (u mod P) and lands on
// upper switch u at pipeline (a mod P). With four switches and four pipelines
// per tier this is the transpose wiring: Switch 1 pipeline 4 <-> Switch 8
// pipeline 1 (1-based).

#include <algorithm>
#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace netnn {

class FabricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FabricDescriptor {
  std::uint32_t tiers = 2;
  std::uint32_t switches_per_tier = 5;
  std::uint32_t pipelines_per_switch = 4;

  std::uint32_t switch_count() const { return tiers * switches_per_tier; }
  std::uint32_t switch_id(std::uint32_t tier, std::uint32_t index) const { return tier * switches_per_tier + index; }
  std::uint32_t tier_of(std::uint32_t sw) const { return sw / switches_per_tier; }
  std::uint32_t index_of(std::uint32_t sw) const { return sw % switches_per_tier; }

  bool operator==(const FabricDescriptor&) const = default;
};

inline void validate(const FabricDescriptor& desc) {
  if (desc.tiers == 0 || desc.switches_per_tier == 0 || desc.pipelines_per_switch == 0)
    throw FabricError("fabric: tiers, switches_per_tier and pipelines_per_switch must be >= 1");
  if (desc.pipelines_per_switch > 64) throw FabricError("fabric: at most 64 pipelines per switch");
  if (desc.tiers > 1 && desc.switches_per_tier < desc.pipelines_per_switch)
    throw FabricError("fabric: Clos property needs switches_per_tier (" + std::to_string(desc.switches_per_tier) +
                      ") >= pipelines_per_switch (" + std::to_string(desc.pipelines_per_switch) +
                      ") so every pipeline owns an uplink");
}

struct Port {
  std::uint32_t sw = 0;
  std::uint32_t pipeline = 0;

  auto operator<=>(const Port&) const = default;
};

struct Link {
  Port lower;
  Port upper;

  bool operator==(const Link&) const = default;
};

inline std::string describe(const Port& p) {
  return "Switch " + std::to_string(p.sw + 1) + " pipeline " + std::to_string(p.pipeline + 1);
}

/// Link between lower switch (tier, a) and upper switch (tier + 1, u).
inline Link clos_link(const FabricDescriptor& desc, std::uint32_t lower_tier, std::uint32_t a, std::uint32_t u) {
  std::uint32_t p = desc.pipelines_per_switch;
  return Link{Port{desc.switch_id(lower_tier, a), u % p}, Port{desc.switch_id(lower_tier + 1, u), a % p}};
}

/// Every inter-tier link, ordered by (lower tier, lower switch, upper switch).
inline std::vector<Link> link_map(const FabricDescriptor& desc) {
  validate(desc);
  std::vector<Link> links;
  for (std::uint32_t t = 0; t + 1 < desc.tiers; ++t)
    for (std::uint32_t a = 0; a < desc.switches_per_tier; ++a)
      for (std::uint32_t u = 0; u < desc.switches_per_tier; ++u) links.push_back(clos_link(desc, t, a, u));
  return links;
}

/// Ports directly linked to `port` (both directions), in ascending order.
inline std::vector<Port> neighbours(const FabricDescriptor& desc, Port port) {
  std::vector<Port> out;
  std::uint32_t tier = desc.tier_of(port.sw);
  std::uint32_t index = desc.index_of(port.sw);
  std::uint32_t p = desc.pipelines_per_switch;
  for (std::uint32_t peer = 0; peer < desc.switches_per_tier; ++peer) {
    if (peer % p != port.pipeline) continue;
    if (tier > 0) out.push_back(clos_link(desc, tier - 1, peer, index).lower);
    if (tier + 1 < desc.tiers) out.push_back(clos_link(desc, tier, index, peer).upper);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace netnn
