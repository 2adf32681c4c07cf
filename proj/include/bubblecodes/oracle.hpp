#pragma once

#include <cstdint>
#include <vector>

#include "bubblecodes/model.hpp"

namespace bubblecodes {

/// A self-contained placement problem: bubbles with requirements and a
/// candidate pool with permissions, latencies and capabilities.
struct PlacementInstance {
    NodeId source = "src";
    std::vector<CapabilitySet> requirements;  // one per bubble, in order
    std::vector<HostCandidate> candidates;
};

/// Deterministic random instance for the given seed.
PlacementInstance random_placement_instance(std::uint64_t seed, int max_nodes, int max_bubbles);

/// The protocol's rule: per-bubble select_host in declaration order.
std::vector<NodeId> greedy_placement(const PlacementInstance& instance);

/// Independent oracle: enumerates every assignment of bubbles to feasible
/// hosts (the source only when no candidate qualifies), minimizing total
/// latency with the lexicographically smallest assignment vector breaking
/// ties. Valid because nodes have no capacity limit, so the optimum
/// decomposes per bubble.
std::vector<NodeId> exhaustive_placement(const PlacementInstance& instance);

}  // namespace bubblecodes
