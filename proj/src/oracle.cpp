#include "bubblecodes/oracle.hpp"

#include <functional>
#include <random>
#include <stdexcept>

namespace bubblecodes {

PlacementInstance random_placement_instance(std::uint64_t seed, int max_nodes, int max_bubbles) {
    if (max_nodes <= 0 || max_bubbles <= 0) {
        throw std::invalid_argument("instance bounds must be positive");
    }
    std::mt19937_64 rng(seed);
    const auto pick = [&rng](int lo, int hi) {
        return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    const std::vector<std::string> cap_pool = {"display", "audio", "input", "compute"};

    PlacementInstance inst;
    const int nodes = pick(0, max_nodes);  // zero candidates is a valid instance
    for (int n = 0; n < nodes; ++n) {
        HostCandidate c;
        c.node_id = "n" + std::to_string(n);
        std::vector<std::string> pool = cap_pool;
        const int caps = pick(1, static_cast<int>(pool.size()));
        for (int i = 0; i < caps; ++i) {
            const int idx = pick(0, static_cast<int>(pool.size()) - 1);
            c.capabilities.insert(CapabilityTag{pool[static_cast<std::size_t>(idx)]});
            pool.erase(pool.begin() + idx);
        }
        c.link_latency_ms = pick(0, 5);  // small range so latency ties occur
        c.permitted = pick(0, 9) < 8;
        inst.candidates.push_back(std::move(c));
    }
    const int bubbles = pick(1, max_bubbles);
    for (int b = 0; b < bubbles; ++b) {
        CapabilitySet reqs;
        std::vector<std::string> pool = cap_pool;
        const int count = pick(1, 2);
        for (int i = 0; i < count; ++i) {
            const int idx = pick(0, static_cast<int>(pool.size()) - 1);
            reqs.insert(CapabilityTag{pool[static_cast<std::size_t>(idx)]});
            pool.erase(pool.begin() + idx);
        }
        inst.requirements.push_back(std::move(reqs));
    }
    return inst;
}

std::vector<NodeId> greedy_placement(const PlacementInstance& instance) {
    std::vector<NodeId> out;
    out.reserve(instance.requirements.size());
    for (const auto& reqs : instance.requirements) {
        out.push_back(select_host(reqs, instance.candidates, instance.source));
    }
    return out;
}

std::vector<NodeId> exhaustive_placement(const PlacementInstance& instance) {
    // feasible hosts per bubble; the source device only as a last resort
    std::vector<std::vector<const HostCandidate*>> feasible;
    for (const auto& reqs : instance.requirements) {
        std::vector<const HostCandidate*> hosts;
        for (const auto& c : instance.candidates) {
            if (c.permitted && qualifies(c.capabilities, reqs)) hosts.push_back(&c);
        }
        feasible.push_back(std::move(hosts));
    }

    std::vector<NodeId> best;
    SimTimeMs best_cost = 0;
    std::vector<NodeId> current;
    SimTimeMs current_cost = 0;

    const std::size_t n = instance.requirements.size();
    const auto consider = [&]() {
        if (best.empty() || current_cost < best_cost ||
            (current_cost == best_cost && current < best)) {
            best = current;
            best_cost = current_cost;
        }
    };
    // depth-first product over feasible sets
    const std::function<void(std::size_t)> walk = [&](std::size_t i) {
        if (i == n) {
            consider();
            return;
        }
        if (feasible[i].empty()) {
            current.push_back(instance.source);
            walk(i + 1);
            current.pop_back();
            return;
        }
        for (const HostCandidate* host : feasible[i]) {
            current.push_back(host->node_id);
            current_cost += host->link_latency_ms;
            walk(i + 1);
            current_cost -= host->link_latency_ms;
            current.pop_back();
        }
    };
    walk(0);
    return best;
}

}  // namespace bubblecodes
