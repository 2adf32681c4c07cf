#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace bubblecodes {

using NodeId = std::string;
using ZoneId = std::string;
using AppId = std::string;
using BubbleId = std::string;
using UserId = std::string;
using SimTimeMs = std::int64_t;

/// Lowercase capability token, e.g. "display", "audio", "input", "compute".
/// Must match [a-z][a-z0-9_]*.
struct CapabilityTag {
    std::string name;

    CapabilityTag() = default;
    explicit CapabilityTag(std::string n);

    auto operator<=>(const CapabilityTag&) const = default;
};

bool is_valid_capability_name(const std::string& name);

using CapabilitySet = std::set<CapabilityTag>;

/// Builds a capability set from names; throws std::invalid_argument on a bad token.
CapabilitySet caps(std::initializer_list<const char*> names);

/// A node known to the environment. link_latency_ms is the one-way
/// communication time between this node and the source device.
struct NodeProfile {
    NodeId node_id;
    ZoneId zone_id;
    CapabilitySet capabilities;
    SimTimeMs link_latency_ms = 0;

    bool operator==(const NodeProfile&) const = default;
};

/// A user's privilege claim over a node. Higher priority is stronger; a new
/// claim replaces an existing one only if strictly higher.
struct UserClaim {
    UserId user_id;
    NodeId node_id;
    int priority = 0;

    bool operator==(const UserClaim&) const = default;
};

enum class ListenMode { push, pull, hybrid };

const char* to_string(ListenMode m);
std::optional<ListenMode> listen_mode_from_string(const std::string& s);

/// One partitionable block of the application, as declared by the developer:
/// its identity, the minimum capabilities a hosting node must have, and an
/// opaque label standing in for the code block itself.
struct BubbleSpec {
    BubbleId bubble_id;
    CapabilitySet requirements;
    std::string payload_tag;
    ListenMode listen = ListenMode::hybrid;

    bool operator==(const BubbleSpec&) const = default;
};

/// The developer-declared partition plan for one application. Bubble order is
/// the deterministic partitioning order.
struct AppManifest {
    AppId app_id;
    NodeId source_device;
    std::vector<BubbleSpec> bubbles;

    const BubbleSpec* find(const BubbleId& id) const;
    bool operator==(const AppManifest&) const = default;
};

/// Throws std::invalid_argument when a manifest violates its invariants
/// (no bubbles, duplicate bubble ids, empty requirements).
void validate_manifest(const AppManifest& m);

enum class EntryStatus { active, retracting, completed };

const char* to_string(EntryStatus s);
std::optional<EntryStatus> entry_status_from_string(const std::string& s);

struct MapEntry {
    BubbleId bubble_id;
    NodeId active_host;  // equals the source device when retracted
    EntryStatus status = EntryStatus::active;

    bool operator==(const MapEntry&) const = default;
};

struct UnusedNode {
    NodeId node_id;
    CapabilitySet capabilities;
    SimTimeMs link_latency_ms = 0;

    bool operator==(const UnusedNode&) const = default;
};

/// The replicated registry of bubble placements plus all available-but-unused
/// nodes. C0 is the sole version sequencer; versions strictly increase across
/// successive states of the same app. Entries are kept sorted by bubble_id and
/// unused nodes by node_id so equal maps have one representation.
struct BubblesMap {
    AppId app_id;
    std::uint64_t version = 0;
    std::vector<MapEntry> entries;
    std::vector<UnusedNode> unused_nodes;

    const MapEntry* find(const BubbleId& id) const;
    MapEntry* find(const BubbleId& id);
    void sort_canonical();

    bool operator==(const BubblesMap&) const = default;
};

/// A context variable as seen by bubbles; ctx_version is monotonic per key.
struct ContextVariable {
    std::string key;
    std::string value;
    std::uint64_t ctx_version = 0;

    bool operator==(const ContextVariable&) const = default;
};

/// True iff every required capability is present on the node.
bool qualifies(const CapabilitySet& node_caps, const CapabilitySet& requirements);

/// A placement candidate as seen at selection time.
struct HostCandidate {
    NodeId node_id;
    CapabilitySet capabilities;
    SimTimeMs link_latency_ms = 0;
    bool permitted = false;

    bool operator==(const HostCandidate&) const = default;
};

/// Picks the permitted, qualifying candidate with minimum latency, ties broken
/// by lexicographically smallest node_id. Returns `source` when no candidate
/// is both permitted and qualifying.
NodeId select_host(const CapabilitySet& requirements,
                   const std::vector<HostCandidate>& candidates,
                   const NodeId& source);

/// Last-writer-wins on C0-sequenced versions: returns `update` if its version
/// is strictly higher, else `map` unchanged. Throws std::invalid_argument on
/// mismatched app ids.
BubblesMap map_apply(const BubblesMap& map, const BubblesMap& update);

bool is_valid_id(const std::string& id);

/// "bubble:host:status,..." in bubble order, or "-" when empty.
std::string render_map_entries(const BubblesMap& map);
/// "node,..." in node order, or "-" when empty.
std::string render_map_unused(const BubblesMap& map);

}  // namespace bubblecodes
