#include "bubblecodes/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace bubblecodes {

bool is_valid_capability_name(const std::string& name) {
    if (name.empty()) return false;
    if (name[0] < 'a' || name[0] > 'z') return false;
    for (char c : name) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
        if (!ok) return false;
    }
    return true;
}

CapabilityTag::CapabilityTag(std::string n) : name(std::move(n)) {
    if (!is_valid_capability_name(name)) {
        throw std::invalid_argument("bad capability tag: '" + name + "'");
    }
}

CapabilitySet caps(std::initializer_list<const char*> names) {
    CapabilitySet out;
    for (const char* n : names) out.insert(CapabilityTag{std::string(n)});
    return out;
}

const char* to_string(ListenMode m) {
    switch (m) {
        case ListenMode::push: return "push";
        case ListenMode::pull: return "pull";
        case ListenMode::hybrid: return "hybrid";
    }
    return "hybrid";
}

std::optional<ListenMode> listen_mode_from_string(const std::string& s) {
    if (s == "push") return ListenMode::push;
    if (s == "pull") return ListenMode::pull;
    if (s == "hybrid") return ListenMode::hybrid;
    return std::nullopt;
}

const BubbleSpec* AppManifest::find(const BubbleId& id) const {
    for (const auto& b : bubbles) {
        if (b.bubble_id == id) return &b;
    }
    return nullptr;
}

void validate_manifest(const AppManifest& m) {
    if (!is_valid_id(m.app_id)) throw std::invalid_argument("bad app id: '" + m.app_id + "'");
    if (!is_valid_id(m.source_device)) {
        throw std::invalid_argument("bad source device id: '" + m.source_device + "'");
    }
    if (m.bubbles.empty()) throw std::invalid_argument("manifest has no bubbles");
    std::unordered_set<std::string> seen;
    for (const auto& b : m.bubbles) {
        if (!is_valid_id(b.bubble_id)) {
            throw std::invalid_argument("bad bubble id: '" + b.bubble_id + "'");
        }
        if (!seen.insert(b.bubble_id).second) {
            throw std::invalid_argument("duplicate bubble id: '" + b.bubble_id + "'");
        }
        if (b.requirements.empty()) {
            throw std::invalid_argument("bubble '" + b.bubble_id + "' has no requirements");
        }
    }
}

const char* to_string(EntryStatus s) {
    switch (s) {
        case EntryStatus::active: return "active";
        case EntryStatus::retracting: return "retracting";
        case EntryStatus::completed: return "completed";
    }
    return "active";
}

std::optional<EntryStatus> entry_status_from_string(const std::string& s) {
    if (s == "active") return EntryStatus::active;
    if (s == "retracting") return EntryStatus::retracting;
    if (s == "completed") return EntryStatus::completed;
    return std::nullopt;
}

const MapEntry* BubblesMap::find(const BubbleId& id) const {
    for (const auto& e : entries) {
        if (e.bubble_id == id) return &e;
    }
    return nullptr;
}

MapEntry* BubblesMap::find(const BubbleId& id) {
    for (auto& e : entries) {
        if (e.bubble_id == id) return &e;
    }
    return nullptr;
}

void BubblesMap::sort_canonical() {
    std::sort(entries.begin(), entries.end(),
              [](const MapEntry& a, const MapEntry& b) { return a.bubble_id < b.bubble_id; });
    std::sort(unused_nodes.begin(), unused_nodes.end(),
              [](const UnusedNode& a, const UnusedNode& b) { return a.node_id < b.node_id; });
}

bool qualifies(const CapabilitySet& node_caps, const CapabilitySet& requirements) {
    return std::includes(node_caps.begin(), node_caps.end(),
                         requirements.begin(), requirements.end());
}

NodeId select_host(const CapabilitySet& requirements,
                   const std::vector<HostCandidate>& candidates,
                   const NodeId& source) {
    const HostCandidate* best = nullptr;
    for (const auto& c : candidates) {
        if (!c.permitted || !qualifies(c.capabilities, requirements)) continue;
        if (best == nullptr || c.link_latency_ms < best->link_latency_ms ||
            (c.link_latency_ms == best->link_latency_ms && c.node_id < best->node_id)) {
            best = &c;
        }
    }
    return best ? best->node_id : source;
}

BubblesMap map_apply(const BubblesMap& map, const BubblesMap& update) {
    if (map.app_id != update.app_id) {
        throw std::invalid_argument("map_apply: app mismatch '" + map.app_id + "' vs '" +
                                    update.app_id + "'");
    }
    return update.version > map.version ? update : map;
}

namespace {

std::string join_or_dash(const std::vector<std::string>& items) {
    if (items.empty()) return "-";
    std::string out;
    for (const auto& s : items) {
        if (!out.empty()) out += ',';
        out += s;
    }
    return out;
}

}  // namespace

std::string render_map_entries(const BubblesMap& map) {
    std::vector<std::string> parts;
    parts.reserve(map.entries.size());
    for (const auto& e : map.entries) {
        parts.push_back(e.bubble_id + ":" + e.active_host + ":" + to_string(e.status));
    }
    return join_or_dash(parts);
}

std::string render_map_unused(const BubblesMap& map) {
    std::vector<std::string> parts;
    parts.reserve(map.unused_nodes.size());
    for (const auto& u : map.unused_nodes) parts.push_back(u.node_id);
    return join_or_dash(parts);
}

bool is_valid_id(const std::string& id) {
    if (id.empty()) return false;
    const char c0 = id[0];
    const bool head = (c0 >= 'a' && c0 <= 'z') || (c0 >= 'A' && c0 <= 'Z');
    if (!head) return false;
    for (char c : id) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-' || c == '.';
        if (!ok) return false;
    }
    return true;
}

}  // namespace bubblecodes
