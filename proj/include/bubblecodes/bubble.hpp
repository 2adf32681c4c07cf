#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bubblecodes/model.hpp"
#include "bubblecodes/trace.hpp"
#include "bubblecodes/wire.hpp"

namespace bubblecodes {

enum class BubblePhase { dormant, active, switching, destroyed };

const char* to_string(BubblePhase p);

enum class ContextOrigin { pushed_by_c0, self_detected };

const char* to_string(ContextOrigin o);

enum class DestructCause { task_done, retract_command, lease_expired, post_switch };

const char* to_string(DestructCause c);

enum class SwitchReason { preempted, recommended };

/// One replica of a bubble on one device. Source replicas are permanent and
/// toggle dormant/active; remote replicas are created by a transfer and end
/// in `destroyed`, which is terminal.
struct BubbleReplica {
    BubbleId bubble_id;
    AppId app_id;
    NodeId host;
    NodeId source_device;
    bool on_source = false;
    BubblePhase phase = BubblePhase::dormant;
    ListenMode listen = ListenMode::hybrid;
    CapabilitySet requirements;
    std::string payload_tag;
    // per-key latest accepted value; versions never decrease
    std::map<std::string, ContextVariable> ctx_snapshot;
    BubblesMap known_map;

    bool operator==(const BubbleReplica&) const = default;
};

/// Applies a context update. Accepts only versions newer than the snapshot
/// and only origins matching the replica's listen mode (push accepts
/// pushed_by_c0, pull accepts self_detected, hybrid accepts both). Updates
/// delivered to a non-active replica are dropped with a trace.
std::vector<TraceEvent> on_context_change(BubbleReplica& replica, const ContextVariable& var,
                                          ContextOrigin origin, SimTimeMs now);

struct SwitchPlan {
    NodeId target;
    BubblesMap proposed_map;  // known_map with this bubble's entry moved to target
};

/// Chooses where to go when the current node is no longer usable: the
/// recommended node if given and qualifying, else the minimum-latency
/// qualifying node among known_map.unused_nodes, else the source device
/// (retraction). Pure; the hosting controller flips the phase to `switching`
/// and sends the switch notice.
SwitchPlan plan_switch(const BubbleReplica& replica, SwitchReason reason,
                       const std::optional<NodeId>& recommendation);

struct PeerError {
    std::string kind;  // "unknown_peer"
};

/// Builds an app_data message addressed to the peer's active host per the
/// sender's map copy. Peers absent from the map or already completed yield
/// unknown_peer.
std::variant<Message, PeerError> peer_send(const BubbleReplica& replica, const BubbleId& peer,
                                           std::string payload);

struct DestructOutcome {
    bool destroyed = false;
    std::vector<Message> messages;
    std::vector<TraceEvent> trace;
};

/// Destroys a remote replica. task_done additionally reports completion to
/// C0. Source replicas never self-destruct (rejected with an illegal_destruct
/// trace); destroying a destroyed replica is also rejected.
DestructOutcome self_destruct(BubbleReplica& replica, DestructCause cause, SimTimeMs now);

}  // namespace bubblecodes
