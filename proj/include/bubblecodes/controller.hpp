#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "bubblecodes/bubble.hpp"
#include "bubblecodes/model.hpp"
#include "bubblecodes/trace.hpp"
#include "bubblecodes/wire.hpp"

namespace bubblecodes {

/// Failure-detection and discovery timing. lease_ms is derived, never set
/// independently.
struct TimerConfig {
    SimTimeMs heartbeat_interval_ms = 1000;
    int missed_heartbeats_to_lost = 3;
    SimTimeMs permission_timeout_ms = 500;

    SimTimeMs lease_ms() const { return heartbeat_interval_ms * missed_heartbeats_to_lost; }
};

/// Throws std::invalid_argument unless all values are positive.
void validate_timer_config(const TimerConfig& cfg);

/// A request to be called back with TimerIn{tag} at `at`. Timers are lazy:
/// stale ones fire and are ignored by deadline re-checks.
struct TimerRequest {
    SimTimeMs at = 0;
    std::string tag;
};

struct Outputs {
    std::vector<Message> messages;  // seq unstamped; the transport assigns it
    std::vector<TraceEvent> trace;
    std::vector<TimerRequest> timers;

    void append(Outputs&& other);
};

struct MsgIn {
    Message msg;
};

struct TimerIn {
    std::string tag;
};

/// Zone snapshot handed to C0 at launch and after every device move.
struct EnvDiscovery {
    std::vector<NodeProfile> in_zone;
};

/// Environment context change observed at the source device.
struct EnvContextChange {
    ContextVariable var;
};

/// Completion declared by the environment for a bubble with no remote active
/// replica (C0-declared completion).
struct EnvCompletion {
    BubbleId bubble_id;
};

/// Privilege loss on a node, reported to C0: C0 orders the hosted bubbles to
/// switch (retract_command cause=preempted).
struct EnvPreemptionNotice {
    NodeId node_id;
};

using SourceInput =
    std::variant<MsgIn, TimerIn, EnvDiscovery, EnvContextChange, EnvCompletion,
                 EnvPreemptionNotice>;

/// The controller on the source device: runs the partitioning process,
/// monitors hosting nodes, sequences every BubblesMap version, and drives the
/// three retraction paths. A replica of every bubble lives here at all times.
///
/// Transitions are pure: the same (state, input, now) always yields the same
/// outputs. All I/O happens through returned messages and timer requests.
class SourceController {
public:
    SourceController(AppManifest manifest, TimerConfig cfg);

    /// Single entry point for messages, timers and environment inputs.
    Outputs handle(const SourceInput& input, SimTimeMs now);

    /// Explicit retraction order (cause c0_order) or immediate completion
    /// (cause task_done). node_lost retractions are driven by lease timers.
    Outputs retract(const BubbleId& bubble, RetractCause cause, SimTimeMs now);

    const AppManifest& manifest() const { return manifest_; }
    const BubblesMap& map() const { return map_; }
    const TimerConfig& config() const { return cfg_; }
    const NodeId& source_device() const { return manifest_.source_device; }

    bool source_replica_active(const BubbleId& bubble) const;
    const BubbleReplica* source_replica(const BubbleId& bubble) const;
    std::vector<BubbleId> active_source_bubbles() const;

private:
    struct Candidate {
        NodeProfile profile;
        bool quali_replied = false;
        CapabilitySet capabilities;
        bool perm_replied = false;
        bool granted = false;

        bool answered() const { return quali_replied && perm_replied; }
        bool usable() const { return quali_replied && perm_replied && granted; }
    };

    Outputs on_message(const Message& msg, SimTimeMs now);
    Outputs on_timer(const std::string& tag, SimTimeMs now);
    Outputs on_discovery(const EnvDiscovery& env, SimTimeMs now);
    Outputs on_context(const ContextVariable& var, SimTimeMs now);
    Outputs on_completion(const BubbleId& bubble, SimTimeMs now);
    Outputs on_preemption_notice(const NodeId& node, SimTimeMs now);

    Outputs on_heartbeat(const Message& msg, SimTimeMs now);
    Outputs on_switch_notice(const Message& msg, const MsgSwitchNotice& sw, SimTimeMs now);
    Outputs on_task_completion(const Message& msg, const MsgTaskCompletion& tc, SimTimeMs now);
    Outputs on_quali_reply(const Message& msg, const MsgQualificationReply& qr, SimTimeMs now);
    Outputs on_perm_reply(const Message& msg, const MsgPermissionReply& pr, SimTimeMs now);

    /// Runs placement for every source-active bubble (or the given subset),
    /// bumps the map once if anything changed, and emits transfers + fan-out.
    Outputs placement_pass(const std::vector<BubbleId>& subset, bool force_publish, SimTimeMs now);
    Outputs run_epoch_placement(SimTimeMs now);
    Outputs node_lost(const NodeId& node, SimTimeMs now);

    std::vector<HostCandidate> candidate_list() const;
    std::vector<UnusedNode> compute_unused() const;
    std::set<NodeId> used_hosts() const;
    SimTimeMs latency_pad() const;
    TraceEvent map_trace(SimTimeMs now) const;
    Outputs publish_map(const std::set<NodeId>& skip, SimTimeMs now);
    Message to_node(const NodeId& node, MessageBody body) const;
    TraceEvent protocol_error(SimTimeMs now, const std::string& detail) const;
    void mark_contact(const NodeId& node, SimTimeMs now, Outputs& out);

    AppManifest manifest_;
    TimerConfig cfg_;
    BubblesMap map_;
    bool published_ = false;
    std::map<BubbleId, BubbleReplica> source_replicas_;

    std::uint64_t epoch_ = 0;
    bool epoch_placed_ = true;
    std::map<NodeId, Candidate> candidates_;
    std::set<NodeId> distrusted_;
    std::map<NodeId, SimTimeMs> last_heartbeat_at_;
    std::map<NodeId, SimTimeMs> latencies_;  // every latency ever observed
    std::map<BubbleId, SimTimeMs> pending_activation_;
    std::map<BubbleId, SimTimeMs> retract_deadline_;
};

/// Claim-driven preemption delivered to the node hosting the bubbles.
struct EnvPreempt {
    AppId app_id;
    std::vector<BubbleId> bubbles;
    UserId by;
};

/// Context change sensed locally by the node (pull path).
struct EnvSelfDetect {
    ContextVariable var;
};

/// Task completion occurring at this node's active replica.
struct EnvRemoteCompletion {
    AppId app_id;
    BubbleId bubble_id;
};

using RemoteInput = std::variant<MsgIn, TimerIn, EnvPreempt, EnvSelfDetect, EnvRemoteCompletion>;

/// A controller on a hosting node: answers discovery, accepts transfers,
/// heartbeats C0, applies map updates, forwards context and preemption to its
/// replicas, and self-destructs orphans when C0 falls silent for a lease.
class RemoteController {
public:
    RemoteController(NodeProfile profile, TimerConfig cfg, bool grant_permission = true);

    Outputs handle(const RemoteInput& input, SimTimeMs now);

    const NodeProfile& profile() const { return profile_; }
    const NodeId& node_id() const { return profile_.node_id; }

    bool hosts(const AppId& app, const BubbleId& bubble) const;
    const BubbleReplica* replica(const AppId& app, const BubbleId& bubble) const;
    std::vector<std::pair<AppId, BubbleId>> hosted() const;

private:
    struct AppState {
        NodeId source_device;
        std::map<BubbleId, BubbleReplica> replicas;
        BubblesMap known_map;
        SimTimeMs last_c0_contact = 0;
        bool hb_running = false;
    };

    Outputs on_message(const Message& msg, SimTimeMs now);
    Outputs on_timer(const std::string& tag, SimTimeMs now);
    Outputs on_transfer(const Message& msg, const MsgBubbleTransfer& tr, SimTimeMs now);
    Outputs on_map(const Message& msg, const BubblesMap& update, SimTimeMs now);
    Outputs on_retract(const Message& msg, const MsgRetractCommand& rc, SimTimeMs now);
    Outputs on_preempt(const EnvPreempt& env, SimTimeMs now);

    Outputs start_switch(AppState& app, BubbleReplica& replica, SwitchReason reason,
                         const std::optional<NodeId>& recommendation, SimTimeMs now);
    /// Destroys replicas whose map entry no longer points here.
    Outputs reconcile_with_map(AppState& app, SimTimeMs now);
    Outputs heartbeat_now(const AppId& app_id, AppState& app, SimTimeMs now);
    TraceEvent protocol_error(SimTimeMs now, const AppId& app, const std::string& detail) const;

    NodeProfile profile_;
    TimerConfig cfg_;
    bool grant_permission_;
    std::map<AppId, AppState> apps_;
};

}  // namespace bubblecodes
