#include "bubblecodes/bubble.hpp"

namespace bubblecodes {

const char* to_string(BubblePhase p) {
    switch (p) {
        case BubblePhase::dormant: return "dormant";
        case BubblePhase::active: return "active";
        case BubblePhase::switching: return "switching";
        case BubblePhase::destroyed: return "destroyed";
    }
    return "dormant";
}

const char* to_string(ContextOrigin o) {
    return o == ContextOrigin::pushed_by_c0 ? "pushed_by_c0" : "self_detected";
}

const char* to_string(DestructCause c) {
    switch (c) {
        case DestructCause::task_done: return "task_done";
        case DestructCause::retract_command: return "retract_command";
        case DestructCause::lease_expired: return "lease_expired";
        case DestructCause::post_switch: return "post_switch";
    }
    return "task_done";
}

namespace {

TraceEvent replica_event(const BubbleReplica& r, SimTimeMs now, std::string kind) {
    TraceEvent ev(now, std::move(kind));
    ev.with("app", r.app_id).with("bubble", r.bubble_id).with("host", r.host);
    return ev;
}

bool origin_accepted(ListenMode mode, ContextOrigin origin) {
    switch (mode) {
        case ListenMode::push: return origin == ContextOrigin::pushed_by_c0;
        case ListenMode::pull: return origin == ContextOrigin::self_detected;
        case ListenMode::hybrid: return true;
    }
    return true;
}

}  // namespace

std::vector<TraceEvent> on_context_change(BubbleReplica& replica, const ContextVariable& var,
                                          ContextOrigin origin, SimTimeMs now) {
    std::vector<TraceEvent> trace;
    if (replica.phase != BubblePhase::active) {
        trace.push_back(replica_event(replica, now, "ctx_to_inactive")
                            .with("key", var.key)
                            .with("v", var.ctx_version));
        return trace;
    }
    if (!origin_accepted(replica.listen, origin)) {
        trace.push_back(replica_event(replica, now, "ctx_mode_mismatch")
                            .with("key", var.key)
                            .with("v", var.ctx_version)
                            .with("mode", std::string(to_string(replica.listen)))
                            .with("origin", std::string(to_string(origin))));
        return trace;
    }
    auto it = replica.ctx_snapshot.find(var.key);
    if (it != replica.ctx_snapshot.end() && var.ctx_version <= it->second.ctx_version) {
        return trace;  // stale or duplicate: silently ignored
    }
    replica.ctx_snapshot[var.key] = var;
    trace.push_back(replica_event(replica, now, "adapted")
                        .with("key", var.key)
                        .with("v", var.ctx_version));
    return trace;
}

SwitchPlan plan_switch(const BubbleReplica& replica, SwitchReason reason,
                       const std::optional<NodeId>& recommendation) {
    (void)reason;
    NodeId target;

    if (recommendation) {
        for (const auto& u : replica.known_map.unused_nodes) {
            if (u.node_id == *recommendation && qualifies(u.capabilities, replica.requirements)) {
                target = *recommendation;
                break;
            }
        }
    }
    if (target.empty()) {
        std::vector<HostCandidate> candidates;
        candidates.reserve(replica.known_map.unused_nodes.size());
        for (const auto& u : replica.known_map.unused_nodes) {
            candidates.push_back(
                HostCandidate{u.node_id, u.capabilities, u.link_latency_ms, true});
        }
        target = select_host(replica.requirements, candidates, replica.source_device);
    }

    SwitchPlan plan;
    plan.target = target;
    plan.proposed_map = replica.known_map;
    if (MapEntry* e = plan.proposed_map.find(replica.bubble_id)) {
        e->active_host = target;
    }
    return plan;
}

std::variant<Message, PeerError> peer_send(const BubbleReplica& replica, const BubbleId& peer,
                                           std::string payload) {
    const MapEntry* entry = replica.known_map.find(peer);
    if (entry == nullptr || entry->status == EntryStatus::completed) {
        return PeerError{"unknown_peer"};
    }
    Message msg;
    msg.from = replica.host;
    msg.to = entry->active_host;
    msg.app = replica.app_id;
    msg.body = MsgAppData{peer, std::move(payload)};
    return msg;
}

DestructOutcome self_destruct(BubbleReplica& replica, DestructCause cause, SimTimeMs now) {
    DestructOutcome out;
    if (replica.on_source || replica.phase == BubblePhase::destroyed ||
        replica.phase == BubblePhase::dormant) {
        out.trace.push_back(replica_event(replica, now, "illegal_destruct")
                                .with("cause", std::string(to_string(cause))));
        return out;
    }
    replica.phase = BubblePhase::destroyed;
    out.destroyed = true;
    out.trace.push_back(replica_event(replica, now, "bubble_destroyed")
                            .with("cause", std::string(to_string(cause))));
    if (cause == DestructCause::task_done) {
        Message msg;
        msg.from = replica.host;
        msg.to = replica.source_device;
        msg.app = replica.app_id;
        msg.body = MsgTaskCompletion{replica.bubble_id};
        out.messages.push_back(std::move(msg));
    }
    return out;
}

}  // namespace bubblecodes
