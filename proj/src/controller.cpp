#include "bubblecodes/controller.hpp"

#include <algorithm>
#include <stdexcept>

namespace bubblecodes {

void validate_timer_config(const TimerConfig& cfg) {
    if (cfg.heartbeat_interval_ms <= 0 || cfg.missed_heartbeats_to_lost <= 0 ||
        cfg.permission_timeout_ms <= 0) {
        throw std::invalid_argument("timer config values must be positive");
    }
}

void Outputs::append(Outputs&& other) {
    for (auto& m : other.messages) messages.push_back(std::move(m));
    for (auto& t : other.trace) trace.push_back(std::move(t));
    for (auto& t : other.timers) timers.push_back(std::move(t));
}

namespace {

std::string join(const std::vector<std::string>& items) {
    if (items.empty()) return "-";
    std::string out;
    for (const auto& s : items) {
        if (!out.empty()) out += ',';
        out += s;
    }
    return out;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// SourceController

SourceController::SourceController(AppManifest manifest, TimerConfig cfg)
    : manifest_(std::move(manifest)), cfg_(cfg) {
    validate_manifest(manifest_);
    validate_timer_config(cfg_);
    map_.app_id = manifest_.app_id;
    map_.version = 0;
    for (const auto& spec : manifest_.bubbles) {
        map_.entries.push_back(MapEntry{spec.bubble_id, manifest_.source_device,
                                        EntryStatus::active});
        BubbleReplica r;
        r.bubble_id = spec.bubble_id;
        r.app_id = manifest_.app_id;
        r.host = manifest_.source_device;
        r.source_device = manifest_.source_device;
        r.on_source = true;
        r.phase = BubblePhase::active;  // the app starts running on the source
        r.listen = spec.listen;
        r.requirements = spec.requirements;
        r.payload_tag = spec.payload_tag;
        r.known_map = map_;
        source_replicas_.emplace(spec.bubble_id, std::move(r));
    }
    map_.sort_canonical();
}

bool SourceController::source_replica_active(const BubbleId& bubble) const {
    auto it = source_replicas_.find(bubble);
    return it != source_replicas_.end() && it->second.phase == BubblePhase::active;
}

const BubbleReplica* SourceController::source_replica(const BubbleId& bubble) const {
    auto it = source_replicas_.find(bubble);
    return it == source_replicas_.end() ? nullptr : &it->second;
}

std::vector<BubbleId> SourceController::active_source_bubbles() const {
    std::vector<BubbleId> out;
    for (const auto& spec : manifest_.bubbles) {
        if (source_replica_active(spec.bubble_id)) out.push_back(spec.bubble_id);
    }
    return out;
}

Message SourceController::to_node(const NodeId& node, MessageBody body) const {
    Message msg;
    msg.from = manifest_.source_device;
    msg.to = node;
    msg.app = manifest_.app_id;
    msg.body = std::move(body);
    return msg;
}

TraceEvent SourceController::protocol_error(SimTimeMs now, const std::string& detail) const {
    return TraceEvent(now, "protocol_error").with("app", manifest_.app_id).with("detail", detail);
}

SimTimeMs SourceController::latency_pad() const {
    SimTimeMs pad = 0;
    for (const auto& [node, lat] : latencies_) pad = std::max(pad, lat);
    return pad;
}

std::set<NodeId> SourceController::used_hosts() const {
    std::set<NodeId> used;
    for (const auto& e : map_.entries) {
        if (e.status != EntryStatus::completed && e.active_host != manifest_.source_device) {
            used.insert(e.active_host);
        }
    }
    return used;
}

std::vector<HostCandidate> SourceController::candidate_list() const {
    std::vector<HostCandidate> out;
    for (const auto& [node, cand] : candidates_) {
        if (!cand.usable() || distrusted_.count(node)) continue;
        out.push_back(HostCandidate{node, cand.capabilities, cand.profile.link_latency_ms, true});
    }
    return out;
}

std::vector<UnusedNode> SourceController::compute_unused() const {
    const std::set<NodeId> used = used_hosts();
    std::vector<UnusedNode> out;
    for (const auto& [node, cand] : candidates_) {
        if (!cand.usable() || distrusted_.count(node)) continue;
        if (used.count(node) || node == manifest_.source_device) continue;
        out.push_back(UnusedNode{node, cand.capabilities, cand.profile.link_latency_ms});
    }
    return out;
}

TraceEvent SourceController::map_trace(SimTimeMs now) const {
    return TraceEvent(now, "map_version")
        .with("app", map_.app_id)
        .with("v", map_.version)
        .with("entries", render_map_entries(map_))
        .with("unused", render_map_unused(map_));
}

Outputs SourceController::publish_map(const std::set<NodeId>& skip, SimTimeMs now) {
    (void)now;
    Outputs out;
    for (const auto& node : used_hosts()) {
        if (skip.count(node)) continue;
        out.messages.push_back(to_node(node, MsgBubblesMap{map_}));
    }
    return out;
}

void SourceController::mark_contact(const NodeId& node, SimTimeMs now, Outputs& out) {
    if (distrusted_.count(node)) return;
    last_heartbeat_at_[node] = now;
    out.timers.push_back(TimerRequest{now + cfg_.lease_ms(), "lease:" + node});
}

Outputs SourceController::handle(const SourceInput& input, SimTimeMs now) {
    struct Dispatch {
        SourceController& self;
        SimTimeMs now;
        Outputs operator()(const MsgIn& in) { return self.on_message(in.msg, now); }
        Outputs operator()(const TimerIn& in) { return self.on_timer(in.tag, now); }
        Outputs operator()(const EnvDiscovery& in) { return self.on_discovery(in, now); }
        Outputs operator()(const EnvContextChange& in) { return self.on_context(in.var, now); }
        Outputs operator()(const EnvCompletion& in) { return self.on_completion(in.bubble_id, now); }
        Outputs operator()(const EnvPreemptionNotice& in) {
            return self.on_preemption_notice(in.node_id, now);
        }
    };
    return std::visit(Dispatch{*this, now}, input);
}

Outputs SourceController::on_discovery(const EnvDiscovery& env, SimTimeMs now) {
    Outputs out;
    const bool first = epoch_ == 0;
    ++epoch_;
    candidates_.clear();
    distrusted_.clear();
    epoch_placed_ = false;

    if (first) {
        for (const auto& spec : manifest_.bubbles) {
            out.trace.push_back(TraceEvent(now, "bubble_active")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", spec.bubble_id)
                                    .with("host", manifest_.source_device));
        }
    }

    CapabilitySet union_reqs;
    for (const auto& spec : manifest_.bubbles) {
        union_reqs.insert(spec.requirements.begin(), spec.requirements.end());
    }

    std::vector<std::string> names;
    for (const auto& profile : env.in_zone) {
        if (profile.node_id == manifest_.source_device) continue;
        candidates_[profile.node_id] = Candidate{profile, false, {}, false, false};
        latencies_[profile.node_id] = profile.link_latency_ms;
        names.push_back(profile.node_id);
    }
    std::sort(names.begin(), names.end());
    out.trace.push_back(TraceEvent(now, "discovery")
                            .with("app", manifest_.app_id)
                            .with("candidates", join(names)));

    if (candidates_.empty()) {
        out.append(run_epoch_placement(now));
        return out;
    }
    for (const auto& name : names) {
        out.messages.push_back(to_node(name, MsgQualificationRequest{union_reqs}));
        out.messages.push_back(to_node(name, MsgPermissionRequest{"*", union_reqs}));
    }
    out.timers.push_back(
        TimerRequest{now + cfg_.permission_timeout_ms, "perm:" + std::to_string(epoch_)});
    return out;
}

Outputs SourceController::run_epoch_placement(SimTimeMs now) {
    epoch_placed_ = true;
    std::vector<BubbleId> all;
    for (const auto& spec : manifest_.bubbles) all.push_back(spec.bubble_id);
    return placement_pass(all, !published_, now);
}

Outputs SourceController::placement_pass(const std::vector<BubbleId>& subset, bool force_publish,
                                         SimTimeMs now) {
    Outputs out;
    std::vector<std::pair<BubbleId, NodeId>> moves;
    const auto candidates = candidate_list();
    for (const auto& spec : manifest_.bubbles) {
        if (std::find(subset.begin(), subset.end(), spec.bubble_id) == subset.end()) continue;
        const MapEntry* e = map_.find(spec.bubble_id);
        if (!e || e->status != EntryStatus::active || e->active_host != manifest_.source_device) {
            continue;
        }
        if (!source_replica_active(spec.bubble_id)) continue;  // mid-retraction
        const NodeId target = select_host(spec.requirements, candidates, manifest_.source_device);
        if (target != manifest_.source_device) moves.emplace_back(spec.bubble_id, target);
    }

    for (const auto& [bubble, target] : moves) {
        map_.find(bubble)->active_host = target;
    }
    std::vector<UnusedNode> unused = compute_unused();
    const bool changed = !moves.empty() || unused != map_.unused_nodes;
    if (!changed && !force_publish) return out;

    map_.unused_nodes = std::move(unused);
    ++map_.version;
    published_ = true;

    std::set<NodeId> transfer_targets;
    for (const auto& [bubble, target] : moves) {
        BubbleReplica& replica = source_replicas_.at(bubble);
        replica.phase = BubblePhase::dormant;
        out.trace.push_back(TraceEvent(now, "bubble_dormant")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble)
                                .with("host", manifest_.source_device));
        transfer_targets.insert(target);
    }
    out.trace.push_back(map_trace(now));
    for (const auto& [bubble, target] : moves) {
        out.messages.push_back(to_node(target, MsgBubbleTransfer{*manifest_.find(bubble), map_}));
        // (re)arm the lease from the send instant so a dropped transfer is
        // detected even when the target answered discovery long ago
        last_heartbeat_at_[target] = std::max(last_heartbeat_at_[target], now);
        out.timers.push_back(TimerRequest{now + cfg_.lease_ms(), "lease:" + target});
    }
    out.append(publish_map(transfer_targets, now));
    return out;
}

Outputs SourceController::on_message(const Message& msg, SimTimeMs now) {
    Outputs out;
    if (msg.app != manifest_.app_id) {
        out.trace.push_back(protocol_error(now, "wrong_app"));
        return out;
    }
    mark_contact(msg.from, now, out);

    if (const auto* hb = std::get_if<MsgStatusHeartbeat>(&msg.body)) {
        (void)hb;
        out.append(on_heartbeat(msg, now));
    } else if (const auto* sw = std::get_if<MsgSwitchNotice>(&msg.body)) {
        out.append(on_switch_notice(msg, *sw, now));
    } else if (const auto* tc = std::get_if<MsgTaskCompletion>(&msg.body)) {
        out.append(on_task_completion(msg, *tc, now));
    } else if (const auto* qr = std::get_if<MsgQualificationReply>(&msg.body)) {
        out.append(on_quali_reply(msg, *qr, now));
    } else if (const auto* pr = std::get_if<MsgPermissionReply>(&msg.body)) {
        out.append(on_perm_reply(msg, *pr, now));
    } else if (const auto* data = std::get_if<MsgAppData>(&msg.body)) {
        if (source_replica_active(data->bubble_id)) {
            out.trace.push_back(TraceEvent(now, "app_data_delivered")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", data->bubble_id)
                                    .with("host", manifest_.source_device)
                                    .with("from", msg.from));
        } else {
            out.trace.push_back(TraceEvent(now, "undeliverable")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", data->bubble_id)
                                    .with("host", manifest_.source_device));
        }
    } else if (const auto* bm = std::get_if<MsgBubblesMap>(&msg.body)) {
        // C0 is the sole sequencer; a higher version from elsewhere is forged
        if (bm->map.version > map_.version) {
            out.trace.push_back(protocol_error(now, "foreign_map_version"));
        }
    } else {
        out.trace.push_back(protocol_error(now, "unexpected_type"));
    }
    return out;
}

Outputs SourceController::on_heartbeat(const Message& msg, SimTimeMs now) {
    Outputs out;
    const NodeId& node = msg.from;
    if (distrusted_.count(node)) return out;  // never refresh a suspect's lease

    const auto& hb = std::get<MsgStatusHeartbeat>(msg.body);
    // confirm pending c0_order retractions: the host no longer lists the bubble
    std::vector<BubbleId> confirmed;
    for (const auto& spec : manifest_.bubbles) {
        MapEntry* e = map_.find(spec.bubble_id);
        if (e->status != EntryStatus::retracting || e->active_host != node) continue;
        if (std::find(hb.hosted_bubbles.begin(), hb.hosted_bubbles.end(), spec.bubble_id) ==
            hb.hosted_bubbles.end()) {
            confirmed.push_back(spec.bubble_id);
        }
    }
    if (!confirmed.empty()) {
        for (const auto& bubble : confirmed) {
            MapEntry* e = map_.find(bubble);
            e->active_host = manifest_.source_device;
            e->status = EntryStatus::active;
            retract_deadline_.erase(bubble);
            BubbleReplica& replica = source_replicas_.at(bubble);
            replica.phase = BubblePhase::active;
            out.trace.push_back(TraceEvent(now, "bubble_active")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", bubble)
                                    .with("host", manifest_.source_device));
        }
        map_.unused_nodes = compute_unused();
        ++map_.version;
        out.trace.push_back(map_trace(now));
        out.append(publish_map({}, now));
    }

    out.messages.push_back(to_node(node, MsgStatusHeartbeat{active_source_bubbles()}));
    return out;
}

Outputs SourceController::on_quali_reply(const Message& msg, const MsgQualificationReply& qr,
                                         SimTimeMs now) {
    Outputs out;
    auto it = candidates_.find(msg.from);
    if (it == candidates_.end()) return out;  // reply from an older epoch
    it->second.quali_replied = true;
    it->second.capabilities = qr.capabilities;
    if (!epoch_placed_) {
        bool all = true;
        for (const auto& [node, cand] : candidates_) {
            if (!cand.answered()) {
                all = false;
                break;
            }
        }
        if (all) out.append(run_epoch_placement(now));
    }
    return out;
}

Outputs SourceController::on_perm_reply(const Message& msg, const MsgPermissionReply& pr,
                                        SimTimeMs now) {
    Outputs out;
    auto it = candidates_.find(msg.from);
    if (it == candidates_.end()) return out;
    it->second.perm_replied = true;
    it->second.granted = pr.granted;
    if (!epoch_placed_) {
        bool all = true;
        for (const auto& [node, cand] : candidates_) {
            if (!cand.answered()) {
                all = false;
                break;
            }
        }
        if (all) out.append(run_epoch_placement(now));
    }
    return out;
}

Outputs SourceController::on_switch_notice(const Message& msg, const MsgSwitchNotice& sw,
                                           SimTimeMs now) {
    Outputs out;
    MapEntry* e = map_.find(sw.bubble_id);
    if (!e) {
        out.trace.push_back(protocol_error(now, "switch_unknown_bubble"));
        return out;
    }
    if (e->status == EntryStatus::completed) {
        out.trace.push_back(protocol_error(now, "switch_on_completed"));
        return out;
    }
    if (e->active_host != msg.from || sw.from_node != msg.from) {
        out.trace.push_back(protocol_error(now, "switch_from_wrong_host"));
        return out;
    }

    NodeId target = sw.to_node;
    if (target != manifest_.source_device && distrusted_.count(target)) {
        target = manifest_.source_device;  // proposal references a node we know is gone
    }
    out.trace.push_back(TraceEvent(now, "switch_adopted")
                            .with("app", manifest_.app_id)
                            .with("bubble", sw.bubble_id)
                            .with("from", msg.from)
                            .with("to", target));
    e->active_host = target;
    e->status = EntryStatus::active;

    std::set<NodeId> skip;
    if (target == manifest_.source_device) {
        // the old replica went `switching` before the notice was sent, so the
        // source copy can take over immediately
        BubbleReplica& replica = source_replicas_.at(sw.bubble_id);
        replica.phase = BubblePhase::active;
        out.trace.push_back(TraceEvent(now, "bubble_active")
                                .with("app", manifest_.app_id)
                                .with("bubble", sw.bubble_id)
                                .with("host", manifest_.source_device));
    }
    map_.unused_nodes = compute_unused();
    ++map_.version;
    out.trace.push_back(map_trace(now));
    if (target != manifest_.source_device) {
        out.messages.push_back(
            to_node(target, MsgBubbleTransfer{*manifest_.find(sw.bubble_id), map_}));
        skip.insert(target);
        last_heartbeat_at_[target] = std::max(last_heartbeat_at_[target], now);
        out.timers.push_back(TimerRequest{now + cfg_.lease_ms(), "lease:" + target});
    }
    out.append(publish_map(skip, now));
    return out;
}

Outputs SourceController::on_task_completion(const Message& msg, const MsgTaskCompletion& tc,
                                             SimTimeMs now) {
    Outputs out;
    MapEntry* e = map_.find(tc.bubble_id);
    if (!e) {
        out.trace.push_back(protocol_error(now, "completion_unknown_bubble"));
        return out;
    }
    if (e->status == EntryStatus::completed) {
        out.trace.push_back(TraceEvent(now, "redundant_retract")
                                .with("app", manifest_.app_id)
                                .with("bubble", tc.bubble_id));
        return out;
    }
    if (e->active_host != msg.from) {
        out.trace.push_back(protocol_error(now, "completion_from_wrong_host"));
        return out;
    }
    e->status = EntryStatus::completed;
    e->active_host = manifest_.source_device;
    retract_deadline_.erase(tc.bubble_id);
    pending_activation_.erase(tc.bubble_id);
    out.trace.push_back(
        TraceEvent(now, "completed").with("app", manifest_.app_id).with("bubble", tc.bubble_id));
    map_.unused_nodes = compute_unused();
    ++map_.version;
    out.trace.push_back(map_trace(now));
    out.append(publish_map({}, now));
    return out;
}

Outputs SourceController::on_completion(const BubbleId& bubble, SimTimeMs now) {
    Outputs out;
    MapEntry* e = map_.find(bubble);
    if (!e) {
        out.trace.push_back(protocol_error(now, "completion_unknown_bubble"));
        return out;
    }
    if (e->status == EntryStatus::completed) {
        out.trace.push_back(TraceEvent(now, "redundant_retract")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble));
        return out;
    }
    if (e->active_host != manifest_.source_device) {
        out.trace.push_back(protocol_error(now, "completion_misrouted"));
        return out;
    }
    BubbleReplica& replica = source_replicas_.at(bubble);
    if (replica.phase == BubblePhase::active) {
        replica.phase = BubblePhase::dormant;
        out.trace.push_back(TraceEvent(now, "bubble_dormant")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble)
                                .with("host", manifest_.source_device));
    }
    e->status = EntryStatus::completed;
    retract_deadline_.erase(bubble);
    pending_activation_.erase(bubble);
    out.trace.push_back(
        TraceEvent(now, "completed").with("app", manifest_.app_id).with("bubble", bubble));
    map_.unused_nodes = compute_unused();
    ++map_.version;
    out.trace.push_back(map_trace(now));
    out.append(publish_map({}, now));
    return out;
}

Outputs SourceController::on_context(const ContextVariable& var, SimTimeMs now) {
    Outputs out;
    for (const auto& spec : manifest_.bubbles) {
        BubbleReplica& replica = source_replicas_.at(spec.bubble_id);
        if (replica.phase != BubblePhase::active) continue;
        if (replica.listen == ListenMode::push || replica.listen == ListenMode::hybrid) {
            for (auto& ev : on_context_change(replica, var, ContextOrigin::pushed_by_c0, now)) {
                out.trace.push_back(std::move(ev));
            }
        }
        if (replica.listen == ListenMode::pull || replica.listen == ListenMode::hybrid) {
            for (auto& ev : on_context_change(replica, var, ContextOrigin::self_detected, now)) {
                out.trace.push_back(std::move(ev));
            }
        }
    }
    std::set<NodeId> hosts;
    for (const auto& e : map_.entries) {
        if (e.status == EntryStatus::active && e.active_host != manifest_.source_device) {
            hosts.insert(e.active_host);
        }
    }
    for (const auto& node : hosts) {
        out.messages.push_back(to_node(node, MsgContextInfo{var}));
    }
    return out;
}

Outputs SourceController::on_preemption_notice(const NodeId& node, SimTimeMs now) {
    Outputs out;
    for (const auto& spec : manifest_.bubbles) {
        const MapEntry* e = map_.find(spec.bubble_id);
        if (e->status == EntryStatus::active && e->active_host == node) {
            out.trace.push_back(TraceEvent(now, "preempt_ordered")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", spec.bubble_id)
                                    .with("node", node));
            out.messages.push_back(
                to_node(node, MsgRetractCommand{spec.bubble_id, RetractCause::preempted}));
        }
    }
    return out;
}

Outputs SourceController::retract(const BubbleId& bubble, RetractCause cause, SimTimeMs now) {
    Outputs out;
    MapEntry* e = map_.find(bubble);
    if (!e) {
        out.trace.push_back(protocol_error(now, "retract_unknown_bubble"));
        return out;
    }
    if (cause == RetractCause::task_done) {
        if (e->status == EntryStatus::completed) {
            out.trace.push_back(TraceEvent(now, "redundant_retract")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", bubble));
            return out;
        }
        BubbleReplica& replica = source_replicas_.at(bubble);
        if (e->active_host == manifest_.source_device && replica.phase == BubblePhase::active) {
            replica.phase = BubblePhase::dormant;
            out.trace.push_back(TraceEvent(now, "bubble_dormant")
                                    .with("app", manifest_.app_id)
                                    .with("bubble", bubble)
                                    .with("host", manifest_.source_device));
        }
        e->status = EntryStatus::completed;
        e->active_host = manifest_.source_device;
        retract_deadline_.erase(bubble);
        pending_activation_.erase(bubble);
        out.trace.push_back(
            TraceEvent(now, "completed").with("app", manifest_.app_id).with("bubble", bubble));
        map_.unused_nodes = compute_unused();
        ++map_.version;
        out.trace.push_back(map_trace(now));
        out.append(publish_map({}, now));
        return out;
    }
    if (cause != RetractCause::c0_order) {
        out.trace.push_back(protocol_error(now, "retract_bad_cause"));
        return out;
    }
    if (e->status != EntryStatus::active || e->active_host == manifest_.source_device) {
        out.trace.push_back(TraceEvent(now, "redundant_retract")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble));
        return out;
    }
    const NodeId host = e->active_host;
    e->status = EntryStatus::retracting;
    out.trace.push_back(TraceEvent(now, "retraction")
                            .with("app", manifest_.app_id)
                            .with("bubble", bubble)
                            .with("cause", std::string("c0_order")));
    out.messages.push_back(to_node(host, MsgRetractCommand{bubble, RetractCause::c0_order}));
    const SimTimeMs deadline = now + cfg_.lease_ms() + latency_pad();
    retract_deadline_[bubble] = deadline;
    out.timers.push_back(TimerRequest{deadline, "retractwait:" + bubble});
    map_.unused_nodes = compute_unused();
    ++map_.version;
    out.trace.push_back(map_trace(now));
    out.append(publish_map({}, now));
    return out;
}

Outputs SourceController::node_lost(const NodeId& node, SimTimeMs now) {
    Outputs out;
    out.trace.push_back(
        TraceEvent(now, "node_suspected").with("app", manifest_.app_id).with("node", node));
    distrusted_.insert(node);
    const SimTimeMs pad = latency_pad();
    bool any = false;
    for (const auto& spec : manifest_.bubbles) {
        MapEntry* e = map_.find(spec.bubble_id);
        if (e->status == EntryStatus::completed || e->active_host != node) continue;
        e->active_host = manifest_.source_device;
        e->status = EntryStatus::active;
        retract_deadline_.erase(spec.bubble_id);
        out.trace.push_back(TraceEvent(now, "retraction")
                                .with("app", manifest_.app_id)
                                .with("bubble", spec.bubble_id)
                                .with("cause", std::string("node_lost")));
        pending_activation_[spec.bubble_id] = now + pad;
        out.timers.push_back(TimerRequest{now + pad, "act:" + spec.bubble_id});
        any = true;
    }
    if (any) {
        map_.unused_nodes = compute_unused();
        ++map_.version;
        out.trace.push_back(map_trace(now));
        out.append(publish_map({}, now));
    }
    return out;
}

Outputs SourceController::on_timer(const std::string& tag, SimTimeMs now) {
    Outputs out;
    if (starts_with(tag, "perm:")) {
        const std::string epoch = tag.substr(5);
        if (epoch == std::to_string(epoch_) && !epoch_placed_) {
            out.append(run_epoch_placement(now));
        }
        return out;
    }
    if (starts_with(tag, "lease:")) {
        const NodeId node = tag.substr(6);
        auto it = last_heartbeat_at_.find(node);
        if (it == last_heartbeat_at_.end() || now < it->second + cfg_.lease_ms()) return out;
        bool relevant = false;
        for (const auto& e : map_.entries) {
            if (e.status != EntryStatus::completed && e.active_host == node) {
                relevant = true;
                break;
            }
        }
        if (relevant) out.append(node_lost(node, now));
        return out;
    }
    if (starts_with(tag, "act:")) {
        const BubbleId bubble = tag.substr(4);
        auto it = pending_activation_.find(bubble);
        if (it == pending_activation_.end() || now < it->second) return out;
        pending_activation_.erase(it);
        MapEntry* e = map_.find(bubble);
        if (!e || e->status != EntryStatus::active ||
            e->active_host != manifest_.source_device) {
            return out;
        }
        BubbleReplica& replica = source_replicas_.at(bubble);
        if (replica.phase != BubblePhase::dormant) return out;
        replica.phase = BubblePhase::active;
        out.trace.push_back(TraceEvent(now, "bubble_active")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble)
                                .with("host", manifest_.source_device));
        // a lost node's bubble may fit somewhere else in the current zone
        out.append(placement_pass({bubble}, false, now));
        return out;
    }
    if (starts_with(tag, "retractwait:")) {
        const BubbleId bubble = tag.substr(12);
        auto it = retract_deadline_.find(bubble);
        if (it == retract_deadline_.end() || now < it->second) return out;
        retract_deadline_.erase(it);
        MapEntry* e = map_.find(bubble);
        if (!e || e->status != EntryStatus::retracting) return out;
        const NodeId host = e->active_host;
        out.trace.push_back(TraceEvent(now, "retract_unconfirmed")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble)
                                .with("host", host));
        distrusted_.insert(host);
        e->active_host = manifest_.source_device;
        e->status = EntryStatus::active;
        BubbleReplica& replica = source_replicas_.at(bubble);
        replica.phase = BubblePhase::active;
        out.trace.push_back(TraceEvent(now, "bubble_active")
                                .with("app", manifest_.app_id)
                                .with("bubble", bubble)
                                .with("host", manifest_.source_device));
        map_.unused_nodes = compute_unused();
        ++map_.version;
        out.trace.push_back(map_trace(now));
        out.append(publish_map({}, now));
        return out;
    }
    return out;
}

// ---------------------------------------------------------------------------
// RemoteController

RemoteController::RemoteController(NodeProfile profile, TimerConfig cfg, bool grant_permission)
    : profile_(std::move(profile)), cfg_(cfg), grant_permission_(grant_permission) {
    validate_timer_config(cfg_);
}

bool RemoteController::hosts(const AppId& app, const BubbleId& bubble) const {
    auto it = apps_.find(app);
    return it != apps_.end() && it->second.replicas.count(bubble) > 0;
}

const BubbleReplica* RemoteController::replica(const AppId& app, const BubbleId& bubble) const {
    auto it = apps_.find(app);
    if (it == apps_.end()) return nullptr;
    auto rit = it->second.replicas.find(bubble);
    return rit == it->second.replicas.end() ? nullptr : &rit->second;
}

std::vector<std::pair<AppId, BubbleId>> RemoteController::hosted() const {
    std::vector<std::pair<AppId, BubbleId>> out;
    for (const auto& [app_id, app] : apps_) {
        for (const auto& [bubble_id, r] : app.replicas) out.emplace_back(app_id, bubble_id);
    }
    return out;
}

TraceEvent RemoteController::protocol_error(SimTimeMs now, const AppId& app,
                                            const std::string& detail) const {
    return TraceEvent(now, "protocol_error").with("app", app).with("detail", detail);
}

Outputs RemoteController::handle(const RemoteInput& input, SimTimeMs now) {
    struct Dispatch {
        RemoteController& self;
        SimTimeMs now;
        Outputs operator()(const MsgIn& in) { return self.on_message(in.msg, now); }
        Outputs operator()(const TimerIn& in) { return self.on_timer(in.tag, now); }
        Outputs operator()(const EnvPreempt& in) { return self.on_preempt(in, now); }
        Outputs operator()(const EnvSelfDetect& in) {
            Outputs out;
            for (auto& [app_id, app] : self.apps_) {
                for (auto& [bubble_id, replica] : app.replicas) {
                    if (replica.phase != BubblePhase::active) continue;
                    if (replica.listen == ListenMode::pull ||
                        replica.listen == ListenMode::hybrid) {
                        for (auto& ev : on_context_change(replica, in.var,
                                                          ContextOrigin::self_detected, now)) {
                            out.trace.push_back(std::move(ev));
                        }
                    }
                }
            }
            return out;
        }
        Outputs operator()(const EnvRemoteCompletion& in) {
            Outputs out;
            auto it = self.apps_.find(in.app_id);
            if (it == self.apps_.end() || !it->second.replicas.count(in.bubble_id)) {
                out.trace.push_back(self.protocol_error(now, in.app_id, "complete_unknown"));
                return out;
            }
            BubbleReplica& replica = it->second.replicas.at(in.bubble_id);
            DestructOutcome res = self_destruct(replica, DestructCause::task_done, now);
            for (auto& ev : res.trace) out.trace.push_back(std::move(ev));
            for (auto& m : res.messages) out.messages.push_back(std::move(m));
            if (res.destroyed) it->second.replicas.erase(in.bubble_id);
            return out;
        }
    };
    return std::visit(Dispatch{*this, now}, input);
}

Outputs RemoteController::heartbeat_now(const AppId& app_id, AppState& app, SimTimeMs now) {
    (void)now;
    Outputs out;
    MsgStatusHeartbeat hb;
    for (const auto& [bubble_id, r] : app.replicas) hb.hosted_bubbles.push_back(bubble_id);
    Message msg;
    msg.from = profile_.node_id;
    msg.to = app.source_device;
    msg.app = app_id;
    msg.body = std::move(hb);
    out.messages.push_back(std::move(msg));
    return out;
}

Outputs RemoteController::on_transfer(const Message& msg, const MsgBubbleTransfer& tr,
                                      SimTimeMs now) {
    Outputs out;
    auto [it, created] = apps_.try_emplace(msg.app);
    AppState& app = it->second;
    if (created) {
        app.source_device = msg.from;
        app.known_map.app_id = msg.app;
    }
    // the transfer proves C0 contact: C0 re-armed its own lease at send time
    app.last_c0_contact = std::max(app.last_c0_contact, now);
    out.timers.push_back(TimerRequest{now + cfg_.lease_ms(), "cilease:" + msg.app});

    const bool duplicate = app.replicas.count(tr.spec.bubble_id) > 0;
    if (duplicate) {
        out.trace.push_back(TraceEvent(now, "duplicate_transfer")
                                .with("node", profile_.node_id)
                                .with("app", msg.app)
                                .with("bubble", tr.spec.bubble_id));
    } else {
        BubbleReplica replica;
        replica.bubble_id = tr.spec.bubble_id;
        replica.app_id = msg.app;
        replica.host = profile_.node_id;
        replica.source_device = msg.from;
        replica.on_source = false;
        replica.phase = BubblePhase::active;
        replica.listen = tr.spec.listen;
        replica.requirements = tr.spec.requirements;
        replica.payload_tag = tr.spec.payload_tag;
        app.replicas.emplace(tr.spec.bubble_id, std::move(replica));
        out.trace.push_back(TraceEvent(now, "bubble_active")
                                .with("app", msg.app)
                                .with("bubble", tr.spec.bubble_id)
                                .with("host", profile_.node_id));
    }

    if (tr.map.version > app.known_map.version) {
        app.known_map = map_apply(app.known_map, tr.map);
        out.trace.push_back(TraceEvent(now, "map_received")
                                .with("node", profile_.node_id)
                                .with("app", msg.app)
                                .with("v", app.known_map.version));
        for (auto& [bubble_id, r] : app.replicas) r.known_map = app.known_map;
        out.append(reconcile_with_map(app, now));
    } else {
        for (auto& [bubble_id, r] : app.replicas) {
            if (r.known_map.version < app.known_map.version) r.known_map = app.known_map;
        }
    }

    if (!duplicate && !app.hb_running) {
        app.hb_running = true;
        out.append(heartbeat_now(msg.app, app, now));  // doubles as the transfer ack
        out.timers.push_back(
            TimerRequest{now + cfg_.heartbeat_interval_ms, "hb:" + msg.app});
    }
    return out;
}

Outputs RemoteController::on_map(const Message& msg, const BubblesMap& update, SimTimeMs now) {
    Outputs out;
    auto it = apps_.find(msg.app);
    if (it == apps_.end()) {
        out.trace.push_back(protocol_error(now, msg.app, "map_for_unknown_app"));
        return out;
    }
    AppState& app = it->second;
    if (update.version > app.known_map.version) {
        app.known_map = map_apply(app.known_map, update);
        out.trace.push_back(TraceEvent(now, "map_received")
                                .with("node", profile_.node_id)
                                .with("app", msg.app)
                                .with("v", app.known_map.version));
        for (auto& [bubble_id, r] : app.replicas) r.known_map = app.known_map;
        out.append(reconcile_with_map(app, now));
    } else {
        out.trace.push_back(TraceEvent(now, "map_stale")
                                .with("node", profile_.node_id)
                                .with("app", msg.app)
                                .with("v", update.version)
                                .with("held", app.known_map.version));
    }
    return out;
}

Outputs RemoteController::reconcile_with_map(AppState& app, SimTimeMs now) {
    Outputs out;
    std::vector<BubbleId> gone;
    for (auto& [bubble_id, replica] : app.replicas) {
        const MapEntry* e = app.known_map.find(bubble_id);
        if (!e) continue;
        const bool displaced =
            e->status == EntryStatus::completed || e->active_host != profile_.node_id;
        if (!displaced) continue;
        DestructOutcome res = self_destruct(replica, DestructCause::post_switch, now);
        for (auto& ev : res.trace) out.trace.push_back(std::move(ev));
        for (auto& m : res.messages) out.messages.push_back(std::move(m));
        if (res.destroyed) gone.push_back(bubble_id);
    }
    for (const auto& bubble_id : gone) app.replicas.erase(bubble_id);
    return out;
}

Outputs RemoteController::on_retract(const Message& msg, const MsgRetractCommand& rc,
                                     SimTimeMs now) {
    Outputs out;
    auto it = apps_.find(msg.app);
    if (it == apps_.end() || !it->second.replicas.count(rc.bubble_id)) {
        out.trace.push_back(protocol_error(now, msg.app, "retract_unknown"));
        return out;
    }
    AppState& app = it->second;
    BubbleReplica& replica = app.replicas.at(rc.bubble_id);
    if (rc.cause == RetractCause::preempted) {
        if (replica.phase == BubblePhase::active) {
            out.append(start_switch(app, replica, SwitchReason::preempted, std::nullopt, now));
        }
        return out;
    }
    const DestructCause cause = rc.cause == RetractCause::task_done ? DestructCause::task_done
                                                                    : DestructCause::retract_command;
    DestructOutcome res = self_destruct(replica, cause, now);
    for (auto& ev : res.trace) out.trace.push_back(std::move(ev));
    for (auto& m : res.messages) out.messages.push_back(std::move(m));
    if (res.destroyed) app.replicas.erase(rc.bubble_id);
    return out;
}

Outputs RemoteController::start_switch(AppState& app, BubbleReplica& replica, SwitchReason reason,
                                       const std::optional<NodeId>& recommendation, SimTimeMs now) {
    Outputs out;
    SwitchPlan plan = plan_switch(replica, reason, recommendation);
    replica.phase = BubblePhase::switching;
    out.trace.push_back(TraceEvent(now, "bubble_switching")
                            .with("app", replica.app_id)
                            .with("bubble", replica.bubble_id)
                            .with("host", profile_.node_id));
    out.trace.push_back(TraceEvent(now, "switch_proposed")
                            .with("app", replica.app_id)
                            .with("bubble", replica.bubble_id)
                            .with("from", profile_.node_id)
                            .with("to", plan.target));
    Message msg;
    msg.from = profile_.node_id;
    msg.to = app.source_device;
    msg.app = replica.app_id;
    msg.body = MsgSwitchNotice{replica.bubble_id, profile_.node_id, plan.target,
                               std::move(plan.proposed_map)};
    out.messages.push_back(std::move(msg));
    return out;
}

Outputs RemoteController::on_preempt(const EnvPreempt& env, SimTimeMs now) {
    Outputs out;
    auto it = apps_.find(env.app_id);
    if (it == apps_.end()) return out;
    AppState& app = it->second;
    for (const auto& bubble : env.bubbles) {
        auto rit = app.replicas.find(bubble);
        if (rit == app.replicas.end() || rit->second.phase != BubblePhase::active) continue;
        out.trace.push_back(TraceEvent(now, "preempted")
                                .with("app", env.app_id)
                                .with("bubble", bubble)
                                .with("host", profile_.node_id)
                                .with("by", env.by));
        out.append(start_switch(app, rit->second, SwitchReason::preempted, std::nullopt, now));
    }
    return out;
}

Outputs RemoteController::on_message(const Message& msg, SimTimeMs now) {
    Outputs out;
    if (const auto* qr = std::get_if<MsgQualificationRequest>(&msg.body)) {
        (void)qr;
        Message reply;
        reply.from = profile_.node_id;
        reply.to = msg.from;
        reply.app = msg.app;
        reply.body = MsgQualificationReply{profile_.capabilities};
        out.messages.push_back(std::move(reply));
        return out;
    }
    if (const auto* pr = std::get_if<MsgPermissionRequest>(&msg.body)) {
        Message reply;
        reply.from = profile_.node_id;
        reply.to = msg.from;
        reply.app = msg.app;
        reply.body = MsgPermissionReply{pr->bubble_id, grant_permission_,
                                        grant_permission_ ? "ok" : "denied"};
        out.messages.push_back(std::move(reply));
        return out;
    }
    if (const auto* tr = std::get_if<MsgBubbleTransfer>(&msg.body)) {
        return on_transfer(msg, *tr, now);
    }
    if (const auto* bm = std::get_if<MsgBubblesMap>(&msg.body)) {
        return on_map(msg, bm->map, now);
    }
    if (const auto* rc = std::get_if<MsgRetractCommand>(&msg.body)) {
        return on_retract(msg, *rc, now);
    }
    if (const auto* hb = std::get_if<MsgStatusHeartbeat>(&msg.body)) {
        (void)hb;
        auto it = apps_.find(msg.app);
        if (it != apps_.end() && msg.from == it->second.source_device) {
            it->second.last_c0_contact = now;  // the only lease refresher
        }
        return out;
    }
    if (const auto* ci = std::get_if<MsgContextInfo>(&msg.body)) {
        auto it = apps_.find(msg.app);
        if (it == apps_.end()) {
            out.trace.push_back(protocol_error(now, msg.app, "context_for_unknown_app"));
            return out;
        }
        for (auto& [bubble_id, replica] : it->second.replicas) {
            for (auto& ev : on_context_change(replica, ci->var, ContextOrigin::pushed_by_c0, now)) {
                out.trace.push_back(std::move(ev));
            }
        }
        return out;
    }
    if (const auto* data = std::get_if<MsgAppData>(&msg.body)) {
        auto it = apps_.find(msg.app);
        const BubbleReplica* r = nullptr;
        if (it != apps_.end()) {
            auto rit = it->second.replicas.find(data->bubble_id);
            if (rit != it->second.replicas.end()) r = &rit->second;
        }
        if (r && r->phase == BubblePhase::active) {
            out.trace.push_back(TraceEvent(now, "app_data_delivered")
                                    .with("app", msg.app)
                                    .with("bubble", data->bubble_id)
                                    .with("host", profile_.node_id)
                                    .with("from", msg.from));
        } else {
            out.trace.push_back(TraceEvent(now, "undeliverable")
                                    .with("app", msg.app)
                                    .with("bubble", data->bubble_id)
                                    .with("host", profile_.node_id));
        }
        return out;
    }
    out.trace.push_back(protocol_error(now, msg.app, "unexpected_type"));
    return out;
}

Outputs RemoteController::on_timer(const std::string& tag, SimTimeMs now) {
    Outputs out;
    if (starts_with(tag, "hb:")) {
        const AppId app_id = tag.substr(3);
        auto it = apps_.find(app_id);
        if (it == apps_.end()) return out;
        AppState& app = it->second;
        if (app.replicas.empty()) {
            app.hb_running = false;
            return out;
        }
        out.append(heartbeat_now(app_id, app, now));
        out.timers.push_back(TimerRequest{now + cfg_.heartbeat_interval_ms, "hb:" + app_id});
        return out;
    }
    if (starts_with(tag, "cilease:")) {
        const AppId app_id = tag.substr(8);
        auto it = apps_.find(app_id);
        if (it == apps_.end()) return out;
        AppState& app = it->second;
        if (app.replicas.empty()) return out;  // nothing to orphan
        if (now < app.last_c0_contact + cfg_.lease_ms()) {
            out.timers.push_back(
                TimerRequest{app.last_c0_contact + cfg_.lease_ms(), "cilease:" + app_id});
            return out;
        }
        // C0 has been silent for a full lease: destroy everything we host
        // before the source copies can come back to life
        std::vector<BubbleId> gone;
        for (auto& [bubble_id, replica] : app.replicas) {
            DestructOutcome res = self_destruct(replica, DestructCause::lease_expired, now);
            for (auto& ev : res.trace) out.trace.push_back(std::move(ev));
            for (auto& m : res.messages) out.messages.push_back(std::move(m));
            if (res.destroyed) gone.push_back(bubble_id);
        }
        for (const auto& bubble_id : gone) app.replicas.erase(bubble_id);
        return out;
    }
    return out;
}

}  // namespace bubblecodes
