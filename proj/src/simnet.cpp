#include "bubblecodes/simnet.hpp"

#include <algorithm>
#include <stdexcept>

namespace bubblecodes {

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

}  // namespace

Simulation::Simulation(WorldSpec spec) : spec_(std::move(spec)) {
    validate_timer_config(spec_.timers);
    std::set<ZoneId> zones(spec_.zones.begin(), spec_.zones.end());
    if (zones.size() != spec_.zones.size()) throw std::invalid_argument("duplicate zone");

    std::set<NodeId> ids;
    for (const auto& profile : spec_.nodes) {
        if (!zones.count(profile.zone_id)) {
            throw std::invalid_argument("node '" + profile.node_id + "' in unknown zone");
        }
        if (profile.link_latency_ms < 0) throw std::invalid_argument("negative latency");
        if (!ids.insert(profile.node_id).second) {
            throw std::invalid_argument("duplicate node id '" + profile.node_id + "'");
        }
        nodes_.emplace(profile.node_id, RemoteController(profile, spec_.timers));
    }
    for (const auto& dev : spec_.devices) {
        if (!zones.count(dev.zone)) {
            throw std::invalid_argument("device '" + dev.device_id + "' in unknown zone");
        }
        if (!ids.insert(dev.device_id).second) {
            throw std::invalid_argument("duplicate node id '" + dev.device_id + "'");
        }
        device_zone_[dev.device_id] = dev.zone;
        device_user_[dev.device_id] = dev.user;
    }
    for (const auto& manifest : spec_.apps) {
        if (!device_zone_.count(manifest.source_device)) {
            throw std::invalid_argument("app '" + manifest.app_id +
                                        "' sourced from unknown device");
        }
        if (c0s_.count(manifest.app_id)) {
            throw std::invalid_argument("duplicate app id '" + manifest.app_id + "'");
        }
        app_device_[manifest.app_id] = manifest.source_device;
        c0s_.emplace(manifest.app_id, SourceController(manifest, spec_.timers));
    }
    if (c0s_.empty()) throw std::invalid_argument("no apps to run");
}

bool Simulation::is_device(const NodeId& id) const { return device_zone_.count(id) > 0; }

const ZoneId& Simulation::zone_of(const NodeId& id) const {
    auto dit = device_zone_.find(id);
    if (dit != device_zone_.end()) return dit->second;
    return nodes_.at(id).profile().zone_id;
}

SimTimeMs Simulation::latency_of(const NodeId& id) const {
    if (is_device(id)) return 0;
    return nodes_.at(id).profile().link_latency_ms;
}

SimTimeMs Simulation::max_link_latency() const {
    SimTimeMs m = 0;
    for (const auto& profile : spec_.nodes) m = std::max(m, profile.link_latency_ms);
    return m;
}

SimTimeMs Simulation::settle_window() const {
    return spec_.timers.lease_ms() + max_link_latency() + spec_.timers.heartbeat_interval_ms + 1;
}

std::vector<NodeProfile> Simulation::live_nodes_in_zone(const ZoneId& zone) const {
    std::vector<NodeProfile> out;
    for (const auto& [id, ctrl] : nodes_) {
        if (!failed_.count(id) && ctrl.profile().zone_id == zone) out.push_back(ctrl.profile());
    }
    return out;
}

bool Simulation::is_heartbeat(const Message& msg) {
    return std::holds_alternative<MsgStatusHeartbeat>(msg.body);
}

void Simulation::push_event(SimTimeMs at, SimEventKind kind) {
    const bool inert_kind =
        std::holds_alternative<EvTimer>(kind) ||
        (std::holds_alternative<EvDeliver>(kind) && is_heartbeat(std::get<EvDeliver>(kind).msg));
    if (!inert_kind) ++noninert_pending_;
    queue_.push(SimEvent{at, next_event_seq_++, std::move(kind)});
}

void Simulation::schedule(SimTimeMs at, SimEventKind kind) {
    if (at < clock_) throw std::invalid_argument("cannot schedule in the past");
    ++scenario_pending_;
    push_event(at, std::move(kind));
}

void Simulation::absorb(const std::string& owner, bool for_app, Outputs&& out, SimTimeMs now) {
    for (auto& ev : out.trace) {
        trace_.push_back(std::move(ev));
        note_activity(now);
    }
    for (auto& msg : out.messages) {
        msg.seq = ++next_seq_[{msg.from, msg.to}];
        trace_.push_back(TraceEvent(now, "msg_sent")
                             .with("type", std::string(message_type(msg.body)))
                             .with("from", msg.from)
                             .with("to", msg.to)
                             .with("app", msg.app)
                             .with("seq", msg.seq));
        if (!is_heartbeat(msg)) note_activity(now);
        const SimTimeMs lat =
            msg.from == msg.to ? 0 : latency_of(msg.from) + latency_of(msg.to);
        push_event(now + lat, EvDeliver{std::move(msg)});
    }
    for (auto& timer : out.timers) {
        push_event(timer.at, EvTimer{for_app, owner, std::move(timer.tag)});
    }
}

void Simulation::launch(SimTimeMs now) {
    trace_.push_back(TraceEvent(now, "run_start").with("seed", spec_.seed));
    for (auto& [app_id, c0] : c0s_) {
        std::vector<std::string> bubbles;
        for (const auto& spec : c0.manifest().bubbles) bubbles.push_back(spec.bubble_id);
        trace_.push_back(TraceEvent(now, "app_loaded")
                             .with("app", app_id)
                             .with("device", c0.source_device())
                             .with("bubbles", join(bubbles)));
    }
    for (auto& [app_id, c0] : c0s_) {
        const ZoneId& zone = device_zone_.at(c0.source_device());
        Outputs out = c0.handle(EnvDiscovery{live_nodes_in_zone(zone)}, now);
        absorb(app_id, true, std::move(out), now);
    }
    note_activity(now);
    launched_ = true;
}

void Simulation::deliver(const Message& msg, SimTimeMs now) {
    const auto sent_fields = [&](TraceEvent ev) {
        return std::move(ev.with("type", std::string(message_type(msg.body)))
                             .with("from", msg.from)
                             .with("to", msg.to)
                             .with("app", msg.app)
                             .with("seq", msg.seq));
    };
    const bool hb = is_heartbeat(msg);

    if (failed_.count(msg.to)) {
        trace_.push_back(sent_fields(TraceEvent(now, "msg_dropped").with("reason", "node_down")));
        if (!hb) note_activity(now);
        return;
    }
    if (msg.from != msg.to && zone_of(msg.from) != zone_of(msg.to)) {
        trace_.push_back(
            sent_fields(TraceEvent(now, "msg_dropped").with("reason", "out_of_range")));
        if (!hb) note_activity(now);
        return;
    }
    trace_.push_back(sent_fields(TraceEvent(now, "msg_recv")));

    if (is_device(msg.to)) {
        auto it = c0s_.find(msg.app);
        if (it == c0s_.end() || it->second.source_device() != msg.to) {
            trace_.push_back(TraceEvent(now, "protocol_error")
                                 .with("app", msg.app)
                                 .with("detail", "no_controller"));
            note_activity(now);
            return;
        }
        absorb(msg.app, true, it->second.handle(MsgIn{msg}, now), now);
        return;
    }
    auto nit = nodes_.find(msg.to);
    if (nit == nodes_.end()) {
        trace_.push_back(TraceEvent(now, "protocol_error")
                             .with("app", msg.app)
                             .with("detail", "unknown_destination"));
        note_activity(now);
        return;
    }
    absorb(msg.to, false, nit->second.handle(MsgIn{msg}, now), now);
}

void Simulation::handle_move(const EvMove& ev, SimTimeMs now) {
    device_zone_[ev.device] = ev.zone;
    trace_.push_back(TraceEvent(now, "device_moved").with("device", ev.device).with("zone", ev.zone));
    // moving triggers re-discovery for every app launched from this device
    for (auto& [app_id, c0] : c0s_) {
        if (c0.source_device() != ev.device) continue;
        Outputs out = c0.handle(EnvDiscovery{live_nodes_in_zone(ev.zone)}, now);
        absorb(app_id, true, std::move(out), now);
    }
}

void Simulation::handle_fail(const EvFail& ev, SimTimeMs now) {
    trace_.push_back(TraceEvent(now, "node_failed").with("node", ev.node));
    failed_.insert(ev.node);
    auto it = nodes_.find(ev.node);
    if (it == nodes_.end()) return;
    for (const auto& [app_id, bubble_id] : it->second.hosted()) {
        trace_.push_back(TraceEvent(now, "bubble_destroyed")
                             .with("app", app_id)
                             .with("bubble", bubble_id)
                             .with("host", ev.node)
                             .with("cause", "node_fail"));
    }
    // a crash wipes the controller; recovery brings the node back empty
    NodeProfile profile = it->second.profile();
    it->second = RemoteController(std::move(profile), spec_.timers);
}

void Simulation::handle_claim(const EvClaim& ev, SimTimeMs now) {
    const UserClaim& claim = ev.claim;
    auto it = claims_.find(claim.node_id);
    if (it != claims_.end() && claim.priority <= it->second.priority) {
        trace_.push_back(TraceEvent(now, "claim_rejected")
                             .with("node", claim.node_id)
                             .with("user", claim.user_id)
                             .with("priority", static_cast<std::int64_t>(claim.priority)));
        return;
    }
    claims_[claim.node_id] = claim;
    trace_.push_back(TraceEvent(now, "claim_recorded")
                         .with("node", claim.node_id)
                         .with("user", claim.user_id)
                         .with("priority", static_cast<std::int64_t>(claim.priority)));

    if (is_device(claim.node_id) || failed_.count(claim.node_id)) return;
    if (claim.priority <= 0) return;  // never beats an owner's implicit floor

    auto nit = nodes_.find(claim.node_id);
    if (nit == nodes_.end()) return;
    std::map<AppId, std::vector<BubbleId>> affected;
    for (const auto& [app_id, bubble_id] : nit->second.hosted()) {
        const UserId& owner = device_user_.at(app_device_.at(app_id));
        if (owner == claim.user_id) continue;
        const BubbleReplica* r = nit->second.replica(app_id, bubble_id);
        if (r && r->phase == BubblePhase::active) affected[app_id].push_back(bubble_id);
    }
    for (auto& [app_id, bubbles] : affected) {
        absorb(claim.node_id, false,
               nit->second.handle(EnvPreempt{app_id, bubbles, claim.user_id}, now), now);
    }
}

void Simulation::handle_context(const EvSetContext& ev, SimTimeMs now) {
    const std::uint64_t version = ++ctx_versions_[ev.key];
    trace_.push_back(TraceEvent(now, "context_set")
                         .with("key", ev.key)
                         .with("value", ev.value)
                         .with("v", version));
    const ContextVariable var{ev.key, ev.value, version};
    for (auto& [app_id, c0] : c0s_) {
        absorb(app_id, true, c0.handle(EnvContextChange{var}, now), now);
    }
    for (auto& [node_id, ctrl] : nodes_) {
        if (failed_.count(node_id) || ctrl.hosted().empty()) continue;
        absorb(node_id, false, ctrl.handle(EnvSelfDetect{var}, now), now);
    }
}

void Simulation::handle_complete(const EvComplete& ev, SimTimeMs now) {
    auto cit = c0s_.find(ev.app);
    if (cit == c0s_.end()) return;
    // route to the replica that is actually running the task
    for (auto& [node_id, ctrl] : nodes_) {
        if (failed_.count(node_id)) continue;
        const BubbleReplica* r = ctrl.replica(ev.app, ev.bubble);
        if (r && r->phase != BubblePhase::destroyed) {
            absorb(node_id, false, ctrl.handle(EnvRemoteCompletion{ev.app, ev.bubble}, now), now);
            return;
        }
    }
    absorb(ev.app, true, cit->second.handle(EnvCompletion{ev.bubble}, now), now);
}

void Simulation::dispatch(const SimEventKind& kind, SimTimeMs now) {
    struct Visitor {
        Simulation& sim;
        SimTimeMs now;
        void operator()(const EvDeliver& ev) { sim.deliver(ev.msg, now); }
        void operator()(const EvTimer& ev) {
            if (ev.for_app) {
                auto it = sim.c0s_.find(ev.owner);
                if (it == sim.c0s_.end()) return;
                sim.absorb(ev.owner, true, it->second.handle(TimerIn{ev.tag}, now), now);
            } else {
                if (sim.failed_.count(ev.owner)) return;  // timers die with the node
                auto it = sim.nodes_.find(ev.owner);
                if (it == sim.nodes_.end()) return;
                sim.absorb(ev.owner, false, it->second.handle(TimerIn{ev.tag}, now), now);
            }
        }
        void operator()(const EvMove& ev) { sim.handle_move(ev, now); }
        void operator()(const EvFail& ev) { sim.handle_fail(ev, now); }
        void operator()(const EvRecover& ev) {
            sim.trace_.push_back(TraceEvent(now, "node_recovered").with("node", ev.node));
            sim.failed_.erase(ev.node);
        }
        void operator()(const EvClaim& ev) { sim.handle_claim(ev, now); }
        void operator()(const EvRelease& ev) {
            auto it = sim.claims_.find(ev.node);
            if (it != sim.claims_.end() && it->second.user_id == ev.user) {
                sim.claims_.erase(it);
                sim.trace_.push_back(
                    TraceEvent(now, "claim_released").with("node", ev.node).with("user", ev.user));
            } else {
                sim.trace_.push_back(
                    TraceEvent(now, "release_ignored").with("node", ev.node).with("user", ev.user));
            }
        }
        void operator()(const EvSetContext& ev) { sim.handle_context(ev, now); }
        void operator()(const EvComplete& ev) { sim.handle_complete(ev, now); }
    };
    std::visit(Visitor{*this, now}, kind);
}

bool Simulation::step() {
    if (queue_.empty()) return false;
    SimEvent ev = queue_.top();
    queue_.pop();
    clock_ = ev.at;

    const bool inert_kind =
        std::holds_alternative<EvTimer>(ev.kind) ||
        (std::holds_alternative<EvDeliver>(ev.kind) &&
         is_heartbeat(std::get<EvDeliver>(ev.kind).msg));
    if (!inert_kind) --noninert_pending_;
    const bool scenario_kind = !std::holds_alternative<EvDeliver>(ev.kind) &&
                               !std::holds_alternative<EvTimer>(ev.kind);
    if (scenario_kind) {
        --scenario_pending_;
        note_activity(ev.at);
    }
    dispatch(ev.kind, ev.at);
    return true;
}

void Simulation::run(SimTimeMs max_ms) {
    if (!launched_) launch(clock_);
    const SimTimeMs settle = settle_window();
    while (!queue_.empty()) {
        const SimTimeMs next_at = queue_.top().at;
        if (next_at > max_ms) break;
        if (scenario_pending_ == 0 && noninert_pending_ == 0 &&
            next_at > last_activity_ + settle) {
            break;  // only heartbeat chatter is left
        }
        step();
    }
    for (auto& [app_id, c0] : c0s_) {
        trace_.push_back(TraceEvent(clock_, "final_placement")
                             .with("app", app_id)
                             .with("entries", render_map_entries(c0.map()))
                             .with("v", c0.map().version));
    }
    trace_.push_back(TraceEvent(clock_, "run_end"));
}

}  // namespace bubblecodes
