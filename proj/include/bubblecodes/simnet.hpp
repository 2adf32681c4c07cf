#pragma once

#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "bubblecodes/controller.hpp"
#include "bubblecodes/model.hpp"
#include "bubblecodes/trace.hpp"
#include "bubblecodes/wire.hpp"

namespace bubblecodes {

struct DeviceSpec {
    NodeId device_id;
    ZoneId zone;
    UserId user;
};

/// Everything the simulator needs to build a world: the static environment
/// plus the applications launched at t=0.
struct WorldSpec {
    std::vector<ZoneId> zones;
    std::vector<NodeProfile> nodes;  // non-device nodes; zones are static
    std::vector<DeviceSpec> devices;
    std::vector<AppManifest> apps;
    TimerConfig timers;
    std::uint64_t seed = 0;
};

struct EvDeliver {
    Message msg;
};
struct EvTimer {
    bool for_app = false;  // true: owner is an app id (C0), false: a node id
    std::string owner;
    std::string tag;
};
struct EvMove {
    NodeId device;
    ZoneId zone;
};
struct EvFail {
    NodeId node;
};
struct EvRecover {
    NodeId node;
};
struct EvClaim {
    UserClaim claim;
};
struct EvRelease {
    UserId user;
    NodeId node;
};
struct EvSetContext {
    std::string key;
    std::string value;
};
struct EvComplete {
    AppId app;
    BubbleId bubble;
};

using SimEventKind = std::variant<EvDeliver, EvTimer, EvMove, EvFail, EvRecover, EvClaim,
                                  EvRelease, EvSetContext, EvComplete>;

/// A scheduled occurrence. Events execute in (at, seq) order; seq is assigned
/// at scheduling time and strictly increases.
struct SimEvent {
    SimTimeMs at = 0;
    std::uint64_t seq = 0;
    SimEventKind kind;
};

/// Deterministic discrete-event simulator of the pervasive environment:
/// zones as radio range, device mobility, per-node link latency, node
/// failure, privilege claims, and context updates. A device only reaches
/// nodes in its current zone; everything else is dropped and traced.
class Simulation {
public:
    explicit Simulation(WorldSpec spec);

    /// Schedules a scenario event. Call before run(); events must not precede
    /// the current clock.
    void schedule(SimTimeMs at, SimEventKind kind);

    /// Launches every app at t=0, then processes events until quiescence (no
    /// scenario events left, only heartbeat traffic pending, and a full
    /// settle window without state changes) or until the cutoff.
    void run(SimTimeMs max_ms = 600000);

    /// Processes a single event. Returns false when the queue is empty.
    bool step();

    const std::vector<TraceEvent>& trace() const { return trace_; }
    SimTimeMs clock() const { return clock_; }
    SimTimeMs max_link_latency() const;
    SimTimeMs settle_window() const;

    const SourceController& controller(const AppId& app) const { return c0s_.at(app); }
    const RemoteController& node(const NodeId& id) const { return nodes_.at(id); }
    const WorldSpec& spec() const { return spec_; }

    /// Current zone of a device or node.
    const ZoneId& zone_of(const NodeId& id) const;

private:
    void launch(SimTimeMs now);
    void dispatch(const SimEventKind& kind, SimTimeMs now);
    void deliver(const Message& msg, SimTimeMs now);
    void handle_move(const EvMove& ev, SimTimeMs now);
    void handle_fail(const EvFail& ev, SimTimeMs now);
    void handle_claim(const EvClaim& ev, SimTimeMs now);
    void handle_context(const EvSetContext& ev, SimTimeMs now);
    void handle_complete(const EvComplete& ev, SimTimeMs now);

    void absorb(const std::string& owner, bool for_app, Outputs&& out, SimTimeMs now);
    void push_event(SimTimeMs at, SimEventKind kind);
    std::vector<NodeProfile> live_nodes_in_zone(const ZoneId& zone) const;
    SimTimeMs latency_of(const NodeId& id) const;
    bool is_device(const NodeId& id) const;
    void note_activity(SimTimeMs now) { last_activity_ = now; }
    static bool is_heartbeat(const Message& msg);

    WorldSpec spec_;
    std::map<AppId, SourceController> c0s_;
    std::map<NodeId, RemoteController> nodes_;
    std::map<NodeId, ZoneId> device_zone_;
    std::map<NodeId, UserId> device_user_;
    std::map<AppId, NodeId> app_device_;
    std::set<NodeId> failed_;
    std::map<NodeId, UserClaim> claims_;
    std::map<std::string, std::uint64_t> ctx_versions_;
    std::map<std::pair<NodeId, NodeId>, std::uint64_t> next_seq_;

    struct EventOrder {
        bool operator()(const SimEvent& a, const SimEvent& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<SimEvent, std::vector<SimEvent>, EventOrder> queue_;
    std::uint64_t next_event_seq_ = 0;
    std::uint64_t scenario_pending_ = 0;
    std::uint64_t noninert_pending_ = 0;

    SimTimeMs clock_ = 0;
    SimTimeMs last_activity_ = 0;
    std::vector<TraceEvent> trace_;
    bool launched_ = false;
};

}  // namespace bubblecodes
