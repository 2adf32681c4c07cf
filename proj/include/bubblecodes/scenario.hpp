#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bubblecodes/controller.hpp"
#include "bubblecodes/model.hpp"
#include "bubblecodes/simnet.hpp"
#include "bubblecodes/trace.hpp"

namespace bubblecodes {

/// One timestamped scenario event, already resolved to a simulator event.
struct ScenarioEvent {
    SimTimeMs at = 0;
    SimEventKind kind;
    int line = 0;
};

/// A parsed .scn file: declarations (zones, users, nodes, devices, apps with
/// their bubbles) followed by timestamped events.
struct ScenarioFile {
    std::vector<ZoneId> zones;
    std::vector<UserId> users;
    std::vector<NodeProfile> nodes;
    std::vector<DeviceSpec> devices;
    std::vector<AppManifest> apps;
    std::vector<ScenarioEvent> events;

    const AppManifest* find_app(const AppId& id) const;
    const NodeProfile* find_node(const NodeId& id) const;
    const DeviceSpec* find_device(const NodeId& id) const;
    SimTimeMs max_link_latency() const;
};

struct ParseError {
    int line = 0;
    std::string code;  // token, e.g. "undeclared_id"
    std::string message;
};

using ParseResult = std::variant<ScenarioFile, ParseError>;

/// Parses scenario text; returns the structured file or the first error with
/// its line number.
ParseResult parse_scenario(const std::string& text);

/// Canonical text form; parse(print(parse(text))) is a fixpoint.
std::string print_scenario(const ScenarioFile& scenario);

struct RunOptions {
    std::uint64_t seed = 0;
    TimerConfig timers;
    SimTimeMs max_ms = 600000;
};

/// Builds the world, launches every app at t=0, schedules the events, steps
/// to quiescence, and returns the full trace.
std::vector<TraceEvent> run_scenario(const ScenarioFile& scenario, const RunOptions& opts);

struct InvariantResult {
    std::string id;    // "I1".."I9"
    std::string name;
    bool pass = true;
    int line = 0;        // 1-based trace line of the first violation
    SimTimeMs at = 0;
    std::string detail;
};

struct InvariantReport {
    std::vector<InvariantResult> results;  // always exactly I1..I9

    bool all_pass() const;
    const InvariantResult& get(const std::string& id) const;
    std::string to_text() const;  // one line per invariant
};

/// Replays a trace against its scenario and evaluates the nine protocol
/// invariants. Throws std::invalid_argument when the trace does not belong to
/// the scenario (unknown apps, bubbles or nodes).
InvariantReport check_trace(const std::vector<TraceEvent>& trace, const ScenarioFile& scenario,
                            const TimerConfig& timers = {});

struct FuzzBounds {
    int max_nodes = 4;
    int max_bubbles = 3;
    int max_events = 50;
};

/// Generates a random but valid scenario; the same seed yields the identical
/// scenario.
ScenarioFile fuzz_generate(std::uint64_t seed, const FuzzBounds& bounds);

/// World construction shared by run_scenario and the CLI.
WorldSpec to_world_spec(const ScenarioFile& scenario, std::uint64_t seed,
                        const TimerConfig& timers);

}  // namespace bubblecodes
