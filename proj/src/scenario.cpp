#include "bubblecodes/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace bubblecodes {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < line.size()) {
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t')) ++pos;
        if (pos >= line.size()) break;
        if (line[pos] == '#') break;  // comment to end of line
        std::size_t end = pos;
        while (end < line.size() && line[end] != ' ' && line[end] != '\t') ++end;
        out.push_back(line.substr(pos, end - pos));
        pos = end;
    }
    return out;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

// splits "key=value"; returns nullopt unless the key matches
std::optional<std::string> kv(const std::string& token, const std::string& key) {
    if (token.size() <= key.size() + 1) {
        if (token == key + "=") return std::string();
        return std::nullopt;
    }
    if (token.compare(0, key.size(), key) != 0 || token[key.size()] != '=') return std::nullopt;
    return token.substr(key.size() + 1);
}

std::optional<CapabilitySet> parse_cap_list(const std::string& s) {
    CapabilitySet out;
    if (s.empty()) return out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        const std::string tok = s.substr(pos, next - pos);
        if (!is_valid_capability_name(tok)) return std::nullopt;
        out.insert(CapabilityTag{tok});
        if (next == s.size()) break;
        pos = next + 1;
    }
    return out;
}

std::string join_caps_text(const CapabilitySet& set) {
    std::string out;
    for (const auto& c : set) {
        if (!out.empty()) out += ',';
        out += c.name;
    }
    return out;
}

}  // namespace

const AppManifest* ScenarioFile::find_app(const AppId& id) const {
    for (const auto& a : apps) {
        if (a.app_id == id) return &a;
    }
    return nullptr;
}

const NodeProfile* ScenarioFile::find_node(const NodeId& id) const {
    for (const auto& n : nodes) {
        if (n.node_id == id) return &n;
    }
    return nullptr;
}

const DeviceSpec* ScenarioFile::find_device(const NodeId& id) const {
    for (const auto& d : devices) {
        if (d.device_id == id) return &d;
    }
    return nullptr;
}

SimTimeMs ScenarioFile::max_link_latency() const {
    SimTimeMs m = 0;
    for (const auto& n : nodes) m = std::max(m, n.link_latency_ms);
    return m;
}

ParseResult parse_scenario(const std::string& text) {
    ScenarioFile out;
    std::set<std::string> zone_ids, user_ids, node_ids, app_ids;
    std::map<std::string, std::set<std::string>> bubbles_of;
    std::set<std::string> live;  // non-device nodes currently up, for fail/recover
    bool events_started = false;
    SimTimeMs prev_at = 0;

    const auto err = [](int line, std::string code, std::string message) {
        return ParseError{line, std::move(code), std::move(message)};
    };

    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto tok = tokenize(raw);
        if (tok.empty()) continue;
        const std::string& kw = tok[0];

        if (kw == "at") {
            events_started = true;
            if (tok.size() < 3) return err(lineno, "bad_value", "event needs a time and a kind");
            auto at = parse_int(tok[1]);
            if (!at || *at < 0) return err(lineno, "bad_timestamp", "bad time '" + tok[1] + "'");
            if (*at < prev_at) {
                return err(lineno, "bad_timestamp", "timestamps must be nondecreasing");
            }
            prev_at = *at;
            const std::string& kind = tok[2];
            ScenarioEvent ev;
            ev.at = *at;
            ev.line = lineno;

            if (kind == "move") {
                if (tok.size() != 5) return err(lineno, "bad_value", "move <device> <zone>");
                if (!out.find_device(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown device '" + tok[3] + "'");
                }
                if (!zone_ids.count(tok[4])) {
                    return err(lineno, "undeclared_id", "unknown zone '" + tok[4] + "'");
                }
                ev.kind = EvMove{tok[3], tok[4]};
            } else if (kind == "fail") {
                if (tok.size() != 4) return err(lineno, "bad_value", "fail <node>");
                if (!out.find_node(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown node '" + tok[3] + "'");
                }
                if (!live.count(tok[3])) {
                    return err(lineno, "bad_value", "node '" + tok[3] + "' is already down");
                }
                live.erase(tok[3]);
                ev.kind = EvFail{tok[3]};
            } else if (kind == "recover") {
                if (tok.size() != 4) return err(lineno, "bad_value", "recover <node>");
                if (!out.find_node(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown node '" + tok[3] + "'");
                }
                if (live.count(tok[3])) {
                    return err(lineno, "bad_value", "node '" + tok[3] + "' is already up");
                }
                live.insert(tok[3]);
                ev.kind = EvRecover{tok[3]};
            } else if (kind == "claim") {
                if (tok.size() != 6) return err(lineno, "bad_value", "claim <user> <node> <prio>");
                if (!user_ids.count(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown user '" + tok[3] + "'");
                }
                if (!node_ids.count(tok[4])) {
                    return err(lineno, "undeclared_id", "unknown node '" + tok[4] + "'");
                }
                auto prio = parse_int(tok[5]);
                if (!prio) return err(lineno, "bad_value", "bad priority '" + tok[5] + "'");
                ev.kind = EvClaim{UserClaim{tok[3], tok[4], static_cast<int>(*prio)}};
            } else if (kind == "release") {
                if (tok.size() != 5) return err(lineno, "bad_value", "release <user> <node>");
                if (!user_ids.count(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown user '" + tok[3] + "'");
                }
                if (!node_ids.count(tok[4])) {
                    return err(lineno, "undeclared_id", "unknown node '" + tok[4] + "'");
                }
                ev.kind = EvRelease{tok[3], tok[4]};
            } else if (kind == "context") {
                if (tok.size() != 5) return err(lineno, "bad_value", "context <key> <value>");
                if (!is_valid_id(tok[3])) return err(lineno, "bad_value", "bad key '" + tok[3] + "'");
                ev.kind = EvSetContext{tok[3], tok[4]};
            } else if (kind == "complete") {
                if (tok.size() != 5) return err(lineno, "bad_value", "complete <app> <bubble>");
                if (!app_ids.count(tok[3])) {
                    return err(lineno, "undeclared_id", "unknown app '" + tok[3] + "'");
                }
                if (!bubbles_of[tok[3]].count(tok[4])) {
                    return err(lineno, "undeclared_id", "unknown bubble '" + tok[4] + "'");
                }
                ev.kind = EvComplete{tok[3], tok[4]};
            } else {
                return err(lineno, "unknown_keyword", "unknown event '" + kind + "'");
            }
            out.events.push_back(std::move(ev));
            continue;
        }

        if (events_started) {
            return err(lineno, "decl_after_event", "declarations must precede events");
        }

        if (kw == "zone") {
            if (tok.size() != 2) return err(lineno, "bad_value", "zone <id>");
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad zone id '" + tok[1] + "'");
            if (!zone_ids.insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate zone '" + tok[1] + "'");
            }
            out.zones.push_back(tok[1]);
        } else if (kw == "user") {
            if (tok.size() != 2) return err(lineno, "bad_value", "user <id>");
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad user id '" + tok[1] + "'");
            if (!user_ids.insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate user '" + tok[1] + "'");
            }
            out.users.push_back(tok[1]);
        } else if (kw == "node") {
            if (tok.size() != 5) return err(lineno, "bad_value", "node <id> <zone> caps=... latency=...");
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad node id '" + tok[1] + "'");
            if (!node_ids.insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate node '" + tok[1] + "'");
            }
            if (!zone_ids.count(tok[2])) {
                return err(lineno, "undeclared_id", "unknown zone '" + tok[2] + "'");
            }
            auto caps_text = kv(tok[3], "caps");
            if (!caps_text) return err(lineno, "bad_value", "expected caps=...");
            auto set = parse_cap_list(*caps_text);
            if (!set) return err(lineno, "bad_value", "bad capability list '" + *caps_text + "'");
            auto lat_text = kv(tok[4], "latency");
            if (!lat_text) return err(lineno, "bad_value", "expected latency=...");
            auto lat = parse_int(*lat_text);
            if (!lat || *lat < 0) return err(lineno, "bad_value", "bad latency '" + *lat_text + "'");
            out.nodes.push_back(NodeProfile{tok[1], tok[2], std::move(*set), *lat});
            live.insert(tok[1]);
        } else if (kw == "device") {
            if (tok.size() != 4) return err(lineno, "bad_value", "device <id> <zone> user=...");
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad device id '" + tok[1] + "'");
            if (!node_ids.insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate node '" + tok[1] + "'");
            }
            if (!zone_ids.count(tok[2])) {
                return err(lineno, "undeclared_id", "unknown zone '" + tok[2] + "'");
            }
            auto user = kv(tok[3], "user");
            if (!user) return err(lineno, "bad_value", "expected user=...");
            if (!user_ids.count(*user)) {
                return err(lineno, "undeclared_id", "unknown user '" + *user + "'");
            }
            out.devices.push_back(DeviceSpec{tok[1], tok[2], *user});
        } else if (kw == "app") {
            if (tok.size() != 3) return err(lineno, "bad_value", "app <id> device=...");
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad app id '" + tok[1] + "'");
            if (!app_ids.insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate app '" + tok[1] + "'");
            }
            auto device = kv(tok[2], "device");
            if (!device) return err(lineno, "bad_value", "expected device=...");
            if (!out.find_device(*device)) {
                return err(lineno, "undeclared_id", "unknown device '" + *device + "'");
            }
            out.apps.push_back(AppManifest{tok[1], *device, {}});
        } else if (kw == "bubble") {
            if (tok.size() < 4) {
                return err(lineno, "bad_value", "bubble <id> app=... requires=...");
            }
            if (!is_valid_id(tok[1])) return err(lineno, "bad_value", "bad bubble id '" + tok[1] + "'");
            auto app_id = kv(tok[2], "app");
            if (!app_id) return err(lineno, "bad_value", "expected app=...");
            if (!app_ids.count(*app_id)) {
                return err(lineno, "undeclared_id", "unknown app '" + *app_id + "'");
            }
            if (!bubbles_of[*app_id].insert(tok[1]).second) {
                return err(lineno, "duplicate_id", "duplicate bubble '" + tok[1] + "'");
            }
            auto req_text = kv(tok[3], "requires");
            if (!req_text) return err(lineno, "bad_value", "expected requires=...");
            auto reqs = parse_cap_list(*req_text);
            if (!reqs || reqs->empty()) {
                return err(lineno, "bad_value", "bubble needs at least one requirement");
            }
            BubbleSpec spec;
            spec.bubble_id = tok[1];
            spec.requirements = std::move(*reqs);
            spec.payload_tag = tok[1];
            for (std::size_t i = 4; i < tok.size(); ++i) {
                if (auto listen = kv(tok[i], "listen")) {
                    auto mode = listen_mode_from_string(*listen);
                    if (!mode) return err(lineno, "bad_value", "bad listen mode '" + *listen + "'");
                    spec.listen = *mode;
                } else if (auto payload = kv(tok[i], "payload")) {
                    spec.payload_tag = *payload;
                } else {
                    return err(lineno, "bad_value", "unexpected token '" + tok[i] + "'");
                }
            }
            for (auto& app : out.apps) {
                if (app.app_id == *app_id) app.bubbles.push_back(std::move(spec));
            }
        } else {
            return err(lineno, "unknown_keyword", "unknown keyword '" + kw + "'");
        }
    }

    if (out.apps.empty()) return err(lineno, "no_app_declared", "scenario declares no app");
    for (const auto& app : out.apps) {
        if (app.bubbles.empty()) {
            return err(lineno, "no_app_declared", "app '" + app.app_id + "' has no bubbles");
        }
    }
    return out;
}

std::string print_scenario(const ScenarioFile& s) {
    std::string out;
    for (const auto& z : s.zones) out += "zone " + z + "\n";
    for (const auto& u : s.users) out += "user " + u + "\n";
    for (const auto& n : s.nodes) {
        out += "node " + n.node_id + " " + n.zone_id + " caps=" + join_caps_text(n.capabilities) +
               " latency=" + std::to_string(n.link_latency_ms) + "\n";
    }
    for (const auto& d : s.devices) {
        out += "device " + d.device_id + " " + d.zone + " user=" + d.user + "\n";
    }
    for (const auto& a : s.apps) {
        out += "app " + a.app_id + " device=" + a.source_device + "\n";
        for (const auto& b : a.bubbles) {
            out += "bubble " + b.bubble_id + " app=" + a.app_id +
                   " requires=" + join_caps_text(b.requirements) +
                   " listen=" + std::string(to_string(b.listen)) + " payload=" + b.payload_tag +
                   "\n";
        }
    }
    struct Printer {
        std::string operator()(const EvMove& e) { return "move " + e.device + " " + e.zone; }
        std::string operator()(const EvFail& e) { return "fail " + e.node; }
        std::string operator()(const EvRecover& e) { return "recover " + e.node; }
        std::string operator()(const EvClaim& e) {
            return "claim " + e.claim.user_id + " " + e.claim.node_id + " " +
                   std::to_string(e.claim.priority);
        }
        std::string operator()(const EvRelease& e) { return "release " + e.user + " " + e.node; }
        std::string operator()(const EvSetContext& e) { return "context " + e.key + " " + e.value; }
        std::string operator()(const EvComplete& e) { return "complete " + e.app + " " + e.bubble; }
        std::string operator()(const EvDeliver&) { return ""; }
        std::string operator()(const EvTimer&) { return ""; }
    };
    for (const auto& ev : s.events) {
        out += "at " + std::to_string(ev.at) + " " + std::visit(Printer{}, ev.kind) + "\n";
    }
    return out;
}

WorldSpec to_world_spec(const ScenarioFile& scenario, std::uint64_t seed,
                        const TimerConfig& timers) {
    WorldSpec spec;
    spec.zones = scenario.zones;
    spec.nodes = scenario.nodes;
    spec.devices = scenario.devices;
    spec.apps = scenario.apps;
    spec.timers = timers;
    spec.seed = seed;
    return spec;
}

std::vector<TraceEvent> run_scenario(const ScenarioFile& scenario, const RunOptions& opts) {
    Simulation sim(to_world_spec(scenario, opts.seed, opts.timers));
    for (const auto& ev : scenario.events) sim.schedule(ev.at, ev.kind);
    sim.run(opts.max_ms);
    return sim.trace();
}

// ---------------------------------------------------------------------------
// invariant checker

bool InvariantReport::all_pass() const {
    for (const auto& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

const InvariantResult& InvariantReport::get(const std::string& id) const {
    for (const auto& r : results) {
        if (r.id == id) return r;
    }
    throw std::out_of_range("no such invariant " + id);
}

std::string InvariantReport::to_text() const {
    std::string out;
    for (const auto& r : results) {
        out += r.id + " " + r.name + ": " + (r.pass ? "pass" : "FAIL");
        if (!r.pass) {
            out += " at t=" + std::to_string(r.at) + " line=" + std::to_string(r.line) + " (" +
                   r.detail + ")";
        }
        out += "\n";
    }
    return out;
}

namespace {

struct ParsedEntry {
    BubbleId bubble;
    NodeId host;
    std::string status;
};

std::optional<std::vector<ParsedEntry>> parse_entries_field(const std::string& text) {
    std::vector<ParsedEntry> out;
    if (text == "-") return out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        const std::string item = text.substr(pos, next - pos);
        const std::size_t c1 = item.find(':');
        const std::size_t c2 = c1 == std::string::npos ? std::string::npos : item.find(':', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) return std::nullopt;
        out.push_back(ParsedEntry{item.substr(0, c1), item.substr(c1 + 1, c2 - c1 - 1),
                                  item.substr(c2 + 1)});
        if (next == text.size()) break;
        pos = next + 1;
    }
    return out;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    if (text == "-" || text.empty()) return out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t next = text.find(',', pos);
        if (next == std::string::npos) next = text.size();
        out.push_back(text.substr(pos, next - pos));
        if (next == text.size()) break;
        pos = next + 1;
    }
    return out;
}

class TraceChecker {
public:
    TraceChecker(const ScenarioFile& scenario, const TimerConfig& timers)
        : scenario_(scenario), timers_(timers) {
        for (const auto& r : {std::pair{"I1", "source_copy_permanence"},
                              std::pair{"I2", "single_active_replica"},
                              std::pair{"I3", "placement_validity"},
                              std::pair{"I4", "version_sequencing"},
                              std::pair{"I5", "retraction_completeness"},
                              std::pair{"I6", "preemption_resolution"},
                              std::pair{"I7", "zone_isolation"},
                              std::pair{"I8", "phase_graph"},
                              std::pair{"I9", "unused_disjointness"}}) {
            report_.results.push_back(InvariantResult{r.first, r.second, true, 0, 0, ""});
        }
        for (const auto& d : scenario_.devices) device_zone_[d.device_id] = d.zone;
        for (const auto& n : scenario_.nodes) known_ids_.insert(n.node_id);
        for (const auto& d : scenario_.devices) known_ids_.insert(d.device_id);
        for (const auto& u : scenario_.users) known_users_.insert(u);
        max_lat_ = scenario_.max_link_latency();
    }

    InvariantReport run(const std::vector<TraceEvent>& trace) {
        SimTimeMs current = -1;
        for (std::size_t i = 0; i < trace.size(); ++i) {
            const TraceEvent& ev = trace[i];
            const int line = static_cast<int>(i) + 1;
            if (ev.at < current) {
                fail("I4", line, ev.at, "trace timestamps decrease");
            } else if (ev.at > current) {
                if (current >= 0) boundary(current, line - 1);
                current = ev.at;
            }
            process(ev, line);
        }
        if (current >= 0) boundary(current, static_cast<int>(trace.size()));
        finish(current, static_cast<int>(trace.size()));
        return report_;
    }

private:
    using Key = std::pair<AppId, BubbleId>;

    void fail(const std::string& id, int line, SimTimeMs at, const std::string& detail) {
        for (auto& r : report_.results) {
            if (r.id == id && r.pass) {
                r.pass = false;
                r.line = line;
                r.at = at;
                r.detail = detail;
            }
        }
    }

    [[noreturn]] void mismatch(int line, const std::string& what) {
        throw std::invalid_argument("trace/scenario mismatch at line " + std::to_string(line) +
                                    ": " + what);
    }

    const std::string& need(const TraceEvent& ev, int line, const std::string& key) {
        const std::string* v = ev.field(key);
        if (!v) mismatch(line, "missing field '" + key + "' in " + ev.kind);
        return *v;
    }

    const AppManifest& app_of(const TraceEvent& ev, int line) {
        const std::string& app = need(ev, line, "app");
        const AppManifest* m = scenario_.find_app(app);
        if (!m) mismatch(line, "unknown app '" + app + "'");
        return *m;
    }

    void check_node_id(int line, const std::string& id) {
        if (!known_ids_.count(id)) mismatch(line, "unknown node '" + id + "'");
    }

    const ZoneId& zone_of(const NodeId& id) const {
        auto it = device_zone_.find(id);
        if (it != device_zone_.end()) return it->second;
        return scenario_.find_node(id)->zone_id;
    }

    // remote, live nodes sharing the app's device zone
    bool reachable_remote_exists(const AppManifest& app) const {
        const ZoneId& zone = device_zone_.at(app.source_device);
        for (const auto& n : scenario_.nodes) {
            if (!failed_.count(n.node_id) && n.zone_id == zone) return true;
        }
        return false;
    }

    void refresh_i5(SimTimeMs at, int line) {
        (void)line;
        for (const auto& app : scenario_.apps) {
            const bool reachable = reachable_remote_exists(app);
            auto& pending = i5_pending_[app.app_id];
            if (reachable) {
                pending.reset();
                continue;
            }
            if (pending) continue;  // already armed and still empty
            bool any_remote = false;
            for (const auto& spec : app.bubbles) {
                for (const auto& [host, phase] : phases_[{app.app_id, spec.bubble_id}]) {
                    if (host != app.source_device &&
                        (phase == "active" || phase == "switching")) {
                        any_remote = true;
                    }
                }
            }
            if (any_remote) pending = at + timers_.lease_ms() + max_lat_;
        }
    }

    void process(const TraceEvent& ev, int line) {
        const std::string& k = ev.kind;
        if (k == "device_moved") {
            const std::string& device = need(ev, line, "device");
            check_node_id(line, device);
            device_zone_[device] = need(ev, line, "zone");
            refresh_i5(ev.at, line);
        } else if (k == "node_failed") {
            failed_.insert(need(ev, line, "node"));
            refresh_i5(ev.at, line);
        } else if (k == "node_recovered") {
            failed_.erase(need(ev, line, "node"));
            refresh_i5(ev.at, line);
        } else if (k == "bubble_active" || k == "bubble_dormant" || k == "bubble_switching" ||
                   k == "bubble_destroyed") {
            on_phase_event(ev, line);
            refresh_i5(ev.at, line);
        } else if (k == "map_version") {
            on_map_version(ev, line);
        } else if (k == "map_received") {
            const std::string& node = need(ev, line, "node");
            check_node_id(line, node);
            const AppManifest& app = app_of(ev, line);
            auto v = parse_int(need(ev, line, "v"));
            if (v) map_received_[{node, app.app_id}] = static_cast<std::uint64_t>(*v);
        } else if (k == "msg_recv") {
            const std::string& from = need(ev, line, "from");
            const std::string& to = need(ev, line, "to");
            check_node_id(line, from);
            check_node_id(line, to);
            if (from != to && zone_of(from) != zone_of(to)) {
                fail("I7", line, ev.at, "delivery across zones " + from + "->" + to);
            }
        } else if (k == "preempted") {
            const AppManifest& app = app_of(ev, line);
            const std::string& bubble = need(ev, line, "bubble");
            const std::string& host = need(ev, line, "host");
            i6_pending_.push_back(I6Check{app.app_id, bubble, host,
                                          ev.at + timers_.lease_ms() + max_lat_, line});
        } else if (k == "completed") {
            const AppManifest& app = app_of(ev, line);
            completed_.insert({app.app_id, need(ev, line, "bubble")});
        } else if (k == "final_placement") {
            const AppManifest& app = app_of(ev, line);
            auto entries = parse_entries_field(need(ev, line, "entries"));
            if (!entries) mismatch(line, "bad entries field");
            auto v = parse_int(need(ev, line, "v"));
            final_[app.app_id] = {*entries, v ? static_cast<std::uint64_t>(*v) : 0, line, ev.at};
        } else if (k == "claim_recorded" || k == "claim_rejected" || k == "claim_released" ||
                   k == "release_ignored") {
            const std::string& user = need(ev, line, "user");
            if (!known_users_.count(user)) mismatch(line, "unknown user '" + user + "'");
            check_node_id(line, need(ev, line, "node"));
        }
    }

    void on_phase_event(const TraceEvent& ev, int line) {
        const AppManifest& app = app_of(ev, line);
        const std::string& bubble = need(ev, line, "bubble");
        const std::string& host = need(ev, line, "host");
        if (!app.find(bubble)) mismatch(line, "unknown bubble '" + bubble + "'");
        check_node_id(line, host);
        const bool on_source = host == app.source_device;
        const Key key{app.app_id, bubble};
        std::string& phase = phases_[key][host];
        if (phase.empty()) phase = "absent";

        if (ev.kind == "bubble_active") {
            if (phase == "active") {
                fail("I8", line, ev.at, "double activation of " + bubble + " on " + host);
            }
            if (!on_source && (phase == "dormant")) {
                fail("I8", line, ev.at, "dormant replica off the source device");
            }
            phase = "active";
            active_[key].insert(host);
        } else if (ev.kind == "bubble_dormant") {
            if (!on_source) fail("I8", line, ev.at, "dormant transition off source");
            if (phase != "active") fail("I8", line, ev.at, "dormant from phase " + phase);
            phase = "dormant";
            active_[key].erase(host);
        } else if (ev.kind == "bubble_switching") {
            if (phase != "active") fail("I8", line, ev.at, "switching from phase " + phase);
            if (on_source) fail("I8", line, ev.at, "source replica cannot switch");
            phase = "switching";
            active_[key].erase(host);
        } else {  // bubble_destroyed
            if (on_source) {
                fail("I1", line, ev.at, "source replica of " + bubble + " destroyed");
            }
            if (phase != "active" && phase != "switching") {
                fail("I8", line, ev.at, "destroyed from phase " + phase);
            }
            phase = "destroyed";
            active_[key].erase(host);
            for (auto& check : i6_pending_) {
                if (!check.resolved && check.app == app.app_id && check.bubble == bubble &&
                    check.host == host) {
                    check.resolved = true;
                }
            }
        }
    }

    void on_map_version(const TraceEvent& ev, int line) {
        const AppManifest& app = app_of(ev, line);
        auto v = parse_int(need(ev, line, "v"));
        if (!v || *v <= 0) {
            fail("I4", line, ev.at, "bad version");
            return;
        }
        const std::uint64_t version = static_cast<std::uint64_t>(*v);
        std::uint64_t& last = last_version_[app.app_id];
        if (version != last + 1) {
            fail("I4", line, ev.at,
                 "version " + std::to_string(version) + " after " + std::to_string(last));
        }
        last = std::max(last, version);

        auto entries = parse_entries_field(need(ev, line, "entries"));
        if (!entries) mismatch(line, "bad entries field");
        std::set<std::string> seen;
        std::set<NodeId> used;
        for (const auto& e : *entries) {
            const BubbleSpec* spec = app.find(e.bubble);
            if (!spec) mismatch(line, "unknown bubble '" + e.bubble + "' in map");
            if (!seen.insert(e.bubble).second) {
                fail("I4", line, ev.at, "bubble '" + e.bubble + "' listed twice");
            }
            if (e.host != app.source_device && e.status != "completed") {
                used.insert(e.host);
                const NodeProfile* node = scenario_.find_node(e.host);
                if (!node) mismatch(line, "unknown host '" + e.host + "'");
                // only a fresh assignment re-validates qualification and range
                const auto prev = prev_host_[app.app_id].find(e.bubble);
                const bool fresh = prev == prev_host_[app.app_id].end() ||
                                   prev->second != e.host;
                if (fresh) {
                    if (!qualifies(node->capabilities, spec->requirements)) {
                        fail("I3", line, ev.at,
                             e.host + " does not qualify for " + e.bubble);
                    }
                    if (node->zone_id != device_zone_.at(app.source_device)) {
                        fail("I3", line, ev.at, e.host + " out of range at assignment");
                    }
                }
            }
        }
        if (seen.size() != app.bubbles.size()) {
            fail("I4", line, ev.at, "map does not cover the manifest");
        }
        for (const auto& e : *entries) prev_host_[app.app_id][e.bubble] = e.host;

        for (const auto& node : split_list(need(ev, line, "unused"))) {
            if (!scenario_.find_node(node) && !scenario_.find_device(node)) {
                mismatch(line, "unknown unused node '" + node + "'");
            }
            if (node == app.source_device) {
                fail("I9", line, ev.at, "source device listed as unused");
            }
            if (used.count(node)) {
                fail("I9", line, ev.at, node + " is both a host and unused");
            }
        }
    }

    void boundary(SimTimeMs at, int line) {
        for (const auto& [key, hosts] : active_) {
            if (hosts.size() > 1) {
                std::string detail = key.second + " active on";
                for (const auto& h : hosts) detail += " " + h;
                fail("I2", line, at, detail);
            }
        }
        for (auto& check : i6_pending_) {
            if (!check.resolved && !check.reported && at > check.deadline) {
                check.reported = true;
                fail("I6", check.line, at,
                     check.bubble + " still on " + check.host + " past the preemption bound");
            }
        }
        for (const auto& app : scenario_.apps) {
            auto& pending = i5_pending_[app.app_id];
            if (!pending || at < *pending) continue;
            // all remotes have been unreachable for a full lease + latency
            for (const auto& spec : app.bubbles) {
                const Key key{app.app_id, spec.bubble_id};
                if (completed_.count(key)) continue;
                const auto& hosts = active_[key];
                if (hosts.size() != 1 || !hosts.count(app.source_device)) {
                    fail("I5", line, at, spec.bubble_id + " not active on source by the bound");
                }
            }
            pending.reset();
        }
    }

    void finish(SimTimeMs at, int line) {
        for (const auto& app : scenario_.apps) {
            auto fit = final_.find(app.app_id);
            if (fit == final_.end()) {
                fail("I4", line, at, "no final placement for " + app.app_id);
                continue;
            }
            if (fit->second.version != last_version_[app.app_id]) {
                fail("I4", fit->second.line, fit->second.at, "final version mismatch");
            }
            for (const auto& e : fit->second.entries) {
                if (e.host == app.source_device || e.status != "active") continue;
                auto mit = map_received_.find({e.host, app.app_id});
                if (mit == map_received_.end() || mit->second != fit->second.version) {
                    fail("I4", fit->second.line, fit->second.at,
                         e.host + " does not hold the final map");
                }
            }
        }
    }

    struct I6Check {
        AppId app;
        BubbleId bubble;
        NodeId host;
        SimTimeMs deadline;
        int line;
        bool resolved = false;
        bool reported = false;
    };

    struct FinalPlacement {
        std::vector<ParsedEntry> entries;
        std::uint64_t version = 0;
        int line = 0;
        SimTimeMs at = 0;
    };

    const ScenarioFile& scenario_;
    TimerConfig timers_;
    SimTimeMs max_lat_ = 0;
    InvariantReport report_;

    std::map<NodeId, ZoneId> device_zone_;
    std::set<NodeId> known_ids_;
    std::set<UserId> known_users_;
    std::set<NodeId> failed_;
    std::map<Key, std::set<NodeId>> active_;
    std::map<Key, std::map<NodeId, std::string>> phases_;
    std::set<Key> completed_;
    std::map<AppId, std::uint64_t> last_version_;
    std::map<AppId, std::map<BubbleId, NodeId>> prev_host_;
    std::map<std::pair<NodeId, AppId>, std::uint64_t> map_received_;
    std::map<AppId, FinalPlacement> final_;
    std::map<AppId, std::optional<SimTimeMs>> i5_pending_;
    std::vector<I6Check> i6_pending_;
};

}  // namespace

InvariantReport check_trace(const std::vector<TraceEvent>& trace, const ScenarioFile& scenario,
                            const TimerConfig& timers) {
    TraceChecker checker(scenario, timers);
    return checker.run(trace);
}

// ---------------------------------------------------------------------------
// fuzz generation

ScenarioFile fuzz_generate(std::uint64_t seed, const FuzzBounds& bounds) {
    if (bounds.max_nodes <= 0 || bounds.max_bubbles <= 0 || bounds.max_events < 0) {
        throw std::invalid_argument("fuzz bounds must be positive");
    }
    std::mt19937_64 rng(seed);
    const auto pick = [&rng](int lo, int hi) {  // inclusive
        return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    const std::vector<std::string> cap_pool = {"display", "audio", "input", "compute"};

    ScenarioFile s;
    const int zone_count = pick(1, 3);
    for (int z = 0; z < zone_count; ++z) s.zones.push_back("z" + std::to_string(z));
    s.users = {"owner", "guest1", "guest2"};

    const int node_count = pick(1, bounds.max_nodes);
    for (int n = 0; n < node_count; ++n) {
        NodeProfile profile;
        profile.node_id = "n" + std::to_string(n);
        profile.zone_id = s.zones[static_cast<std::size_t>(pick(0, zone_count - 1))];
        const int cap_count = pick(1, static_cast<int>(cap_pool.size()));
        std::vector<std::string> pool = cap_pool;
        for (int c = 0; c < cap_count; ++c) {
            const int idx = pick(0, static_cast<int>(pool.size()) - 1);
            profile.capabilities.insert(CapabilityTag{pool[static_cast<std::size_t>(idx)]});
            pool.erase(pool.begin() + idx);
        }
        profile.link_latency_ms = pick(1, 9);
        s.nodes.push_back(std::move(profile));
    }

    s.devices.push_back(DeviceSpec{"dev", s.zones[0], "owner"});

    AppManifest app;
    app.app_id = "app1";
    app.source_device = "dev";
    const int bubble_count = pick(1, bounds.max_bubbles);
    for (int b = 0; b < bubble_count; ++b) {
        BubbleSpec spec;
        spec.bubble_id = "b" + std::to_string(b);
        const int req_count = pick(1, 2);
        std::vector<std::string> pool = cap_pool;
        for (int c = 0; c < req_count; ++c) {
            const int idx = pick(0, static_cast<int>(pool.size()) - 1);
            spec.requirements.insert(CapabilityTag{pool[static_cast<std::size_t>(idx)]});
            pool.erase(pool.begin() + idx);
        }
        spec.payload_tag = spec.bubble_id;
        spec.listen = static_cast<ListenMode>(pick(0, 2));
        app.bubbles.push_back(std::move(spec));
    }
    s.apps.push_back(std::move(app));

    std::set<std::string> down;
    const int event_count = bounds.max_events == 0 ? 0 : pick(bounds.max_events / 2, bounds.max_events);
    SimTimeMs at = 0;
    const std::vector<std::string> ctx_keys = {"light", "temp", "location"};
    for (int e = 0; e < event_count; ++e) {
        at += pick(200, 1200);
        ScenarioEvent ev;
        ev.at = at;
        int kind = pick(0, 99);
        if (kind < 25) {
            ev.kind = EvMove{"dev", s.zones[static_cast<std::size_t>(pick(0, zone_count - 1))]};
        } else if (kind < 40) {
            const std::string node = pick(0, 9) == 0
                                         ? std::string("dev")
                                         : s.nodes[static_cast<std::size_t>(
                                                       pick(0, node_count - 1))].node_id;
            const std::string user = s.users[static_cast<std::size_t>(pick(0, 2))];
            ev.kind = EvClaim{UserClaim{user, node, pick(0, 9)}};
        } else if (kind < 50) {
            const std::string node =
                s.nodes[static_cast<std::size_t>(pick(0, node_count - 1))].node_id;
            ev.kind = EvRelease{s.users[static_cast<std::size_t>(pick(0, 2))], node};
        } else if (kind < 60) {
            std::vector<std::string> live;
            for (const auto& n : s.nodes) {
                if (!down.count(n.node_id)) live.push_back(n.node_id);
            }
            if (live.empty()) {
                ev.kind = EvSetContext{ctx_keys[static_cast<std::size_t>(pick(0, 2))],
                                       "v" + std::to_string(pick(0, 99))};
            } else {
                const std::string node = live[static_cast<std::size_t>(
                    pick(0, static_cast<int>(live.size()) - 1))];
                down.insert(node);
                ev.kind = EvFail{node};
            }
        } else if (kind < 70) {
            if (down.empty()) {
                ev.kind = EvSetContext{ctx_keys[static_cast<std::size_t>(pick(0, 2))],
                                       "v" + std::to_string(pick(0, 99))};
            } else {
                std::vector<std::string> failed(down.begin(), down.end());
                const std::string node = failed[static_cast<std::size_t>(
                    pick(0, static_cast<int>(failed.size()) - 1))];
                down.erase(node);
                ev.kind = EvRecover{node};
            }
        } else if (kind < 90) {
            ev.kind = EvSetContext{ctx_keys[static_cast<std::size_t>(pick(0, 2))],
                                   "v" + std::to_string(pick(0, 99))};
        } else {
            const auto& bubbles = s.apps[0].bubbles;
            ev.kind = EvComplete{"app1", bubbles[static_cast<std::size_t>(pick(
                                              0, static_cast<int>(bubbles.size()) - 1))]
                                     .bubble_id};
        }
        s.events.push_back(std::move(ev));
    }
    return s;
}

}  // namespace bubblecodes
