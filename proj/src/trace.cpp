#include "bubblecodes/trace.hpp"

#include <charconv>

namespace bubblecodes {

TraceEvent& TraceEvent::with(std::string key, std::string value) {
    fields.emplace_back(std::move(key), std::move(value));
    return *this;
}

TraceEvent& TraceEvent::with(std::string key, std::int64_t value) {
    return with(std::move(key), std::to_string(value));
}

TraceEvent& TraceEvent::with(std::string key, std::uint64_t value) {
    return with(std::move(key), std::to_string(value));
}

const std::string* TraceEvent::field(const std::string& key) const {
    for (const auto& [k, v] : fields) {
        if (k == key) return &v;
    }
    return nullptr;
}

std::string TraceEvent::to_line() const {
    std::string out = std::to_string(at);
    out += ' ';
    out += kind;
    for (const auto& [k, v] : fields) {
        out += ' ';
        out += k;
        out += '=';
        out += v;
    }
    return out;
}

std::optional<TraceEvent> parse_trace_line(const std::string& line) {
    // tokens separated by single spaces: <at> <kind> (<key>=<value>)*
    std::vector<std::string> tokens;
    std::size_t pos = 0;
    while (pos < line.size()) {
        std::size_t next = line.find(' ', pos);
        if (next == std::string::npos) next = line.size();
        if (next == pos) return std::nullopt;  // empty token (double space)
        tokens.push_back(line.substr(pos, next - pos));
        pos = next + 1;
    }
    if (tokens.size() < 2) return std::nullopt;

    TraceEvent ev;
    const std::string& ts = tokens[0];
    auto [p, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), ev.at);
    if (ec != std::errc() || p != ts.data() + ts.size() || ev.at < 0) return std::nullopt;
    ev.kind = tokens[1];
    if (ev.kind.empty()) return std::nullopt;
    for (std::size_t i = 2; i < tokens.size(); ++i) {
        const std::size_t eq = tokens[i].find('=');
        if (eq == std::string::npos || eq == 0) return std::nullopt;
        ev.fields.emplace_back(tokens[i].substr(0, eq), tokens[i].substr(eq + 1));
    }
    return ev;
}

std::string render_trace(const std::vector<TraceEvent>& trace) {
    std::string out;
    for (const auto& ev : trace) {
        out += ev.to_line();
        out += '\n';
    }
    return out;
}

}  // namespace bubblecodes
