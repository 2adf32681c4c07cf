#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bubblecodes/model.hpp"

namespace bubblecodes {

/// One audit record emitted by the simulation. Serialized one per line as
///   <at> <kind> key=value key=value ...
/// The line format is frozen; golden files compare byte-exact. Values are
/// single tokens (no whitespace) by construction.
struct TraceEvent {
    SimTimeMs at = 0;
    std::string kind;
    std::vector<std::pair<std::string, std::string>> fields;

    TraceEvent() = default;
    TraceEvent(SimTimeMs t, std::string k) : at(t), kind(std::move(k)) {}

    TraceEvent& with(std::string key, std::string value);
    TraceEvent& with(std::string key, std::int64_t value);
    TraceEvent& with(std::string key, std::uint64_t value);

    /// Value of the first field named `key`, if present.
    const std::string* field(const std::string& key) const;

    std::string to_line() const;

    bool operator==(const TraceEvent&) const = default;
};

/// Parses one trace line; nullopt if the line is not well-formed.
std::optional<TraceEvent> parse_trace_line(const std::string& line);

std::string render_trace(const std::vector<TraceEvent>& trace);

}  // namespace bubblecodes
