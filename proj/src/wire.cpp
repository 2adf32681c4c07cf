#include "bubblecodes/wire.hpp"

#include <charconv>
#include <cstddef>
#include <optional>
#include <sstream>

namespace bubblecodes {

namespace {

// ---------------------------------------------------------------------------
// base64 (standard alphabet, padded)

constexpr char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::string& in) {
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    std::size_t i = 0;
    while (i + 3 <= in.size()) {
        const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                           (static_cast<unsigned char>(in[i + 1]) << 8) |
                           static_cast<unsigned char>(in[i + 2]);
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += kB64Alphabet[v & 63];
        i += 3;
    }
    const std::size_t rem = in.size() - i;
    if (rem == 1) {
        const unsigned v = static_cast<unsigned char>(in[i]) << 16;
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += "==";
    } else if (rem == 2) {
        const unsigned v = (static_cast<unsigned char>(in[i]) << 16) |
                           (static_cast<unsigned char>(in[i + 1]) << 8);
        out += kB64Alphabet[(v >> 18) & 63];
        out += kB64Alphabet[(v >> 12) & 63];
        out += kB64Alphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

int b64_value(char c) {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
}

std::optional<std::string> b64_decode(const std::string& in) {
    if (in.size() % 4 != 0) return std::nullopt;
    std::string out;
    out.reserve(in.size() / 4 * 3);
    for (std::size_t i = 0; i < in.size(); i += 4) {
        int pad = 0;
        int vals[4];
        for (int j = 0; j < 4; ++j) {
            const char c = in[i + j];
            if (c == '=') {
                // padding only in the last two positions of the final group
                if (i + 4 != in.size() || j < 2) return std::nullopt;
                vals[j] = 0;
                ++pad;
            } else {
                if (pad > 0) return std::nullopt;  // data after padding
                vals[j] = b64_value(c);
                if (vals[j] < 0) return std::nullopt;
            }
        }
        const unsigned v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
        out += static_cast<char>((v >> 16) & 0xff);
        if (pad < 2) out += static_cast<char>((v >> 8) & 0xff);
        if (pad < 1) out += static_cast<char>(v & 0xff);
    }
    return out;
}

// ---------------------------------------------------------------------------
// canonical XML writer

void escape_attr(const std::string& in, std::string& out) {
    for (char c : in) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\t': out += "&#9;"; break;
            case '\n': out += "&#10;"; break;
            case '\r': out += "&#13;"; break;
            default: out += c;
        }
    }
}

class XmlWriter {
public:
    void open(const std::string& name) {
        buf_ += '<';
        buf_ += name;
        stack_.push_back(name);
        open_ = true;
    }

    void attr(const std::string& name, const std::string& value) {
        buf_ += ' ';
        buf_ += name;
        buf_ += "=\"";
        escape_attr(value, buf_);
        buf_ += '"';
    }

    void attr(const std::string& name, std::uint64_t value) { attr(name, std::to_string(value)); }
    void attr(const std::string& name, std::int64_t value) { attr(name, std::to_string(value)); }

    // raw text content; caller guarantees it contains no markup (base64 only)
    void text(const std::string& t) {
        close_open_tag();
        buf_ += t;
        text_ = true;
    }

    void close() {
        const std::string name = stack_.back();
        stack_.pop_back();
        if (open_ && !text_) {
            buf_ += "/>";
            open_ = false;
        } else {
            close_open_tag();
            buf_ += "</";
            buf_ += name;
            buf_ += '>';
        }
        text_ = false;
    }

    std::string take() { return std::move(buf_); }

private:
    void close_open_tag() {
        if (open_) {
            buf_ += '>';
            open_ = false;
        }
    }

    std::string buf_;
    std::vector<std::string> stack_;
    bool open_ = false;
    bool text_ = false;
};

std::string join_caps(const CapabilitySet& set) {
    std::string out;
    for (const auto& c : set) {
        if (!out.empty()) out += ',';
        out += c.name;
    }
    return out;
}

void write_map(XmlWriter& w, const BubblesMap& map) {
    BubblesMap canon = map;
    canon.sort_canonical();
    w.open("map");
    w.attr("app", canon.app_id);
    w.attr("v", canon.version);
    for (const auto& e : canon.entries) {
        w.open("entry");
        w.attr("bubble", e.bubble_id);
        w.attr("host", e.active_host);
        w.attr("status", to_string(e.status));
        w.close();
    }
    for (const auto& u : canon.unused_nodes) {
        w.open("unused");
        w.attr("node", u.node_id);
        w.attr("caps", join_caps(u.capabilities));
        w.attr("latency", static_cast<std::int64_t>(u.link_latency_ms));
        w.close();
    }
    w.close();
}

void write_spec(XmlWriter& w, const BubbleSpec& spec) {
    w.open("spec");
    w.attr("bubble", spec.bubble_id);
    w.attr("requires", join_caps(spec.requirements));
    w.attr("payload", spec.payload_tag);
    w.attr("listen", to_string(spec.listen));
    w.close();
}

struct BodyWriter {
    XmlWriter& w;

    void operator()(const MsgBubblesMap& m) { write_map(w, m.map); }

    void operator()(const MsgContextInfo& m) {
        w.open("context");
        w.attr("key", m.var.key);
        w.attr("value", m.var.value);
        w.attr("v", m.var.ctx_version);
        w.close();
    }

    void operator()(const MsgAppData& m) {
        w.open("data");
        w.attr("bubble", m.bubble_id);
        if (!m.payload.empty()) w.text(b64_encode(m.payload));
        w.close();
    }

    void operator()(const MsgPermissionRequest& m) {
        w.open("permission");
        w.attr("bubble", m.bubble_id);
        w.attr("requires", join_caps(m.requirements));
        w.close();
    }

    void operator()(const MsgPermissionReply& m) {
        w.open("permission");
        w.attr("bubble", m.bubble_id);
        w.attr("granted", std::string(m.granted ? "true" : "false"));
        w.attr("reason", m.reason);
        w.close();
    }

    void operator()(const MsgQualificationRequest& m) {
        w.open("qualification");
        w.attr("requires", join_caps(m.requirements));
        w.close();
    }

    void operator()(const MsgQualificationReply& m) {
        w.open("qualification");
        w.attr("caps", join_caps(m.capabilities));
        w.close();
    }

    void operator()(const MsgTaskCompletion& m) {
        w.open("bubble");
        w.attr("id", m.bubble_id);
        w.close();
    }

    void operator()(const MsgBubbleTransfer& m) {
        w.open("transfer");
        write_spec(w, m.spec);
        write_map(w, m.map);
        w.close();
    }

    void operator()(const MsgRetractCommand& m) {
        w.open("retract");
        w.attr("bubble", m.bubble_id);
        w.attr("cause", std::string(to_string(m.cause)));
        w.close();
    }

    void operator()(const MsgStatusHeartbeat& m) {
        w.open("status");
        for (const auto& b : m.hosted_bubbles) {
            w.open("hosted");
            w.attr("bubble", b);
            w.close();
        }
        w.close();
    }

    void operator()(const MsgSwitchNotice& m) {
        w.open("switch");
        w.attr("bubble", m.bubble_id);
        w.attr("from", m.from_node);
        w.attr("to", m.to_node);
        write_map(w, m.proposed_map);
        w.close();
    }
};

// ---------------------------------------------------------------------------
// minimal XML reader for the canonical subset: elements, double- or
// single-quoted attributes, text content, entity references. No comments,
// PIs, doctypes or CDATA.

struct XmlNode {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attrs;
    std::vector<XmlNode> children;
    std::string text;

    const std::string* attr(const std::string& n) const {
        for (const auto& [k, v] : attrs) {
            if (k == n) return &v;
        }
        return nullptr;
    }
};

class XmlReader {
public:
    explicit XmlReader(const std::string& in) : in_(in) {}

    // returns nullopt on malformed input; err_ holds the reason
    std::optional<XmlNode> parse_document() {
        skip_ws();
        auto root = parse_element();
        if (!root) return std::nullopt;
        skip_ws();
        if (pos_ != in_.size()) {
            err_ = "trailing content after root element";
            return std::nullopt;
        }
        return root;
    }

    const std::string& error() const { return err_; }

private:
    bool at_end() const { return pos_ >= in_.size(); }
    char peek() const { return in_[pos_]; }

    void skip_ws() {
        while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\n' || peek() == '\r')) {
            ++pos_;
        }
    }

    static bool name_start(char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
    }
    static bool name_char(char c) {
        return name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.' || c == ':';
    }

    std::optional<std::string> parse_name() {
        if (at_end() || !name_start(peek())) {
            err_ = "expected name";
            return std::nullopt;
        }
        const std::size_t start = pos_;
        while (!at_end() && name_char(peek())) ++pos_;
        return in_.substr(start, pos_ - start);
    }

    bool parse_entity(std::string& out) {
        // pos_ is at '&'
        const std::size_t semi = in_.find(';', pos_);
        if (semi == std::string::npos || semi - pos_ > 12) {
            err_ = "unterminated entity";
            return false;
        }
        const std::string ent = in_.substr(pos_ + 1, semi - pos_ - 1);
        pos_ = semi + 1;
        if (ent == "amp") out += '&';
        else if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else if (!ent.empty() && ent[0] == '#') {
            unsigned code = 0;
            bool ok = false;
            if (ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X')) {
                auto [p, ec] = std::from_chars(ent.data() + 2, ent.data() + ent.size(), code, 16);
                ok = ec == std::errc() && p == ent.data() + ent.size();
            } else {
                auto [p, ec] = std::from_chars(ent.data() + 1, ent.data() + ent.size(), code, 10);
                ok = ec == std::errc() && p == ent.data() + ent.size();
            }
            if (!ok || code > 0xff) {  // single-byte references only
                err_ = "bad character reference";
                return false;
            }
            out += static_cast<char>(code);
        } else {
            err_ = "unknown entity '" + ent + "'";
            return false;
        }
        return true;
    }

    std::optional<std::string> parse_attr_value() {
        if (at_end() || (peek() != '"' && peek() != '\'')) {
            err_ = "expected quoted attribute value";
            return std::nullopt;
        }
        const char quote = peek();
        ++pos_;
        std::string out;
        while (!at_end() && peek() != quote) {
            if (peek() == '<') {
                err_ = "'<' in attribute value";
                return std::nullopt;
            }
            if (peek() == '&') {
                if (!parse_entity(out)) return std::nullopt;
            } else {
                out += peek();
                ++pos_;
            }
        }
        if (at_end()) {
            err_ = "unterminated attribute value";
            return std::nullopt;
        }
        ++pos_;  // closing quote
        return out;
    }

    std::optional<XmlNode> parse_element() {
        if (at_end() || peek() != '<') {
            err_ = "expected '<'";
            return std::nullopt;
        }
        ++pos_;
        if (!at_end() && (peek() == '?' || peek() == '!')) {
            err_ = "declarations and comments not supported";
            return std::nullopt;
        }
        XmlNode node;
        auto name = parse_name();
        if (!name) return std::nullopt;
        node.name = *name;

        while (true) {
            const std::size_t before = pos_;
            skip_ws();
            if (at_end()) {
                err_ = "unterminated start tag";
                return std::nullopt;
            }
            if (peek() == '/') {
                ++pos_;
                if (at_end() || peek() != '>') {
                    err_ = "expected '>' after '/'";
                    return std::nullopt;
                }
                ++pos_;
                return node;  // self-closing
            }
            if (peek() == '>') {
                ++pos_;
                break;
            }
            if (before == pos_) {
                // no whitespace consumed and not at tag end: garbage
                err_ = "malformed start tag";
                return std::nullopt;
            }
            auto attr_name = parse_name();
            if (!attr_name) return std::nullopt;
            skip_ws();
            if (at_end() || peek() != '=') {
                err_ = "expected '=' after attribute name";
                return std::nullopt;
            }
            ++pos_;
            skip_ws();
            auto value = parse_attr_value();
            if (!value) return std::nullopt;
            for (const auto& [k, v] : node.attrs) {
                if (k == *attr_name) {
                    err_ = "duplicate attribute '" + *attr_name + "'";
                    return std::nullopt;
                }
            }
            node.attrs.emplace_back(std::move(*attr_name), std::move(*value));
        }

        // content: text and child elements until the matching end tag
        while (true) {
            if (at_end()) {
                err_ = "unterminated element '" + node.name + "'";
                return std::nullopt;
            }
            if (peek() == '<') {
                if (pos_ + 1 < in_.size() && in_[pos_ + 1] == '/') {
                    pos_ += 2;
                    auto end_name = parse_name();
                    if (!end_name) return std::nullopt;
                    skip_ws();
                    if (at_end() || peek() != '>') {
                        err_ = "malformed end tag";
                        return std::nullopt;
                    }
                    ++pos_;
                    if (*end_name != node.name) {
                        err_ = "mismatched end tag '" + *end_name + "'";
                        return std::nullopt;
                    }
                    return node;
                }
                auto child = parse_element();
                if (!child) return std::nullopt;
                node.children.push_back(std::move(*child));
            } else if (peek() == '&') {
                if (!parse_entity(node.text)) return std::nullopt;
            } else {
                node.text += peek();
                ++pos_;
            }
        }
    }

    const std::string& in_;
    std::size_t pos_ = 0;
    std::string err_;
};

// ---------------------------------------------------------------------------
// field extraction

using FieldError = DecodeError;

DecodeError missing(const std::string& what) {
    return DecodeError{DecodeErrorKind::missing_field, what};
}

#define REQUIRE_ATTR(var, node, name)                                            \
    const std::string* var = (node).attr(name);                                  \
    if (!var) return missing(std::string("missing attribute '") + (name) + "' on <" + (node).name + ">")

std::optional<std::uint64_t> parse_u64(const std::string& s) {
    if (s.empty()) return std::nullopt;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

std::optional<SimTimeMs> parse_latency(const std::string& s) {
    if (s.empty()) return std::nullopt;
    SimTimeMs v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || v < 0) return std::nullopt;
    return v;
}

std::variant<CapabilitySet, DecodeError> parse_caps(const std::string& s) {
    CapabilitySet out;
    if (s.empty()) return out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        const std::string tok = s.substr(pos, next - pos);
        if (!is_valid_capability_name(tok)) {
            return missing("bad capability token '" + tok + "'");
        }
        out.insert(CapabilityTag{tok});
        pos = next + 1;
        if (next == s.size()) break;
    }
    return out;
}

std::variant<BubblesMap, DecodeError> read_map(const XmlNode& node) {
    if (node.name != "map") return missing("expected <map>, got <" + node.name + ">");
    BubblesMap map;
    REQUIRE_ATTR(app, node, "app");
    REQUIRE_ATTR(ver, node, "v");
    map.app_id = *app;
    auto v = parse_u64(*ver);
    if (!v) return missing("bad map version '" + *ver + "'");
    map.version = *v;
    for (const auto& child : node.children) {
        if (child.name == "entry") {
            MapEntry e;
            REQUIRE_ATTR(bubble, child, "bubble");
            REQUIRE_ATTR(host, child, "host");
            REQUIRE_ATTR(status, child, "status");
            e.bubble_id = *bubble;
            e.active_host = *host;
            auto st = entry_status_from_string(*status);
            if (!st) return missing("bad entry status '" + *status + "'");
            e.status = *st;
            map.entries.push_back(std::move(e));
        } else if (child.name == "unused") {
            UnusedNode u;
            REQUIRE_ATTR(id, child, "node");
            REQUIRE_ATTR(cp, child, "caps");
            REQUIRE_ATTR(lat, child, "latency");
            u.node_id = *id;
            auto cs = parse_caps(*cp);
            if (std::holds_alternative<DecodeError>(cs)) return std::get<DecodeError>(cs);
            u.capabilities = std::get<CapabilitySet>(std::move(cs));
            auto l = parse_latency(*lat);
            if (!l) return missing("bad latency '" + *lat + "'");
            u.link_latency_ms = *l;
            map.unused_nodes.push_back(std::move(u));
        } else {
            return missing("unexpected <" + child.name + "> in <map>");
        }
    }
    map.sort_canonical();
    return map;
}

std::variant<BubbleSpec, DecodeError> read_spec(const XmlNode& node) {
    if (node.name != "spec") return missing("expected <spec>, got <" + node.name + ">");
    BubbleSpec spec;
    REQUIRE_ATTR(bubble, node, "bubble");
    REQUIRE_ATTR(req, node, "requires");
    REQUIRE_ATTR(payload, node, "payload");
    REQUIRE_ATTR(listen, node, "listen");
    spec.bubble_id = *bubble;
    auto cs = parse_caps(*req);
    if (std::holds_alternative<DecodeError>(cs)) return std::get<DecodeError>(cs);
    spec.requirements = std::get<CapabilitySet>(std::move(cs));
    spec.payload_tag = *payload;
    auto lm = listen_mode_from_string(*listen);
    if (!lm) return missing("bad listen mode '" + *listen + "'");
    spec.listen = *lm;
    return spec;
}

std::variant<MessageBody, DecodeError> read_body(const std::string& type, const XmlNode& msg) {
    if (msg.children.size() != 1) {
        return missing("expected exactly one payload element under <msg>");
    }
    const XmlNode& p = msg.children[0];

    if (type == "bubbles_map") {
        auto m = read_map(p);
        if (std::holds_alternative<DecodeError>(m)) return std::get<DecodeError>(m);
        return MessageBody{MsgBubblesMap{std::get<BubblesMap>(std::move(m))}};
    }
    if (type == "context_info") {
        if (p.name != "context") return missing("expected <context>");
        REQUIRE_ATTR(key, p, "key");
        REQUIRE_ATTR(value, p, "value");
        REQUIRE_ATTR(ver, p, "v");
        auto v = parse_u64(*ver);
        if (!v) return missing("bad context version '" + *ver + "'");
        return MessageBody{MsgContextInfo{ContextVariable{*key, *value, *v}}};
    }
    if (type == "app_data") {
        if (p.name != "data") return missing("expected <data>");
        REQUIRE_ATTR(bubble, p, "bubble");
        auto payload = b64_decode(p.text);
        if (!payload) return missing("bad base64 payload");
        return MessageBody{MsgAppData{*bubble, std::move(*payload)}};
    }
    if (type == "permission_request") {
        if (p.name != "permission") return missing("expected <permission>");
        REQUIRE_ATTR(bubble, p, "bubble");
        REQUIRE_ATTR(req, p, "requires");
        auto cs = parse_caps(*req);
        if (std::holds_alternative<DecodeError>(cs)) return std::get<DecodeError>(cs);
        return MessageBody{MsgPermissionRequest{*bubble, std::get<CapabilitySet>(std::move(cs))}};
    }
    if (type == "permission_reply") {
        if (p.name != "permission") return missing("expected <permission>");
        REQUIRE_ATTR(bubble, p, "bubble");
        REQUIRE_ATTR(granted, p, "granted");
        REQUIRE_ATTR(reason, p, "reason");
        bool g = false;
        if (*granted == "true") g = true;
        else if (*granted == "false") g = false;
        else return missing("bad granted flag '" + *granted + "'");
        return MessageBody{MsgPermissionReply{*bubble, g, *reason}};
    }
    if (type == "qualification_request") {
        if (p.name != "qualification") return missing("expected <qualification>");
        REQUIRE_ATTR(req, p, "requires");
        auto cs = parse_caps(*req);
        if (std::holds_alternative<DecodeError>(cs)) return std::get<DecodeError>(cs);
        return MessageBody{MsgQualificationRequest{std::get<CapabilitySet>(std::move(cs))}};
    }
    if (type == "qualification_reply") {
        if (p.name != "qualification") return missing("expected <qualification>");
        REQUIRE_ATTR(cp, p, "caps");
        auto cs = parse_caps(*cp);
        if (std::holds_alternative<DecodeError>(cs)) return std::get<DecodeError>(cs);
        return MessageBody{MsgQualificationReply{std::get<CapabilitySet>(std::move(cs))}};
    }
    if (type == "task_completion") {
        if (p.name != "bubble") return missing("expected <bubble>");
        REQUIRE_ATTR(id, p, "id");
        return MessageBody{MsgTaskCompletion{*id}};
    }
    if (type == "bubble_transfer") {
        if (p.name != "transfer") return missing("expected <transfer>");
        if (p.children.size() != 2) return missing("<transfer> needs <spec> and <map>");
        auto spec = read_spec(p.children[0]);
        if (std::holds_alternative<DecodeError>(spec)) return std::get<DecodeError>(spec);
        auto m = read_map(p.children[1]);
        if (std::holds_alternative<DecodeError>(m)) return std::get<DecodeError>(m);
        return MessageBody{MsgBubbleTransfer{std::get<BubbleSpec>(std::move(spec)),
                                             std::get<BubblesMap>(std::move(m))}};
    }
    if (type == "retract_command") {
        if (p.name != "retract") return missing("expected <retract>");
        REQUIRE_ATTR(bubble, p, "bubble");
        REQUIRE_ATTR(cause, p, "cause");
        RetractCause c;
        if (*cause == "c0_order") c = RetractCause::c0_order;
        else if (*cause == "task_done") c = RetractCause::task_done;
        else if (*cause == "node_lost") c = RetractCause::node_lost;
        else if (*cause == "preempted") c = RetractCause::preempted;
        else return missing("bad retract cause '" + *cause + "'");
        return MessageBody{MsgRetractCommand{*bubble, c}};
    }
    if (type == "status_heartbeat") {
        if (p.name != "status") return missing("expected <status>");
        MsgStatusHeartbeat hb;
        for (const auto& child : p.children) {
            if (child.name != "hosted") return missing("unexpected <" + child.name + "> in <status>");
            REQUIRE_ATTR(bubble, child, "bubble");
            hb.hosted_bubbles.push_back(*bubble);
        }
        return MessageBody{std::move(hb)};
    }
    if (type == "switch_notice") {
        if (p.name != "switch") return missing("expected <switch>");
        REQUIRE_ATTR(bubble, p, "bubble");
        REQUIRE_ATTR(from, p, "from");
        REQUIRE_ATTR(to, p, "to");
        if (p.children.size() != 1) return missing("<switch> needs one <map>");
        auto m = read_map(p.children[0]);
        if (std::holds_alternative<DecodeError>(m)) return std::get<DecodeError>(m);
        return MessageBody{
            MsgSwitchNotice{*bubble, *from, *to, std::get<BubblesMap>(std::move(m))}};
    }
    return DecodeError{DecodeErrorKind::unknown_type, "unknown message type '" + type + "'"};
}

}  // namespace

const char* to_string(RetractCause c) {
    switch (c) {
        case RetractCause::c0_order: return "c0_order";
        case RetractCause::task_done: return "task_done";
        case RetractCause::node_lost: return "node_lost";
        case RetractCause::preempted: return "preempted";
    }
    return "c0_order";
}

const char* to_string(DecodeErrorKind k) {
    switch (k) {
        case DecodeErrorKind::malformed_xml: return "malformed_xml";
        case DecodeErrorKind::unknown_type: return "unknown_type";
        case DecodeErrorKind::missing_field: return "missing_field";
        case DecodeErrorKind::bad_version: return "bad_version";
    }
    return "malformed_xml";
}

const char* message_type(const MessageBody& body) {
    struct Namer {
        const char* operator()(const MsgBubblesMap&) { return "bubbles_map"; }
        const char* operator()(const MsgContextInfo&) { return "context_info"; }
        const char* operator()(const MsgAppData&) { return "app_data"; }
        const char* operator()(const MsgPermissionRequest&) { return "permission_request"; }
        const char* operator()(const MsgPermissionReply&) { return "permission_reply"; }
        const char* operator()(const MsgQualificationRequest&) { return "qualification_request"; }
        const char* operator()(const MsgQualificationReply&) { return "qualification_reply"; }
        const char* operator()(const MsgTaskCompletion&) { return "task_completion"; }
        const char* operator()(const MsgBubbleTransfer&) { return "bubble_transfer"; }
        const char* operator()(const MsgRetractCommand&) { return "retract_command"; }
        const char* operator()(const MsgStatusHeartbeat&) { return "status_heartbeat"; }
        const char* operator()(const MsgSwitchNotice&) { return "switch_notice"; }
    };
    return std::visit(Namer{}, body);
}

std::string encode(const Message& msg) {
    XmlWriter w;
    w.open("msg");
    w.attr("v", std::string("1"));
    w.attr("type", std::string(message_type(msg.body)));
    w.attr("seq", msg.seq);
    w.attr("from", msg.from);
    w.attr("to", msg.to);
    w.attr("app", msg.app);
    std::visit(BodyWriter{w}, msg.body);
    w.close();
    return w.take();
}

DecodeResult decode(const std::string& bytes) {
    XmlReader reader(bytes);
    auto root = reader.parse_document();
    if (!root) return DecodeError{DecodeErrorKind::malformed_xml, reader.error()};
    if (root->name != "msg") {
        return DecodeError{DecodeErrorKind::malformed_xml,
                           "root element is <" + root->name + ">, expected <msg>"};
    }
    const std::string* v = root->attr("v");
    if (!v) return DecodeError{DecodeErrorKind::bad_version, "missing protocol version"};
    if (*v != "1") return DecodeError{DecodeErrorKind::bad_version, "unsupported version '" + *v + "'"};

    const std::string* type = root->attr("type");
    if (!type) return missing("missing attribute 'type' on <msg>");
    REQUIRE_ATTR(seq, *root, "seq");
    REQUIRE_ATTR(from, *root, "from");
    REQUIRE_ATTR(to, *root, "to");
    REQUIRE_ATTR(app, *root, "app");

    Message msg;
    auto s = parse_u64(*seq);
    if (!s) return missing("bad seq '" + *seq + "'");
    msg.seq = *s;
    msg.from = *from;
    msg.to = *to;
    msg.app = *app;

    auto body = read_body(*type, *root);
    if (std::holds_alternative<DecodeError>(body)) return std::get<DecodeError>(body);
    msg.body = std::get<MessageBody>(std::move(body));
    return msg;
}

}  // namespace bubblecodes
