#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "bubblecodes/model.hpp"

namespace bubblecodes {

enum class RetractCause { c0_order, task_done, node_lost, preempted };

const char* to_string(RetractCause c);

struct MsgBubblesMap {
    BubblesMap map;
    bool operator==(const MsgBubblesMap&) const = default;
};

struct MsgContextInfo {
    ContextVariable var;
    bool operator==(const MsgContextInfo&) const = default;
};

struct MsgAppData {
    BubbleId bubble_id;
    std::string payload;  // opaque bytes, base64 on the wire
    bool operator==(const MsgAppData&) const = default;
};

struct MsgPermissionRequest {
    BubbleId bubble_id;  // "*" means the whole app
    CapabilitySet requirements;
    bool operator==(const MsgPermissionRequest&) const = default;
};

struct MsgPermissionReply {
    BubbleId bubble_id;
    bool granted = false;
    std::string reason;
    bool operator==(const MsgPermissionReply&) const = default;
};

struct MsgQualificationRequest {
    CapabilitySet requirements;
    bool operator==(const MsgQualificationRequest&) const = default;
};

struct MsgQualificationReply {
    CapabilitySet capabilities;
    bool operator==(const MsgQualificationReply&) const = default;
};

struct MsgTaskCompletion {
    BubbleId bubble_id;
    bool operator==(const MsgTaskCompletion&) const = default;
};

struct MsgBubbleTransfer {
    BubbleSpec spec;
    BubblesMap map;
    bool operator==(const MsgBubbleTransfer&) const = default;
};

struct MsgRetractCommand {
    BubbleId bubble_id;
    RetractCause cause = RetractCause::c0_order;
    bool operator==(const MsgRetractCommand&) const = default;
};

struct MsgStatusHeartbeat {
    std::vector<BubbleId> hosted_bubbles;
    bool operator==(const MsgStatusHeartbeat&) const = default;
};

struct MsgSwitchNotice {
    BubbleId bubble_id;
    NodeId from_node;
    NodeId to_node;
    BubblesMap proposed_map;
    bool operator==(const MsgSwitchNotice&) const = default;
};

using MessageBody =
    std::variant<MsgBubblesMap, MsgContextInfo, MsgAppData, MsgPermissionRequest,
                 MsgPermissionReply, MsgQualificationRequest, MsgQualificationReply,
                 MsgTaskCompletion, MsgBubbleTransfer, MsgRetractCommand, MsgStatusHeartbeat,
                 MsgSwitchNotice>;

/// A protocol message: common header plus one variant payload.
/// seq is strictly increasing per (from, to) pair within a run; the simulator
/// stamps it at send time.
struct Message {
    std::uint64_t seq = 0;
    NodeId from;
    NodeId to;
    AppId app;
    MessageBody body;

    bool operator==(const Message&) const = default;
};

/// Wire type token, e.g. "bubbles_map", "task_completion".
const char* message_type(const MessageBody& body);

/// Canonical XML encoding: single root
///   <msg v="1" type="..." seq="..." from="..." to="..." app="...">
/// with one payload child element per variant, attributes in fixed order and
/// no insignificant whitespace. Equal messages encode to identical bytes.
/// Precondition: string fields contain no control characters other than
/// tab/newline/carriage return.
std::string encode(const Message& msg);

enum class DecodeErrorKind { malformed_xml, unknown_type, missing_field, bad_version };

const char* to_string(DecodeErrorKind k);

struct DecodeError {
    DecodeErrorKind kind = DecodeErrorKind::malformed_xml;
    std::string detail;
};

using DecodeResult = std::variant<Message, DecodeError>;

/// Total inverse of encode on its image: any byte input yields a message or a
/// named error, never a crash.
DecodeResult decode(const std::string& bytes);

inline bool is_error(const DecodeResult& r) { return std::holds_alternative<DecodeError>(r); }

}  // namespace bubblecodes
