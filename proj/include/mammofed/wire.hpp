#pragma once

// Inter-site messages and their framing: a 4-byte big-endian length followed by
// a UTF-8 JSON body.

#include "mammofed/metadata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace mammofed {

enum class MessageType { query, result, version_probe, version, error };

/// "QUERY", "RESULT", "VERSION_PROBE", "VERSION", "ERROR".
std::string_view to_string(MessageType t);
std::optional<MessageType> message_type_from_string(std::string_view s);

namespace wire_code {
inline constexpr std::string_view unauthorized = "unauthorized";
inline constexpr std::string_view hop_violation = "hop_violation";
inline constexpr std::string_view bad_message = "bad_message";
inline constexpr std::string_view execution_error = "execution_error";
} // namespace wire_code

/// Only the fields relevant to `type` are serialized.
struct WireMessage {
    MessageType type = MessageType::version_probe;
    std::string token;
    std::string query_id;
    int hop_budget = 0;
    std::string formal_query;  // wire text of the FormalQuery
    std::string xml;
    std::uint64_t data_version = 0;
    SiteId site_id;  // sender for QUERY and RESULT, subject for VERSION
    std::string code;
    std::string message;

    bool operator==(const WireMessage&) const = default;
};

WireMessage make_query(std::string token, std::string query_id, int hop_budget, std::string formal_query,
                       SiteId from);
WireMessage make_result(std::string token, std::string query_id, std::string xml, std::uint64_t data_version,
                        SiteId from);
WireMessage make_probe(std::string token);
WireMessage make_version(std::string token, SiteId site, std::uint64_t data_version);
WireMessage make_error(std::string token, std::string query_id, std::string_view code, std::string message);

nlohmann::json to_json(const WireMessage& m);
/// Throws ParseError when required fields are missing or mistyped.
WireMessage wire_message_from_json(const nlohmann::json& j);

std::string encode_body(const WireMessage& m);
WireMessage decode_body(std::string_view body);

inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

/// Prepends the length prefix.
std::string frame(std::string_view body);

/// Extracts one complete frame from the front of `buffer`, removing it. Returns
/// nullopt when more bytes are needed; throws ParseError for oversized frames.
std::optional<std::string> take_frame(std::string& buffer);

} // namespace mammofed
