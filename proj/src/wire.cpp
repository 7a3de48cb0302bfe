#include "mammofed/wire.hpp"

#include "mammofed/error.hpp"

#include <array>

namespace mammofed {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<MessageType, std::string_view>, 5> kTypes{{
    {MessageType::query, "QUERY"},
    {MessageType::result, "RESULT"},
    {MessageType::version_probe, "VERSION_PROBE"},
    {MessageType::version, "VERSION"},
    {MessageType::error, "ERROR"},
}};

[[noreturn]] void bad(const std::string& what) { throw ParseError(0, "wire message: " + what); }

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) bad(std::string("missing field \"") + name + "\"");
    return *it;
}

std::string string_field(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_string()) bad(std::string("field \"") + name + "\" must be a string");
    return v.get<std::string>();
}

} // namespace

std::string_view to_string(MessageType t) {
    for (const auto& [type, name] : kTypes) {
        if (type == t) return name;
    }
    return "?";
}

std::optional<MessageType> message_type_from_string(std::string_view s) {
    for (const auto& [type, name] : kTypes) {
        if (name == s) return type;
    }
    return std::nullopt;
}

WireMessage make_query(std::string token, std::string query_id, int hop_budget, std::string formal_query,
                       SiteId from) {
    WireMessage m;
    m.type = MessageType::query;
    m.token = std::move(token);
    m.query_id = std::move(query_id);
    m.hop_budget = hop_budget;
    m.formal_query = std::move(formal_query);
    m.site_id = std::move(from);
    return m;
}

WireMessage make_result(std::string token, std::string query_id, std::string xml, std::uint64_t data_version,
                        SiteId from) {
    WireMessage m;
    m.type = MessageType::result;
    m.token = std::move(token);
    m.query_id = std::move(query_id);
    m.xml = std::move(xml);
    m.data_version = data_version;
    m.site_id = std::move(from);
    return m;
}

WireMessage make_probe(std::string token) {
    WireMessage m;
    m.type = MessageType::version_probe;
    m.token = std::move(token);
    return m;
}

WireMessage make_version(std::string token, SiteId site, std::uint64_t data_version) {
    WireMessage m;
    m.type = MessageType::version;
    m.token = std::move(token);
    m.site_id = std::move(site);
    m.data_version = data_version;
    return m;
}

WireMessage make_error(std::string token, std::string query_id, std::string_view code, std::string message) {
    WireMessage m;
    m.type = MessageType::error;
    m.token = std::move(token);
    m.query_id = std::move(query_id);
    m.code = std::string(code);
    m.message = std::move(message);
    return m;
}

json to_json(const WireMessage& m) {
    json j = {{"type", to_string(m.type)}, {"token", m.token}};
    switch (m.type) {
    case MessageType::query:
        j["query_id"] = m.query_id;
        j["hop_budget"] = m.hop_budget;
        j["formal_query"] = m.formal_query;
        j["site_id"] = m.site_id;
        break;
    case MessageType::result:
        j["query_id"] = m.query_id;
        j["xml"] = m.xml;
        j["data_version"] = m.data_version;
        j["site_id"] = m.site_id;
        break;
    case MessageType::version_probe:
        break;
    case MessageType::version:
        j["site_id"] = m.site_id;
        j["data_version"] = m.data_version;
        break;
    case MessageType::error:
        j["query_id"] = m.query_id;
        j["code"] = m.code;
        j["message"] = m.message;
        break;
    }
    return j;
}

WireMessage wire_message_from_json(const json& j) {
    if (!j.is_object()) bad("expected an object");
    auto type = message_type_from_string(string_field(j, "type"));
    if (!type) bad("unknown type");
    WireMessage m;
    m.type = *type;
    m.token = string_field(j, "token");
    auto version = [&] {
        const json& v = field(j, "data_version");
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            bad("data_version must be a non-negative integer");
        }
        return v.get<std::uint64_t>();
    };
    switch (m.type) {
    case MessageType::query: {
        m.query_id = string_field(j, "query_id");
        const json& hop = field(j, "hop_budget");
        if (!hop.is_number_integer()) bad("hop_budget must be an integer");
        m.hop_budget = hop.get<int>();
        m.formal_query = string_field(j, "formal_query");
        if (j.contains("site_id")) m.site_id = string_field(j, "site_id");
        break;
    }
    case MessageType::result:
        m.query_id = string_field(j, "query_id");
        m.xml = string_field(j, "xml");
        m.data_version = version();
        if (j.contains("site_id")) m.site_id = string_field(j, "site_id");
        break;
    case MessageType::version_probe:
        break;
    case MessageType::version:
        m.site_id = string_field(j, "site_id");
        m.data_version = version();
        break;
    case MessageType::error:
        if (j.contains("query_id")) m.query_id = string_field(j, "query_id");
        m.code = string_field(j, "code");
        if (j.contains("message")) m.message = string_field(j, "message");
        break;
    }
    return m;
}

std::string encode_body(const WireMessage& m) { return to_json(m).dump(); }

WireMessage decode_body(std::string_view body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte > 0 ? e.byte - 1 : 0, "wire message: malformed json");
    }
    return wire_message_from_json(j);
}

std::string frame(std::string_view body) {
    auto n = static_cast<std::uint32_t>(body.size());
    std::string out;
    out.reserve(body.size() + 4);
    out += static_cast<char>((n >> 24) & 0xFF);
    out += static_cast<char>((n >> 16) & 0xFF);
    out += static_cast<char>((n >> 8) & 0xFF);
    out += static_cast<char>(n & 0xFF);
    out += body;
    return out;
}

std::optional<std::string> take_frame(std::string& buffer) {
    if (buffer.size() < 4) return std::nullopt;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(buffer[static_cast<std::size_t>(i)]);
    if (n > kMaxFrameBytes) throw ParseError(0, "frame of " + std::to_string(n) + " bytes exceeds limit");
    if (buffer.size() < 4 + std::size_t{n}) return std::nullopt;
    std::string body = buffer.substr(4, n);
    buffer.erase(0, 4 + std::size_t{n});
    return body;
}

} // namespace mammofed
