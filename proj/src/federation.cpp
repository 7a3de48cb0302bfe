#include "mammofed/federation.hpp"

#include "mammofed/error.hpp"
#include "mammofed/xml.hpp"

#include <algorithm>
#include <set>

namespace mammofed {

std::map<SiteId, std::uint64_t> MergedResultSet::site_versions() const {
    std::map<SiteId, std::uint64_t> out;
    for (const auto& c : contributions) out[c.site_id] = c.source_version;
    return out;
}

std::uint64_t MergedResultSet::skipped() const {
    std::uint64_t n = 0;
    for (const auto& c : contributions) n += c.skipped;
    return n;
}

MergedResultSet join_results(const ResultSet& local, const std::vector<ResultSet>& remotes,
                             std::vector<MissingSite> missing) {
    MergedResultSet merged;
    merged.query_id = local.query_id;
    merged.contributions.push_back(local);
    merged.contributions.insert(merged.contributions.end(), remotes.begin(), remotes.end());

    std::set<SiteId> contributing;
    for (const auto& c : merged.contributions) {
        if (c.query_id != merged.query_id) {
            throw IntegrityError("result from " + c.site_id + " answers " + c.query_id.to_string() + ", expected " +
                                 merged.query_id.to_string());
        }
        contributing.insert(c.site_id);
    }
    for (const auto& m : missing) {
        if (contributing.contains(m.site_id)) {
            throw IntegrityError("site " + m.site_id + " is both missing and contributing");
        }
    }
    std::sort(missing.begin(), missing.end(), [](const auto& a, const auto& b) { return a.site_id < b.site_id; });
    merged.missing = std::move(missing);

    std::vector<Row> rows;
    for (const auto& c : merged.contributions) rows.insert(rows.end(), c.rows.begin(), c.rows.end());
    std::stable_sort(rows.begin(), rows.end(), row_less);
    for (const auto& row : rows) {
        if (!merged.rows.empty() && !row_less(merged.rows.back(), row)) {
            if (merged.rows.back() != row) {
                throw IntegrityError("conflicting copies of " + std::string(to_string(row.entity)) + " " + row.id +
                                     " from " + row.site);
            }
            continue;
        }
        merged.rows.push_back(row);
    }
    return merged;
}

QueryId merged_query_id(const CanonicalQuery& canonical) {
    QueryId id;
    id.hi = fnv1a64(canonical.canonical_text);
    std::uint64_t h = id.hi;
    for (unsigned char c : canonical.canonical_text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    id.lo = h;
    return id;
}

std::string merged_to_xml(const MergedResultSet& merged, const CanonicalQuery& canonical, const SiteId& site) {
    ResultSet view;
    view.query_id = merged_query_id(canonical);
    view.site_id = site;
    view.rows = merged.rows;
    for (const auto& c : merged.contributions) view.source_version += c.source_version;
    view.skipped = merged.skipped();
    return to_xml(view);
}

ForwardOutcome forward_query(Transport& transport, const PeerInfo& peer, const FormalQuery& q,
                             const QueryId& query_id, Clock::time_point deadline, const SiteId& from) {
    if (q.scope.hop_budget != 0) throw QueryError("forwarded queries must carry hop_budget 0");
    WireMessage request = make_query(peer.token, query_id.to_string(), 0, encode(q), from);

    std::string reply_body;
    try {
        reply_body = transport.exchange(peer, encode_body(request), deadline);
    } catch (const TransportError& e) {
        return ForwardFailure{e.reason(), e.what()};
    }

    WireMessage reply;
    try {
        reply = decode_body(reply_body);
    } catch (const ParseError& e) {
        return ForwardFailure{MissingReason::transport, std::string("malformed reply: ") + e.what()};
    }
    if (reply.type == MessageType::error) {
        auto reason = reply.code == wire_code::unauthorized ? MissingReason::refused : MissingReason::transport;
        return ForwardFailure{reason, reply.code + ": " + reply.message};
    }
    if (reply.type != MessageType::result) {
        return ForwardFailure{MissingReason::transport, "unexpected " + std::string(to_string(reply.type))};
    }
    if (reply.query_id != request.query_id) {
        return ForwardFailure{MissingReason::transport, "reply echoes query " + reply.query_id};
    }
    ResultSet result;
    try {
        result = result_set_from_xml(reply.xml);
    } catch (const ParseError& e) {
        return ForwardFailure{MissingReason::transport, std::string("bad result xml: ") + e.what()};
    }
    if (result.query_id != query_id || result.site_id != peer.site_id) {
        return ForwardFailure{MissingReason::transport, "result header does not match the request"};
    }
    result.source_version = reply.data_version;
    return result;
}

std::optional<std::uint64_t> probe_peer(Transport& transport, const PeerInfo& peer, Clock::time_point deadline) {
    try {
        WireMessage reply = decode_body(transport.exchange(peer, encode_body(make_probe(peer.token)), deadline));
        if (reply.type == MessageType::version && reply.site_id == peer.site_id) return reply.data_version;
    } catch (const TransportError&) {
    } catch (const ParseError&) {
    }
    return std::nullopt;
}

} // namespace mammofed
