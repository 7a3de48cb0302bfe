#pragma once

// Remote Query Handler and Result Handler: forwarding terminal sub-queries to
// peers and joining every site's rows into one result.

#include "mammofed/analyser.hpp"
#include "mammofed/local_handler.hpp"
#include "mammofed/transport.hpp"
#include "mammofed/wire.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mammofed {

struct MissingSite {
    SiteId site_id;
    MissingReason reason = MissingReason::transport;
    std::string detail;

    bool operator==(const MissingSite&) const = default;
};

struct MergedResultSet {
    QueryId query_id;
    std::vector<ResultSet> contributions;
    std::vector<MissingSite> missing;
    std::vector<Row> rows;

    /// site -> source_version of every contribution.
    [[nodiscard]] std::map<SiteId, std::uint64_t> site_versions() const;
    [[nodiscard]] std::uint64_t skipped() const;
};

/// Union of all rows, deduplicated on (site, entity, id) and sorted by that key.
/// Throws IntegrityError when query ids differ, a missing site also contributed,
/// or two copies of a row disagree.
MergedResultSet join_results(const ResultSet& local, const std::vector<ResultSet>& remotes,
                             std::vector<MissingSite> missing);

/// Stable id for a merged result, derived from the canonical query text so that
/// equal queries over equal data render byte-identical XML.
QueryId merged_query_id(const CanonicalQuery& canonical);

/// Result XML for the merged rows. `site` is the answering (origin) site; version
/// and skipped are summed over contributions.
std::string merged_to_xml(const MergedResultSet& merged, const CanonicalQuery& canonical, const SiteId& site);

struct ForwardFailure {
    MissingReason reason = MissingReason::transport;
    std::string detail;
};

using ForwardOutcome = std::variant<ResultSet, ForwardFailure>;

/// Sends QUERY to `peer` and waits for its RESULT. The query must be terminal
/// (hop_budget 0). Remote ERROR replies map to `refused` when unauthorized and
/// to `transport` otherwise.
ForwardOutcome forward_query(Transport& transport, const PeerInfo& peer, const FormalQuery& q,
                             const QueryId& query_id, Clock::time_point deadline, const SiteId& from);

/// VERSION_PROBE round trip; nullopt when the peer cannot be reached or answers wrongly.
std::optional<std::uint64_t> probe_peer(Transport& transport, const PeerInfo& peer, Clock::time_point deadline);

} // namespace mammofed
