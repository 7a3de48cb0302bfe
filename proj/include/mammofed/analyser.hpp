#pragma once

// Query decomposition: one local sub-query plus one terminal sub-query per peer.

#include "mammofed/metadata.hpp"
#include "mammofed/query.hpp"

#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace mammofed {

/// 128-bit query identifier, rendered "Q-" + 32 lowercase hex digits.
struct QueryId {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;

    [[nodiscard]] std::string to_string() const;
    static std::optional<QueryId> parse(std::string_view text);

    auto operator<=>(const QueryId&) const = default;
};

/// Source of fresh query ids. Seeded sources make simulator runs reproducible.
class QueryIdSource {
public:
    QueryIdSource();  // seeded from std::random_device
    explicit QueryIdSource(std::uint64_t seed);

    QueryId next();

private:
    std::mutex mutex_;
    std::mt19937_64 rng_;
};

enum class PeerStatus { up, down, unknown };

std::string_view to_string(PeerStatus s);

struct PeerInfo {
    SiteId site_id;
    std::string address;  // host:port, empty for in-process peers
    std::string token;    // presented to this peer
    std::optional<std::uint64_t> last_known_version;
    PeerStatus status = PeerStatus::unknown;
};

struct SiteRegistry {
    SiteId local_site;
    std::vector<PeerInfo> peers;

    /// Throws QueryError on duplicate site ids or the local site listed as a peer.
    void check() const;
    [[nodiscard]] const PeerInfo* find(const SiteId& site) const;
    PeerInfo* find(const SiteId& site);
};

nlohmann::json to_json(const SiteRegistry& reg);

struct RemotePart {
    SiteId site_id;
    FormalQuery query;
};

/// Rows are deduplicated on (site_id, entity, record id) and ordered by that key.
struct JoinSpec {
    std::string dedupe_key = "site_id,entity,id";
    std::string order = "lexicographic";
};

struct QueryPlan {
    QueryId query_id;
    FormalQuery local_part;
    std::vector<RemotePart> remote_parts;
    JoinSpec join_spec;
};

/// Broadcast decomposition. Every part carries the input predicate unchanged and
/// hop_budget 0; remote parts exist only for hop_budget 1 queries. Peers marked
/// down are still planned, so their failure is observed and reported at dispatch.
QueryPlan plan(const FormalQuery& q, const SiteRegistry& reg, QueryIdSource& ids,
               const std::vector<SiteId>& excluded_sites = {});

} // namespace mammofed
