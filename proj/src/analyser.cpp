#include "mammofed/analyser.hpp"

#include "mammofed/error.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <set>
#include <utility>

namespace mammofed {

std::string QueryId::to_string() const {
    char buf[40];
    std::snprintf(buf, sizeof buf, "Q-%016llx%016llx", static_cast<unsigned long long>(hi),
                  static_cast<unsigned long long>(lo));
    return buf;
}

std::optional<QueryId> QueryId::parse(std::string_view text) {
    if (text.size() != 34 || !text.starts_with("Q-")) return std::nullopt;
    auto hex = [&](std::size_t pos, std::uint64_t& out) {
        const char* first = text.data() + pos;
        for (const char* p = first; p != first + 16; ++p) {
            if (!((*p >= '0' && *p <= '9') || (*p >= 'a' && *p <= 'f'))) return false;
        }
        auto [ptr, ec] = std::from_chars(first, first + 16, out, 16);
        return ec == std::errc{} && ptr == first + 16;
    };
    QueryId id;
    if (!hex(2, id.hi) || !hex(18, id.lo)) return std::nullopt;
    return id;
}

QueryIdSource::QueryIdSource() : rng_(std::random_device{}() ^ (std::uint64_t{std::random_device{}()} << 32)) {}

QueryIdSource::QueryIdSource(std::uint64_t seed) : rng_(seed) {}

QueryId QueryIdSource::next() {
    std::lock_guard lock(mutex_);
    QueryId id;
    id.hi = rng_();
    id.lo = rng_();
    return id;
}

std::string_view to_string(PeerStatus s) {
    switch (s) {
    case PeerStatus::up: return "up";
    case PeerStatus::down: return "down";
    case PeerStatus::unknown: return "unknown";
    }
    return "unknown";
}

void SiteRegistry::check() const {
    std::set<SiteId> seen;
    for (const auto& p : peers) {
        if (p.site_id == local_site) throw QueryError("registry lists the local site " + local_site + " as a peer");
        if (!seen.insert(p.site_id).second) throw QueryError("registry lists site " + p.site_id + " twice");
    }
}

const PeerInfo* SiteRegistry::find(const SiteId& site) const {
    auto it = std::find_if(peers.begin(), peers.end(), [&](const PeerInfo& p) { return p.site_id == site; });
    return it == peers.end() ? nullptr : &*it;
}

PeerInfo* SiteRegistry::find(const SiteId& site) {
    return const_cast<PeerInfo*>(std::as_const(*this).find(site));
}

nlohmann::json to_json(const SiteRegistry& reg) {
    nlohmann::json peers = nlohmann::json::array();
    for (const auto& p : reg.peers) {
        nlohmann::json j{{"site_id", p.site_id}, {"address", p.address}, {"status", to_string(p.status)}};
        j["last_known_version"] = p.last_known_version ? nlohmann::json(*p.last_known_version) : nlohmann::json();
        peers.push_back(std::move(j));
    }
    return {{"local_site", reg.local_site}, {"peers", peers}};
}

QueryPlan plan(const FormalQuery& q, const SiteRegistry& reg, QueryIdSource& ids,
               const std::vector<SiteId>& excluded_sites) {
    // Site exclusion is accepted for future data-localisation hints; the default
    // broadcast plan passes none.
    QueryPlan p;
    p.query_id = ids.next();
    p.local_part = q;
    p.local_part.scope.hop_budget = 0;
    if (q.scope.hop_budget == 1) {
        for (const auto& peer : reg.peers) {
            if (std::find(excluded_sites.begin(), excluded_sites.end(), peer.site_id) != excluded_sites.end()) {
                continue;
            }
            FormalQuery part = q;
            part.scope.hop_budget = 0;
            p.remote_parts.push_back(RemotePart{peer.site_id, std::move(part)});
        }
    }
    return p;
}

} // namespace mammofed
