#pragma once

// Stored-query knowledge base: merged results keyed by canonical query and
// guarded by the data version of every site that contributed.

#include "mammofed/federation.hpp"

#include <chrono>
#include <cstdint>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <json.hpp>

namespace mammofed {

using VersionMap = std::map<SiteId, std::uint64_t>;

struct KnowledgeEntry {
    std::uint64_t key = 0;
    std::string canonical_text;
    std::string merged_xml;
    VersionMap version_snapshot;
    std::chrono::system_clock::time_point created_at;
    std::uint64_t hit_count = 0;
};

enum class Freshness { fresh, stale, miss };

std::string_view to_string(Freshness f);

struct CacheLookup {
    Freshness status = Freshness::miss;
    std::optional<KnowledgeEntry> entry;  // copy taken under the cache lock
};

struct CacheStats {
    std::size_t entries = 0;
    std::size_t capacity = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t stale = 0;
    std::uint64_t evictions = 0;
};

nlohmann::json to_json(const CacheStats& s);

/// LRU-bounded; all operations are serialized.
class KnowledgeCache {
public:
    explicit KnowledgeCache(std::size_t capacity = 256);

    /// Fresh iff every site of the entry's snapshot reports the same version in
    /// `current`. A fresh hit bumps hit_count and LRU recency. Entries whose text
    /// differs from `canonical` (a key collision) count as misses.
    CacheLookup lookup(const CanonicalQuery& canonical, const VersionMap& current);

    /// Replaces any entry for `key`. Throws CacheError when `merged` is partial or
    /// `snapshot` does not cover exactly the contributing sites.
    KnowledgeEntry update(const CanonicalQuery& canonical, const MergedResultSet& merged, std::string merged_xml,
                          VersionMap snapshot);

    [[nodiscard]] CacheStats stats() const;
    void clear();

private:
    using Lru = std::list<KnowledgeEntry>;

    mutable std::mutex mutex_;
    std::size_t capacity_;
    Lru entries_;  // most recent first
    std::unordered_map<std::uint64_t, Lru::iterator> index_;
    CacheStats stats_;
};

} // namespace mammofed
