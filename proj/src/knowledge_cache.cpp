#include "mammofed/knowledge_cache.hpp"

#include "mammofed/error.hpp"

namespace mammofed {

std::string_view to_string(Freshness f) {
    switch (f) {
    case Freshness::fresh: return "fresh";
    case Freshness::stale: return "stale";
    case Freshness::miss: return "miss";
    }
    return "miss";
}

nlohmann::json to_json(const CacheStats& s) {
    return {{"entries", s.entries}, {"capacity", s.capacity}, {"hits", s.hits},
            {"misses", s.misses},   {"stale", s.stale},       {"evictions", s.evictions}};
}

KnowledgeCache::KnowledgeCache(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw CacheError("cache capacity must be positive");
}

CacheLookup KnowledgeCache::lookup(const CanonicalQuery& canonical, const VersionMap& current) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(canonical.key);
    if (it == index_.end() || it->second->canonical_text != canonical.canonical_text) {
        ++stats_.misses;
        return {};
    }
    KnowledgeEntry& entry = *it->second;
    for (const auto& [site, version] : entry.version_snapshot) {
        auto cur = current.find(site);
        if (cur == current.end() || cur->second != version) {
            ++stats_.stale;
            return {Freshness::stale, entry};
        }
    }
    ++entry.hit_count;
    ++stats_.hits;
    entries_.splice(entries_.begin(), entries_, it->second);
    return {Freshness::fresh, entry};
}

KnowledgeEntry KnowledgeCache::update(const CanonicalQuery& canonical, const MergedResultSet& merged,
                                      std::string merged_xml, VersionMap snapshot) {
    if (!merged.missing.empty()) {
        throw CacheError("refusing to cache a partial result (" + merged.missing.front().site_id + " missing)");
    }
    VersionMap contributed = merged.site_versions();
    if (contributed.size() != snapshot.size()) {
        throw CacheError("version snapshot does not cover exactly the contributing sites");
    }
    for (const auto& [site, _] : contributed) {
        if (!snapshot.contains(site)) throw CacheError("version snapshot lacks contributing site " + site);
    }

    KnowledgeEntry entry;
    entry.key = canonical.key;
    entry.canonical_text = canonical.canonical_text;
    entry.merged_xml = std::move(merged_xml);
    entry.version_snapshot = std::move(snapshot);
    entry.created_at = std::chrono::system_clock::now();

    std::lock_guard lock(mutex_);
    if (auto it = index_.find(entry.key); it != index_.end()) {
        entries_.erase(it->second);
        index_.erase(it);
    }
    entries_.push_front(entry);
    index_[entry.key] = entries_.begin();
    while (entries_.size() > capacity_) {
        index_.erase(entries_.back().key);
        entries_.pop_back();
        ++stats_.evictions;
    }
    return entry;
}

CacheStats KnowledgeCache::stats() const {
    std::lock_guard lock(mutex_);
    CacheStats s = stats_;
    s.entries = entries_.size();
    s.capacity = capacity_;
    return s;
}

void KnowledgeCache::clear() {
    std::lock_guard lock(mutex_);
    entries_.clear();
    index_.clear();
}

} // namespace mammofed
