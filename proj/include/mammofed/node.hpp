#pragma once

// One site of the grid: its store, the query manager pipeline (translate,
// analyse, execute locally, forward, join, cache) and the inter-site endpoint.

#include "mammofed/analyser.hpp"
#include "mammofed/clinical.hpp"
#include "mammofed/federation.hpp"
#include "mammofed/knowledge_cache.hpp"
#include "mammofed/local_handler.hpp"
#include "mammofed/metadata.hpp"
#include "mammofed/translator.hpp"
#include "mammofed/transport.hpp"

#include <chrono>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace mammofed {

/// Local execution failed and no peer answered either.
class FederationFailure : public Error {
public:
    using Error::Error;
};

struct NodeOptions {
    SiteId site_id;
    std::string token;  // required of every incoming frame
    std::chrono::milliseconds deadline{2000};
    std::size_t cache_capacity = 256;
    std::optional<std::uint64_t> id_seed;  // unset: random query ids
    std::uint64_t allocation_seed = 42;
    bool concurrent_dispatch = true;
};

struct QueryOptions {
    bool bypass_cache = false;
};

struct QueryOutcome {
    CanonicalQuery canonical;
    std::string xml;  // merged result document
    std::vector<Row> rows;
    std::vector<MissingSite> missing;
    bool cache_hit = false;
    VersionMap versions;  // per contributing site
};

class SiteNode {
public:
    SiteNode(NodeOptions options, std::shared_ptr<Transport> transport,
             TermDictionary dictionary = TermDictionary::defaults(),
             ProviderRegistry providers = ProviderRegistry::defaults());

    SiteNode(const SiteNode&) = delete;
    SiteNode& operator=(const SiteNode&) = delete;

    [[nodiscard]] const SiteId& site_id() const { return options_.site_id; }
    [[nodiscard]] const NodeOptions& options() const { return options_; }
    SiteStore& store() { return store_; }
    [[nodiscard]] const SiteStore& store() const { return store_; }
    KnowledgeCache& cache() { return cache_; }
    [[nodiscard]] const TermDictionary& dictionary() const { return dictionary_; }
    [[nodiscard]] const ProviderRegistry& providers() const { return providers_; }

    [[nodiscard]] SiteRegistry registry() const;
    /// Throws QueryError when the peer list is inconsistent.
    void set_peers(std::vector<PeerInfo> peers);

    /// Runs a query from a local client. The origin is forced to this site.
    /// Throws QueryError / ExecutionError for bad queries, FederationFailure when
    /// nothing could be answered.
    QueryOutcome query(FormalQuery q, QueryOptions opts = {});
    QueryOutcome query_dsl(std::string_view text, QueryOptions opts = {});

    /// Current version of every reachable site, this one included.
    VersionMap probe_versions();

    /// Inter-site endpoint. Never throws; every request gets exactly one reply.
    WireMessage handle_incoming(const WireMessage& msg);
    std::string handle_frame(const std::string& body);

    /// Screening-desk reader allocation. Throws AllocationError for repeats.
    ReaderPair allocate(const std::string& patient_id);
    [[nodiscard]] std::array<int, 3> allocation_counts() const;

private:
    template <typename Fn>
    void for_each_peer(const std::vector<PeerInfo>& peers, Fn fn);
    void note_peer(const SiteId& site, std::optional<std::uint64_t> version);

    NodeOptions options_;
    std::shared_ptr<Transport> transport_;
    TermDictionary dictionary_;
    ProviderRegistry providers_;
    SiteStore store_;
    KnowledgeCache cache_;
    std::unique_ptr<QueryIdSource> ids_;

    mutable std::mutex registry_mutex_;
    SiteRegistry registry_;

    mutable std::mutex allocation_mutex_;
    AllocationState allocation_;
};

} // namespace mammofed
