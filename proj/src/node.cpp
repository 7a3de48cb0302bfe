#include "mammofed/node.hpp"

#include "mammofed/error.hpp"

#include <future>
#include <set>

namespace mammofed {

SiteNode::SiteNode(NodeOptions options, std::shared_ptr<Transport> transport, TermDictionary dictionary,
                   ProviderRegistry providers)
    : options_(std::move(options)),
      transport_(std::move(transport)),
      dictionary_(std::move(dictionary)),
      providers_(std::move(providers)),
      store_(options_.site_id),
      cache_(options_.cache_capacity),
      ids_(options_.id_seed ? std::make_unique<QueryIdSource>(*options_.id_seed) : std::make_unique<QueryIdSource>()),
      allocation_(options_.allocation_seed) {
    registry_.local_site = options_.site_id;
}

SiteRegistry SiteNode::registry() const {
    std::lock_guard lock(registry_mutex_);
    return registry_;
}

void SiteNode::set_peers(std::vector<PeerInfo> peers) {
    SiteRegistry next{options_.site_id, std::move(peers)};
    next.check();
    std::lock_guard lock(registry_mutex_);
    registry_ = std::move(next);
}

void SiteNode::note_peer(const SiteId& site, std::optional<std::uint64_t> version) {
    std::lock_guard lock(registry_mutex_);
    if (PeerInfo* p = registry_.find(site)) {
        p->status = version ? PeerStatus::up : PeerStatus::down;
        if (version) p->last_known_version = version;
    }
}

template <typename Fn>
void SiteNode::for_each_peer(const std::vector<PeerInfo>& peers, Fn fn) {
    if (!options_.concurrent_dispatch || peers.size() < 2) {
        for (std::size_t i = 0; i < peers.size(); ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> pending;
    pending.reserve(peers.size());
    for (std::size_t i = 0; i < peers.size(); ++i) pending.push_back(std::async(std::launch::async, fn, i));
    for (auto& f : pending) f.get();
}

VersionMap SiteNode::probe_versions() {
    std::vector<PeerInfo> peers = registry().peers;
    std::vector<std::optional<std::uint64_t>> versions(peers.size());
    auto deadline = Clock::now() + options_.deadline;
    for_each_peer(peers, [&](std::size_t i) { versions[i] = probe_peer(*transport_, peers[i], deadline); });

    VersionMap out{{options_.site_id, store_.data_version()}};
    for (std::size_t i = 0; i < peers.size(); ++i) {
        note_peer(peers[i].site_id, versions[i]);
        if (versions[i]) out[peers[i].site_id] = *versions[i];
    }
    return out;
}

namespace {

void collect_providers(const Predicate& p, std::set<std::string>& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
                for (const auto& c : n.children) collect_providers(c, out);
            } else if constexpr (std::is_same_v<T, Not>) {
                collect_providers(*n.child, out);
            } else if constexpr (std::is_same_v<T, DerivedCmp>) {
                out.insert(n.provider);
            }
        },
        p.node);
}

} // namespace

QueryOutcome SiteNode::query(FormalQuery q, QueryOptions opts) {
    q.scope.origin_site = options_.site_id;
    validate(q);
    std::set<std::string> used;
    collect_providers(q.predicate, used);
    for (const auto& id : used) {
        if (!providers_.find(id)) throw ExecutionError("unknown provider " + id);
    }

    auto snapshot = store_.snapshot();
    q = bind_provider_references(std::move(q), *snapshot);

    QueryOutcome out;
    out.canonical = normalize(q);

    if (!opts.bypass_cache) {
        VersionMap current = q.scope.hop_budget == 1 ? probe_versions()
                                                     : VersionMap{{options_.site_id, store_.data_version()}};
        CacheLookup hit = cache_.lookup(out.canonical, current);
        if (hit.status == Freshness::fresh) {
            out.cache_hit = true;
            out.xml = hit.entry->merged_xml;
            out.rows = result_set_from_xml(out.xml).rows;
            out.versions = hit.entry->version_snapshot;
            return out;
        }
    }

    QueryPlan p = plan(q, registry(), *ids_);
    std::vector<PeerInfo> peers;
    {
        SiteRegistry reg = registry();
        for (const auto& part : p.remote_parts) peers.push_back(*reg.find(part.site_id));
    }

    std::optional<ResultSet> local;
    std::string local_error;
    bool local_failed_as_query = false;
    try {
        StatementPlan statements = compile_statements(p.local_part);
        local = execute_local(statements, *store_.snapshot(), providers_, p.query_id);
    } catch (const CompileError& e) {
        local_error = e.what();
        local_failed_as_query = true;
    } catch (const ExecutionError& e) {
        local_error = e.what();
    }
    if (local_failed_as_query) throw CompileError(local_error);

    std::vector<ForwardOutcome> outcomes(peers.size());
    auto deadline = Clock::now() + options_.deadline;
    for_each_peer(peers, [&](std::size_t i) {
        outcomes[i] = forward_query(*transport_, peers[i], p.remote_parts[i].query, p.query_id, deadline,
                                    options_.site_id);
    });

    std::vector<ResultSet> remotes;
    std::vector<MissingSite> missing;
    for (std::size_t i = 0; i < peers.size(); ++i) {
        if (auto* r = std::get_if<ResultSet>(&outcomes[i])) {
            note_peer(peers[i].site_id, r->source_version);
            remotes.push_back(std::move(*r));
        } else {
            const auto& f = std::get<ForwardFailure>(outcomes[i]);
            note_peer(peers[i].site_id, std::nullopt);
            missing.push_back({peers[i].site_id, f.reason, f.detail});
        }
    }

    if (!local) {
        if (!peers.empty() && remotes.empty()) throw FederationFailure("no site answered: " + local_error);
        throw ExecutionError(local_error);
    }

    MergedResultSet merged = join_results(*local, remotes, missing);
    out.xml = merged_to_xml(merged, out.canonical, options_.site_id);
    out.rows = merged.rows;
    out.missing = merged.missing;
    out.versions = merged.site_versions();
    if (merged.missing.empty()) cache_.update(out.canonical, merged, out.xml, out.versions);
    return out;
}

QueryOutcome SiteNode::query_dsl(std::string_view text, QueryOptions opts) {
    return query(translate(text, dictionary_, options_.site_id), opts);
}

WireMessage SiteNode::handle_incoming(const WireMessage& msg) {
    const std::string& token = options_.token;
    if (msg.token != options_.token) return make_error("", msg.query_id, wire_code::unauthorized, "bad token");
    switch (msg.type) {
    case MessageType::version_probe:
        return make_version(token, options_.site_id, store_.data_version());
    case MessageType::query: {
        if (msg.hop_budget != 0) {
            return make_error(token, msg.query_id, wire_code::hop_violation, "forwarded queries must be terminal");
        }
        auto id = QueryId::parse(msg.query_id);
        if (!id) return make_error(token, msg.query_id, wire_code::bad_message, "bad query id");
        try {
            FormalQuery q = decode(msg.formal_query);
            if (q.scope.hop_budget != 0) {
                return make_error(token, msg.query_id, wire_code::hop_violation, "forwarded queries must be terminal");
            }
            // hop 0: the plan has no remote parts, only the local statements run
            ResultSet r = execute_local(compile_statements(q), *store_.snapshot(), providers_, *id);
            return make_result(token, msg.query_id, to_xml(r), r.source_version, options_.site_id);
        } catch (const ParseError& e) {
            return make_error(token, msg.query_id, wire_code::bad_message, e.what());
        } catch (const Error& e) {
            return make_error(token, msg.query_id, wire_code::execution_error, e.what());
        }
    }
    default:
        return make_error(token, msg.query_id, wire_code::bad_message,
                          "unexpected " + std::string(to_string(msg.type)) + " request");
    }
}

std::string SiteNode::handle_frame(const std::string& body) {
    try {
        return encode_body(handle_incoming(decode_body(body)));
    } catch (const ParseError& e) {
        return encode_body(make_error("", "", wire_code::bad_message, e.what()));
    } catch (const std::exception& e) {
        return encode_body(make_error("", "", wire_code::execution_error, e.what()));
    }
}

ReaderPair SiteNode::allocate(const std::string& patient_id) {
    std::lock_guard lock(allocation_mutex_);
    return allocation_.allocate(patient_id);
}

std::array<int, 3> SiteNode::allocation_counts() const {
    std::lock_guard lock(allocation_mutex_);
    return allocation_.pair_counts();
}

} // namespace mammofed
