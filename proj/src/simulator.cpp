#include "mammofed/simulator.hpp"

#include "mammofed/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

namespace mammofed {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::string_view to_string(FaultAction a) {
    switch (a) {
    case FaultAction::down: return "down";
    case FaultAction::up: return "up";
    case FaultAction::drop_next: return "drop_next";
    }
    return "down";
}

std::optional<FaultAction> fault_action_from_string(std::string_view s) {
    for (auto a : {FaultAction::down, FaultAction::up, FaultAction::drop_next}) {
        if (to_string(a) == s) return a;
    }
    return std::nullopt;
}

namespace {

[[noreturn]] void config_error(const std::string& where, const std::string& what) {
    throw ParseError(0, "sim config " + where + ": " + what);
}

const json* optional_member(const json& j, const char* name) {
    auto it = j.find(name);
    return it == j.end() || it->is_null() ? nullptr : &*it;
}

std::string string_of(const json& j, const char* name, const std::string& where) {
    const json* v = optional_member(j, name);
    if (!v || !v->is_string()) config_error(where, std::string("\"") + name + "\" must be a string");
    return v->get<std::string>();
}

std::int64_t int_of(const json& v, const std::string& where) {
    if (!v.is_number_integer()) config_error(where, "expected an integer");
    return v.get<std::int64_t>();
}

std::uint16_t port_of(const json& v, const std::string& where) {
    auto p = int_of(v, where);
    if (p < 0 || p > 65535) config_error(where, "port out of range");
    return static_cast<std::uint16_t>(p);
}

} // namespace

SimConfig sim_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) config_error("", "expected an object");
    SimConfig cfg;
    if (const json* v = optional_member(j, "token")) {
        if (!v->is_string()) config_error("/token", "expected a string");
        cfg.token = v->get<std::string>();
    }
    if (const json* v = optional_member(j, "deadline_ms")) cfg.deadline = std::chrono::milliseconds(int_of(*v, "/deadline_ms"));
    if (const json* v = optional_member(j, "latency_ms")) cfg.latency = std::chrono::milliseconds(int_of(*v, "/latency_ms"));
    if (const json* v = optional_member(j, "cache_capacity")) {
        auto c = int_of(*v, "/cache_capacity");
        if (c <= 0) throw StartupError("cache_capacity must be positive");
        cfg.cache_capacity = static_cast<std::size_t>(c);
    }
    if (const json* v = optional_member(j, "seed")) cfg.seed = static_cast<std::uint64_t>(int_of(*v, "/seed"));
    if (cfg.latency.count() < 0) throw StartupError("latency_ms must be non-negative");
    if (cfg.deadline.count() <= 0) throw StartupError("deadline_ms must be positive");

    const json* sites = optional_member(j, "sites");
    if (!sites || !sites->is_array() || sites->empty()) config_error("/sites", "expected a non-empty array");
    std::set<SiteId> ids;
    std::set<std::uint16_t> ports;
    for (std::size_t i = 0; i < sites->size(); ++i) {
        const json& s = (*sites)[i];
        std::string where = "/sites/" + std::to_string(i);
        if (!s.is_object()) config_error(where, "expected an object");
        SimSite site;
        site.site_id = string_of(s, "site_id", where);
        if (site.site_id.empty()) config_error(where, "empty site_id");
        bool in_process = false;
        if (const json* v = optional_member(s, "in_process")) {
            if (!v->is_boolean()) config_error(where + "/in_process", "expected a boolean");
            in_process = v->get<bool>();
        }
        if (const json* v = optional_member(s, "port")) {
            if (in_process) config_error(where, "a site is either in_process or has a port");
            site.port = port_of(*v, where + "/port");
        }
        if (const json* v = optional_member(s, "http_port")) site.http_port = port_of(*v, where + "/http_port");
        if (const json* v = optional_member(s, "seed_data")) {
            if (!v->is_string()) config_error(where + "/seed_data", "expected a string");
            std::filesystem::path p = v->get<std::string>();
            site.seed_data = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        site.token = cfg.token;
        if (const json* v = optional_member(s, "token")) {
            if (!v->is_string()) config_error(where + "/token", "expected a string");
            site.token = v->get<std::string>();
        }
        if (!ids.insert(site.site_id).second) throw StartupError("duplicate site id " + site.site_id);
        for (auto p : {site.port, site.http_port}) {
            if (p && *p != 0 && !ports.insert(*p).second) throw StartupError("port " + std::to_string(*p) + " used twice");
        }
        cfg.sites.push_back(std::move(site));
    }

    if (const json* faults = optional_member(j, "faults")) {
        if (!faults->is_array()) config_error("/faults", "expected an array");
        for (std::size_t i = 0; i < faults->size(); ++i) {
            const json& f = (*faults)[i];
            std::string where = "/faults/" + std::to_string(i);
            if (!f.is_object()) config_error(where, "expected an object");
            SimFault fault;
            const json* step = optional_member(f, "step");
            if (!step) config_error(where, "missing step");
            auto n = int_of(*step, where + "/step");
            if (n < 0) config_error(where, "step must be non-negative");
            fault.step = static_cast<std::size_t>(n);
            fault.site = string_of(f, "site", where);
            if (!ids.contains(fault.site)) throw StartupError("fault names unknown site " + fault.site);
            auto action = fault_action_from_string(string_of(f, "action", where));
            if (!action) config_error(where, "action must be down, up or drop_next");
            fault.action = *action;
            cfg.faults.push_back(fault);
        }
    }
    return cfg;
}

SimConfig load_sim_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    json j;
    try {
        j = json::parse(text.str());
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte > 0 ? e.byte - 1 : 0, path.string() + ": malformed json");
    }
    return sim_config_from_json(j, path.parent_path());
}

SimConfig in_process_config(std::size_t sites, std::string token) {
    SimConfig cfg;
    cfg.token = token;
    for (std::size_t i = 1; i <= sites; ++i) {
        SimSite s;
        s.site_id = "s" + std::to_string(i);
        s.token = token;
        cfg.sites.push_back(std::move(s));
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

void Transcript::append(SiteId from, SiteId to, const std::string& body) {
    TranscriptRecord r;
    r.from = std::move(from);
    r.to = std::move(to);
    r.body = body;
    try {
        json j = json::parse(body);
        if (auto t = message_type_from_string(j.value("type", ""))) r.type = *t;
        r.query_id = j.value("query_id", "");
    } catch (const json::exception&) {
        r.type = MessageType::error;
    }
    std::lock_guard lock(mutex_);
    r.seq = records_.size() + 1;
    records_.push_back(std::move(r));
}

std::vector<TranscriptRecord> Transcript::records() const {
    std::lock_guard lock(mutex_);
    return records_;
}

std::size_t Transcript::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

std::size_t Transcript::count(MessageType type, std::size_t since) const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (std::size_t i = since; i < records_.size(); ++i) n += records_[i].type == type;
    return n;
}

json summary_json(const TranscriptRecord& r) {
    json j = {{"seq", r.seq}, {"from", r.from}, {"to", r.to}, {"type", to_string(r.type)}, {"bytes", r.body.size()}};
    if (!r.query_id.empty()) j["query_id"] = r.query_id;
    try {
        WireMessage m = decode_body(r.body);
        switch (m.type) {
        case MessageType::query: j["hop_budget"] = m.hop_budget; break;
        case MessageType::result:
            j["data_version"] = m.data_version;
            j["records"] = result_set_from_xml(m.xml).rows.size();
            break;
        case MessageType::version: j["data_version"] = m.data_version; break;
        case MessageType::error: j["code"] = m.code; break;
        case MessageType::version_probe: break;
        }
    } catch (const Error&) {
        j["malformed"] = true;
    }
    return j;
}

std::string Transcript::to_jsonl() const {
    std::string out;
    for (const auto& r : records()) out += summary_json(r).dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

/// Outbound transport of one node: records every frame, delivers in-process
/// peers directly (applying faults and latency) and others over TCP.
class SimNetwork::Router final : public Transport {
public:
    Router(SimNetwork& net, SiteId from) : net_(net), from_(std::move(from)) {}

    std::string exchange(const PeerInfo& peer, const std::string& body, Clock::time_point deadline) override {
        net_.transcript_.append(from_, peer.site_id, body);
        std::string reply;
        if (peer.address.empty()) {
            if (net_.is_down(peer.site_id)) throw TransportError(MissingReason::refused, peer.site_id + " is down");
            std::this_thread::sleep_for(net_.cfg_.latency);
            if (net_.take_drop(peer.site_id)) {
                std::this_thread::sleep_until(deadline);
                throw TransportError(MissingReason::timeout, "no response from " + peer.site_id + " before deadline");
            }
            reply = net_.node(peer.site_id).handle_frame(body);
            std::this_thread::sleep_for(net_.cfg_.latency);
            if (Clock::now() > deadline) {
                throw TransportError(MissingReason::timeout, "no response from " + peer.site_id + " before deadline");
            }
        } else {
            reply = tcp_.exchange(peer, body, deadline);
        }
        net_.transcript_.append(peer.site_id, from_, reply);
        return reply;
    }

private:
    SimNetwork& net_;
    SiteId from_;
    TcpTransport tcp_;
};

struct SimNetwork::Member {
    SimSite site;
    std::unique_ptr<SiteNode> node;
    std::unique_ptr<FrameServer> server;
};

SimNetwork::SimNetwork(SimConfig cfg) : cfg_(std::move(cfg)) {
    std::size_t index = 0;
    for (const auto& site : cfg_.sites) {
        auto member = std::make_unique<Member>();
        member->site = site;
        NodeOptions opts;
        opts.site_id = site.site_id;
        opts.token = site.token;
        opts.deadline = cfg_.deadline;
        opts.cache_capacity = cfg_.cache_capacity;
        opts.id_seed = cfg_.seed * 1000003ULL + index;
        opts.allocation_seed = cfg_.seed;
        // in-process networks dispatch in order so transcripts are reproducible
        opts.concurrent_dispatch = site.port.has_value();
        member->node = std::make_unique<SiteNode>(opts, std::make_shared<Router>(*this, site.site_id));
        if (!site.seed_data.empty()) ingest_file(member->node->store(), site.seed_data);
        members_.emplace(site.site_id, std::move(member));
        ++index;
    }
    for (auto& [id, m] : members_) {
        if (!m->site.port) continue;
        SiteNode& node = *m->node;
        SiteId site = id;
        m->server = std::make_unique<FrameServer>("127.0.0.1", *m->site.port, [this, &node, site](const std::string& body) {
            if (take_drop(site)) return std::optional<std::string>{};
            std::this_thread::sleep_for(cfg_.latency);
            return std::optional<std::string>{node.handle_frame(body)};
        });
        m->server->start();
    }
    for (auto& [id, m] : members_) {
        std::vector<PeerInfo> peers;
        for (auto& [other_id, other] : members_) {
            if (other_id == id) continue;
            PeerInfo p;
            p.site_id = other_id;
            p.token = other->site.token;
            if (other->server) p.address = "127.0.0.1:" + std::to_string(other->server->port());
            peers.push_back(std::move(p));
        }
        m->node->set_peers(std::move(peers));
    }
}

SimNetwork::~SimNetwork() {
    for (auto& [_, m] : members_) {
        if (m->server) m->server->stop();
    }
}

std::vector<SiteId> SimNetwork::site_ids() const {
    std::vector<SiteId> out;
    for (const auto& s : cfg_.sites) out.push_back(s.site_id);
    return out;
}

SiteNode& SimNetwork::node(const SiteId& site) {
    auto it = members_.find(site);
    if (it == members_.end()) throw QueryError("unknown site " + site);
    return *it->second->node;
}

std::optional<std::uint16_t> SimNetwork::port(const SiteId& site) const {
    auto it = members_.find(site);
    if (it == members_.end() || !it->second->server) return std::nullopt;
    return it->second->server->port();
}

void SimNetwork::apply(FaultAction action, const SiteId& site) {
    auto it = members_.find(site);
    if (it == members_.end()) throw QueryError("unknown site " + site);
    FrameServer* server = it->second->server.get();
    std::lock_guard lock(faults_mutex_);
    switch (action) {
    case FaultAction::down:
        down_.insert(site);
        if (server) server->stop();
        break;
    case FaultAction::up:
        down_.erase(site);
        if (server) server->start();
        break;
    case FaultAction::drop_next:
        ++drops_[site];
        break;
    }
}

bool SimNetwork::is_down(const SiteId& site) const {
    std::lock_guard lock(faults_mutex_);
    return down_.contains(site);
}

bool SimNetwork::take_drop(const SiteId& site) {
    std::lock_guard lock(faults_mutex_);
    auto it = drops_.find(site);
    if (it == drops_.end() || it->second == 0) return false;
    --it->second;
    return true;
}

std::unique_ptr<SimNetwork> build_network(const SimConfig& cfg) { return std::make_unique<SimNetwork>(cfg); }

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

json to_json(const StepResult& r) {
    json j = {{"step", r.index}, {"op", r.op}, {"query_frames", r.query_frames}, {"frames", r.frames}};
    if (!r.site.empty()) j["site"] = r.site;
    if (!r.label.empty()) j["label"] = r.label;
    if (r.ingest) j["ingest"] = to_json(*r.ingest);
    if (r.outcome) {
        const QueryOutcome& o = *r.outcome;
        json missing = json::array();
        for (const auto& m : o.missing) missing.push_back({{"site", m.site_id}, {"reason", to_string(m.reason)}});
        json ids = json::array();
        for (const auto& row : o.rows) ids.push_back(row.site + "/" + row.id);
        j["cache"] = o.cache_hit ? "hit" : "miss";
        j["missing"] = missing;
        j["rows"] = o.rows.size();
        j["ids"] = ids;
        j["canonical"] = o.canonical.canonical_text;
    }
    return j;
}

namespace {

class StepFailure : public Error {
public:
    using Error::Error;
};

std::string step_string(const json& step, const char* name) {
    auto it = step.find(name);
    if (it == step.end() || !it->is_string()) throw StepFailure(std::string("step needs string \"") + name + "\"");
    return it->get<std::string>();
}

bool step_flag(const json& step, const char* name) {
    auto it = step.find(name);
    if (it == step.end()) return false;
    if (!it->is_boolean()) throw StepFailure(std::string("\"") + name + "\" must be a boolean");
    return it->get<bool>();
}

void run_ingest(SimNetwork& net, const json& step, const std::filesystem::path& base_dir, StepResult& r) {
    SiteNode& node = net.node(r.site);
    if (auto f = step.find("file"); f != step.end()) {
        std::filesystem::path p = f->get<std::string>();
        r.ingest = ingest_file(node.store(), p.is_relative() && !base_dir.empty() ? base_dir / p : p);
    } else if (auto recs = step.find("records"); recs != step.end() && recs->is_array()) {
        std::string text;
        for (const auto& rec : *recs) text += rec.dump() + "\n";
        r.ingest = node.store().ingest_text(text);
    } else if (auto jl = step.find("jsonl"); jl != step.end() && jl->is_string()) {
        r.ingest = node.store().ingest_text(jl->get<std::string>());
    } else {
        throw StepFailure("ingest needs \"file\", \"records\" or \"jsonl\"");
    }
}

void run_query(SimNetwork& net, const json& step, StepResult& r) {
    SiteNode& node = net.node(r.site);
    FormalQuery q;
    if (auto dsl = step.find("dsl"); dsl != step.end() && dsl->is_string()) {
        q = translate(dsl->get<std::string>(), node.dictionary(), node.site_id());
    } else if (auto fq = step.find("formal_query"); fq != step.end()) {
        q = formal_query_from_json(*fq);
    } else {
        throw StepFailure("query needs \"dsl\" or \"formal_query\"");
    }
    if (step_flag(step, "local")) q.scope.hop_budget = 0;
    r.outcome = node.query(std::move(q), QueryOptions{step_flag(step, "bypass_cache")});
}

const StepResult* find_query(const std::vector<StepResult>& done, const json& step) {
    std::string label;
    if (auto it = step.find("query"); it != step.end() && it->is_string()) label = it->get<std::string>();
    for (auto it = done.rbegin(); it != done.rend(); ++it) {
        if (it->outcome && (label.empty() || it->label == label)) return &*it;
    }
    throw StepFailure(label.empty() ? "no query to assert on" : "no query labelled " + label);
}

void run_assert(const json& step, const std::vector<StepResult>& done) {
    const StepResult& target = *find_query(done, step);
    const QueryOutcome& o = *target.outcome;
    auto fail = [](const std::string& what) { throw StepFailure("assertion failed: " + what); };
    if (auto v = step.find("rows"); v != step.end() && v->get<std::size_t>() != o.rows.size()) {
        fail("rows " + std::to_string(o.rows.size()) + " != " + v->dump());
    }
    if (auto v = step.find("missing"); v != step.end()) {
        std::vector<std::string> want = v->get<std::vector<std::string>>();
        std::vector<std::string> got;
        for (const auto& m : o.missing) got.push_back(m.site_id);
        std::sort(want.begin(), want.end());
        if (want != got) fail("missing " + json(got).dump() + " != " + v->dump());
    }
    if (auto v = step.find("cache"); v != step.end()) {
        std::string got = o.cache_hit ? "hit" : "miss";
        if (got != v->get<std::string>()) fail("cache " + got + " != " + v->dump());
    }
    if (auto v = step.find("query_frames"); v != step.end() && v->get<std::size_t>() != target.query_frames) {
        fail("query_frames " + std::to_string(target.query_frames) + " != " + v->dump());
    }
    if (auto v = step.find("ids"); v != step.end()) {
        std::vector<std::string> got;
        for (const auto& row : o.rows) got.push_back(row.id);
        std::vector<std::string> want = v->get<std::vector<std::string>>();
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        if (got != want) fail("ids " + json(got).dump() + " != " + v->dump());
    }
}

} // namespace

ScenarioResult run_scenario(SimNetwork& net, const json& script, const std::filesystem::path& base_dir) {
    const json* steps = &script;
    if (script.is_object()) {
        auto it = script.find("steps");
        if (it == script.end()) throw ParseError(0, "scenario needs \"steps\"");
        steps = &*it;
    }
    if (!steps->is_array()) throw ParseError(0, "scenario steps must be an array");

    ScenarioResult result;
    for (std::size_t i = 0; i < steps->size(); ++i) {
        for (const auto& f : net.config().faults) {
            if (f.step == i) net.apply(f.action, f.site);
        }
        const json& step = (*steps)[i];
        StepResult r;
        r.index = i;
        std::size_t before = net.transcript().size();
        try {
            if (!step.is_object()) throw StepFailure("step must be an object");
            r.op = step_string(step, "op");
            if (step.contains("site")) r.site = step_string(step, "site");
            if (step.contains("label")) r.label = step_string(step, "label");
            if (r.op == "ingest") {
                run_ingest(net, step, base_dir, r);
            } else if (r.op == "query") {
                run_query(net, step, r);
            } else if (r.op == "fault") {
                auto action = fault_action_from_string(step_string(step, "action"));
                if (!action) throw StepFailure("fault action must be down, up or drop_next");
                net.apply(*action, r.site);
            } else if (r.op == "assert") {
                run_assert(step, result.steps);
            } else {
                throw StepFailure("unknown op \"" + r.op + "\"");
            }
        } catch (const std::exception& e) {
            result.ok = false;
            result.failed_step = i;
            result.failure = "step " + std::to_string(i) + ": " + e.what();
            result.steps.push_back(std::move(r));
            return result;
        }
        r.frames = net.transcript().size() - before;
        r.query_frames = net.transcript().count(MessageType::query, before);
        result.steps.push_back(std::move(r));
    }
    return result;
}

} // namespace mammofed
