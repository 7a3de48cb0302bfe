#pragma once

// Multi-site networks for tests and demos: nodes wired full-mesh either
// in-process or over loopback TCP, scripted scenarios with fault injection, and
// a transcript of every inter-site frame.

#include "mammofed/node.hpp"
#include "mammofed/transport.hpp"
#include "mammofed/wire.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace mammofed {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct SimSite {
    SiteId site_id;
    std::optional<std::uint16_t> port;  // inter-site TCP port; unset = in-process
    std::optional<std::uint16_t> http_port;
    std::filesystem::path seed_data;
    std::string token;
};

enum class FaultAction { down, up, drop_next };

std::string_view to_string(FaultAction a);
std::optional<FaultAction> fault_action_from_string(std::string_view s);

struct SimFault {
    std::size_t step = 0;  // applied before this scenario step runs
    SiteId site;
    FaultAction action = FaultAction::down;
};

struct SimConfig {
    std::vector<SimSite> sites;
    std::string token = "mammofed";  // default for sites without their own
    std::chrono::milliseconds deadline{2000};
    std::chrono::milliseconds latency{0};  // per link and direction
    std::size_t cache_capacity = 256;
    std::uint64_t seed = 1;
    std::vector<SimFault> faults;
};

/// Throws ParseError for structural problems and StartupError for inconsistent
/// values (duplicate ids or ports, negative latency). Relative seed paths resolve
/// against `base_dir`.
SimConfig sim_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SimConfig load_sim_config(const std::filesystem::path& path);

/// Sites s1..sN, in-process, no seed data.
SimConfig in_process_config(std::size_t sites, std::string token = "mammofed");

// ---------------------------------------------------------------------------
// Transcript
// ---------------------------------------------------------------------------

struct TranscriptRecord {
    std::uint64_t seq = 0;  // logical clock
    SiteId from;
    SiteId to;
    MessageType type = MessageType::query;
    std::string query_id;
    std::string body;  // full frame body as sent
};

/// Append-only, totally ordered.
class Transcript {
public:
    void append(SiteId from, SiteId to, const std::string& body);
    [[nodiscard]] std::vector<TranscriptRecord> records() const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::size_t count(MessageType type, std::size_t since = 0) const;

    /// One JSON object per line with a summary of each frame; tokens are not written.
    [[nodiscard]] std::string to_jsonl() const;

private:
    mutable std::mutex mutex_;
    std::vector<TranscriptRecord> records_;
};

nlohmann::json summary_json(const TranscriptRecord& r);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

class SimNetwork {
public:
    /// Starts every node, loads seed data and cross-wires the registries.
    /// Throws StartupError (port conflicts) or IoError (seed data).
    explicit SimNetwork(SimConfig cfg);
    ~SimNetwork();

    SimNetwork(const SimNetwork&) = delete;
    SimNetwork& operator=(const SimNetwork&) = delete;

    [[nodiscard]] const SimConfig& config() const { return cfg_; }
    [[nodiscard]] std::vector<SiteId> site_ids() const;
    /// Throws QueryError for unknown sites.
    SiteNode& node(const SiteId& site);
    Transcript& transcript() { return transcript_; }

    void apply(FaultAction action, const SiteId& site);
    [[nodiscard]] bool is_down(const SiteId& site) const;

    /// Inter-site port of a TCP site, after binding.
    [[nodiscard]] std::optional<std::uint16_t> port(const SiteId& site) const;

private:
    class Router;
    struct Member;

    /// Consumes a pending drop for `site`.
    bool take_drop(const SiteId& site);

    SimConfig cfg_;
    Transcript transcript_;
    mutable std::mutex faults_mutex_;
    std::set<SiteId> down_;
    std::map<SiteId, int> drops_;
    std::map<SiteId, std::unique_ptr<Member>> members_;
};

std::unique_ptr<SimNetwork> build_network(const SimConfig& cfg);

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

struct StepResult {
    std::size_t index = 0;
    std::string op;
    SiteId site;
    std::string label;
    std::optional<QueryOutcome> outcome;
    std::optional<IngestReport> ingest;
    std::size_t query_frames = 0;  // QUERY frames sent while this step ran
    std::size_t frames = 0;
};

nlohmann::json to_json(const StepResult& r);

struct ScenarioResult {
    bool ok = true;
    std::optional<std::size_t> failed_step;
    std::string failure;
    std::vector<StepResult> steps;
};

/// Runs steps in order. `script` is an array of steps or {"steps":[...]}; step
/// ops are ingest, query, fault and assert. A failing assertion or step stops
/// the run and reports its index.
ScenarioResult run_scenario(SimNetwork& net, const nlohmann::json& script, const std::filesystem::path& base_dir = {});

} // namespace mammofed
