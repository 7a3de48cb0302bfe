// mammofed: operator and test-harness front end.
//
// Client subcommands talk to a node's HTTP endpoint. The node address comes from
// --url or from the site's http_port in the network config (--config or
// MAMMOFED_CONFIG); the bearer token from MAMMOFED_TOKEN, falling back to the
// config's token for that site.

#include "mammofed/clinical.hpp"
#include "mammofed/error.hpp"
#include "mammofed/http_server.hpp"
#include "mammofed/service_api.hpp"
#include "mammofed/simulator.hpp"

#include <array>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

using nlohmann::json;
using namespace mammofed;

namespace {

enum Exit { ok = 0, user_error = 1, transport_error = 2 };

class UserError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Target {
    std::string site;
    std::string url;
    std::string config;
};

struct Endpoint {
    std::string address;
    std::string token;
};

std::string env(const char* name) {
    const char* v = std::getenv(name);
    return v ? v : "";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UserError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Endpoint resolve(const Target& t) {
    Endpoint ep;
    ep.token = env("MAMMOFED_TOKEN");
    std::string config = t.config.empty() ? env("MAMMOFED_CONFIG") : t.config;
    if (!config.empty()) {
        SimConfig cfg = load_sim_config(config);
        for (const auto& s : cfg.sites) {
            if (s.site_id != t.site) continue;
            if (ep.token.empty()) ep.token = s.token;
            if (t.url.empty()) {
                if (!s.http_port || *s.http_port == 0) throw UserError("site " + t.site + " has no fixed http_port");
                ep.address = "127.0.0.1:" + std::to_string(*s.http_port);
            }
        }
    }
    if (!t.url.empty()) ep.address = t.url;
    if (ep.address.empty()) throw UserError("unknown site " + t.site + " (pass --url or --config)");
    return ep;
}

// 4xx is the caller's fault, anything else unexpected means the node or network failed.
int exit_for(int status) {
    if (status >= 200 && status < 300) return ok;
    if (status >= 400 && status < 500) return user_error;
    return transport_error;
}

HttpResult call(const Target& t, const std::string& method, const std::string& path, const std::string& body = "") {
    Endpoint ep = resolve(t);
    return http_request(ep.address, method, path, body, ep.token);
}

int emit(const HttpResult& r) {
    if (exit_for(r.status) != ok) {
        std::cerr << "error: HTTP " << r.status << ": " << r.body;
        return exit_for(r.status);
    }
    if (auto it = r.headers.find("x-missing-sites"); it != r.headers.end() && !it->second.empty()) {
        std::cerr << "warning: missing sites " << it->second << "\n";
    }
    std::cout << r.body;
    return ok;
}

/// Every row of `target` across the federation, default projection.
std::vector<Row> fetch_all(const Target& t, Entity target, bool local, int& status) {
    FormalQuery q;
    q.target = target;
    json body = {{"formal_query", to_json(q)}, {"local", local}, {"format", "xml"}};
    HttpResult r = call(t, "POST", "/query", body.dump());
    status = r.status;
    if (exit_for(r.status) != ok) {
        std::cerr << "error: HTTP " << r.status << ": " << r.body;
        return {};
    }
    if (auto it = r.headers.find("x-missing-sites"); it != r.headers.end() && !it->second.empty()) {
        std::cerr << "warning: missing sites " << it->second << "\n";
    }
    return result_set_from_xml(r.body).rows;
}

volatile std::sig_atomic_t g_stop = 0;

int serve(const std::string& config_path) {
    SimConfig cfg = load_sim_config(config_path);
    SimNetwork net(cfg);
    std::vector<std::unique_ptr<ServiceApi>> apis;
    std::vector<std::unique_ptr<HttpServer>> servers;
    for (const auto& s : cfg.sites) {
        if (!s.http_port) continue;
        std::string token = env("MAMMOFED_TOKEN").empty() ? s.token : env("MAMMOFED_TOKEN");
        apis.push_back(std::make_unique<ServiceApi>(net.node(s.site_id), token));
        servers.push_back(std::make_unique<HttpServer>(*apis.back(), "127.0.0.1", *s.http_port));
        servers.back()->start();
        json line = {{"site", s.site_id}, {"http_port", servers.back()->port()}};
        if (auto p = net.port(s.site_id)) line["port"] = *p;
        std::cout << line.dump() << std::endl;
    }
    if (servers.empty()) std::cerr << "warning: no site has an http_port; nothing is reachable\n";
    std::cerr << "serving " << cfg.sites.size() << " site(s); interrupt to stop\n";

    std::signal(SIGINT, [](int) { g_stop = 1; });
    std::signal(SIGTERM, [](int) { g_stop = 1; });
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    for (auto& s : servers) s->stop();
    return ok;
}

int suite_contralateral(const Target& t, bool local, const std::string& format) {
    int status = 0;
    auto studies = studies_from_rows(fetch_all(t, Entity::studies, local, status));
    if (exit_for(status) != ok) return exit_for(status);
    auto images = images_from_rows(fetch_all(t, Entity::images, local, status));
    if (exit_for(status) != ok) return exit_for(status);

    auto cohort = contralateral_cohort(studies);
    std::set<std::string> in_cohort(cohort.begin(), cohort.end());
    auto asym = patient_asymmetry(studies, images);

    std::vector<std::vector<std::string>> rows;
    std::vector<double> xs, ys;
    for (const auto& [patient, a] : asym) {
        bool c = in_cohort.count(patient) > 0;
        rows.push_back({patient, format_number(a), c ? "1" : "0"});
        xs.push_back(a);
        ys.push_back(c ? 1.0 : 0.0);
    }
    std::optional<double> r;
    try {
        r = pearson_correlation(xs, ys);
    } catch (const CorrelationError& e) {
        std::cerr << "note: correlation undefined: " << e.what() << "\n";
    }

    if (format == "json") {
        json out = {{"cohort", cohort}, {"patients_with_asymmetry", asym.size()}};
        out["asymmetry_correlation"] = r ? json(*r) : json(nullptr);
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << to_csv({"patient_id", "max_density_asymmetry", "contralateral"}, rows);
        if (r) std::cerr << "pearson r (asymmetry, contralateral) = " << format_number(*r) << "\n";
    }
    return ok;
}

int suite_qc_allocate(const Target& t, std::optional<std::uint64_t> seed, std::optional<std::size_t> count) {
    int status = 0;
    auto rows = fetch_all(t, Entity::patients, true, status);
    if (exit_for(status) != ok) return exit_for(status);
    if (count && *count < rows.size()) rows.resize(*count);

    json assignments = json::array();
    std::array<int, 3> counts{};
    if (seed) {
        // A fixed seed replays the desk offline so the node's live state is untouched.
        AllocationState state(*seed);
        for (const auto& row : rows) {
            ReaderPair p = state.allocate(row.id);
            assignments.push_back({{"patient_id", row.id}, {"pair", p.to_string()}});
        }
        counts = state.pair_counts();
    } else {
        for (const auto& row : rows) {
            HttpResult r = call(t, "POST", "/allocate", json{{"patient_id", row.id}}.dump());
            if (exit_for(r.status) != ok) {
                std::cerr << "error: allocating " << row.id << ": HTTP " << r.status << ": " << r.body;
                return exit_for(r.status);
            }
            json j = json::parse(r.body);
            assignments.push_back({{"patient_id", row.id}, {"pair", j.at("pair")}});
            for (int i = 0; i < 3; ++i) counts[static_cast<std::size_t>(i)] = j.at("pair_counts").at(ReaderPair{i}.to_string());
        }
    }
    json pc = json::object();
    for (int i = 0; i < 3; ++i) pc[ReaderPair{i}.to_string()] = counts[static_cast<std::size_t>(i)];
    json out = {{"patients", rows.size()}, {"pair_counts", pc}, {"assignments", assignments}};
    if (seed) out["seed"] = *seed;
    std::cout << out.dump(2) << "\n";
    return ok;
}

int suite_qc_metrics(const Target& t, bool local) {
    int status = 0;
    auto annotations = annotations_from_rows(fetch_all(t, Entity::annotations, local, status));
    if (exit_for(status) != ok) return exit_for(status);
    std::cout << disagreement_csv(disagreement_report(annotations));
    return ok;
}

int sim_run(const std::string& config_path, const std::string& script_path, const std::string& transcript_path) {
    SimConfig cfg = load_sim_config(config_path);
    json script;
    try {
        script = json::parse(read_file(script_path));
    } catch (const json::parse_error& e) {
        throw UserError(script_path + ": " + e.what());
    }
    SimNetwork net(cfg);
    ScenarioResult result = run_scenario(net, script, std::filesystem::path(script_path).parent_path());

    json steps = json::array();
    for (const auto& s : result.steps) steps.push_back(to_json(s));
    json out = {{"ok", result.ok}, {"steps", steps}, {"frames", net.transcript().size()}};
    if (result.failed_step) {
        out["failed_step"] = *result.failed_step;
        out["failure"] = result.failure;
    }
    std::cout << out.dump(2) << "\n";
    if (!transcript_path.empty()) {
        std::ofstream f(transcript_path, std::ios::binary);
        if (!f) throw UserError("cannot write " + transcript_path);
        f << net.transcript().to_jsonl();
    }
    if (!result.ok) {
        std::cerr << "scenario failed at step " << (result.failed_step ? *result.failed_step : 0) << ": "
                  << result.failure << "\n";
        return user_error;
    }
    return ok;
}

void add_target(CLI::App* cmd, Target& t) {
    cmd->add_option("--site", t.site, "Site id")->required();
    cmd->add_option("--url", t.url, "Node HTTP address host:port (overrides the config)");
    cmd->add_option("--config", t.config, "Network config naming the site's http_port");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated mammogram metadata queries"};
    app.require_subcommand(1);

    Target target;
    std::string config, script, transcript, file, dsl, format = "xml", patient, like, suite_name;
    bool local = false, bypass = false, children_band = false;
    int age_band = 3;
    std::optional<int> pregnancy_band;
    double threshold = 0.9;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> count;

    auto* serve_cmd = app.add_subcommand("serve", "Run the nodes of a network config");
    serve_cmd->add_option("--config", config, "Network config (JSON)")->required()->check(CLI::ExistingFile);

    auto* ingest_cmd = app.add_subcommand("ingest", "Load JSONL records into a site");
    add_target(ingest_cmd, target);
    ingest_cmd->add_option("--file", file, "JSONL file")->required()->check(CLI::ExistingFile);

    auto* query_cmd = app.add_subcommand("query", "Run a DSL query");
    add_target(query_cmd, target);
    query_cmd->add_option("dsl", dsl, "Query text")->required();
    query_cmd->add_flag("--local", local, "Do not forward to other sites");
    query_cmd->add_flag("--bypass-cache", bypass, "Skip the knowledge cache");
    query_cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"xml", "json"}));

    auto* similar_cmd = app.add_subcommand("similar", "Find cases similar to a patient");
    add_target(similar_cmd, target);
    similar_cmd->add_option("--patient", patient, "Reference patient id")->required();
    similar_cmd->add_option("--age-band", age_band, "Half-width of the age band in years")->check(CLI::NonNegativeNumber);
    similar_cmd->add_flag("--children-band", children_band, "Require the same number of children");
    similar_cmd->add_option("--pregnancy-band", pregnancy_band, "Half-width of the pregnancy age bands");
    auto* like_opt = similar_cmd->add_option("--like", like, "Reference image id");
    similar_cmd->add_option("--threshold", threshold, "Minimum image similarity")->needs(like_opt);
    similar_cmd->add_flag("--local", local, "Do not forward to other sites");
    similar_cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"xml", "json"}));

    auto* suite_cmd = app.add_subcommand("suite", "Run a clinical suite");
    suite_cmd->add_option("name", suite_name, "contralateral | qc-allocate | qc-metrics")
        ->required()
        ->check(CLI::IsMember({"contralateral", "qc-allocate", "qc-metrics"}));
    add_target(suite_cmd, target);
    suite_cmd->add_option("--seed", seed, "Replay allocation offline with this seed");
    suite_cmd->add_option("--count", count, "Allocate only the first n patients");
    suite_cmd->add_flag("--local", local, "Use this site's data only");
    suite_cmd->add_option("--format", format, "contralateral output: csv or json");

    auto* cache_cmd = app.add_subcommand("cache", "Knowledge cache");
    auto* cache_stats = cache_cmd->add_subcommand("stats", "Print cache counters");
    cache_cmd->require_subcommand(1);
    add_target(cache_stats, target);

    auto* sim_cmd = app.add_subcommand("sim", "Simulated networks");
    auto* sim_run_cmd = sim_cmd->add_subcommand("run", "Run a scenario script");
    sim_cmd->require_subcommand(1);
    sim_run_cmd->add_option("--config", config, "Network config")->required()->check(CLI::ExistingFile);
    sim_run_cmd->add_option("--script", script, "Scenario script")->required()->check(CLI::ExistingFile);
    sim_run_cmd->add_option("--transcript", transcript, "Write the frame transcript as JSON lines");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? ok : user_error;
    }

    try {
        if (*serve_cmd) return serve(config);
        if (*ingest_cmd) return emit(call(target, "POST", "/ingest", read_file(file)));
        if (*query_cmd) {
            json body = {{"dsl", dsl}, {"local", local}, {"bypass_cache", bypass}, {"format", format}};
            return emit(call(target, "POST", "/query", body.dump()));
        }
        if (*similar_cmd) {
            json crit = {{"age_band", age_band}, {"children_band", children_band}};
            if (pregnancy_band) crit["pregnancy_band"] = *pregnancy_band;
            if (!like.empty()) crit["like"] = {{"image", like}, {"threshold", threshold}};
            json body = {{"patient_id", patient}, {"criteria", crit}, {"local", local}, {"format", format}};
            return emit(call(target, "POST", "/similar", body.dump()));
        }
        if (*suite_cmd) {
            if (suite_name == "contralateral") return suite_contralateral(target, local, format == "json" ? "json" : "csv");
            if (suite_name == "qc-allocate") return suite_qc_allocate(target, seed, count);
            return suite_qc_metrics(target, local);
        }
        if (*cache_stats) return emit(call(target, "GET", "/cache/stats"));
        if (*sim_run_cmd) return sim_run(config, script, transcript);
    } catch (const TransportError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return transport_error;
    } catch (const StartupError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return transport_error;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return user_error;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return user_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return transport_error;
    }
    std::cerr << app.help();
    return user_error;
}
