#include "generators.hpp"

#include "mammofed/error.hpp"
#include "mammofed/simulator.hpp"

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include <doctest.h>

using namespace mammofed;
using nlohmann::json;

namespace {

std::string patient(const std::string& id, int age) {
    return json{{"entity", "patient"}, {"patient_id", id}, {"age_years", age}, {"children_count", 0}, {"hrt", false}}.dump() +
           "\n";
}

void seed(SimNetwork& net) {
    int n = 0;
    for (const auto& site : net.site_ids()) {
        ++n;
        net.node(site).store().ingest_text(patient(site + "-old", 60 + n) + patient(site + "-young", 30 + n));
    }
}

std::vector<std::string> ids(const QueryOutcome& o) {
    std::vector<std::string> out;
    for (const auto& r : o.rows) out.push_back(r.site + "/" + r.id);
    return out;
}

std::vector<std::string> frame_types(const Transcript& t, std::size_t since = 0) {
    std::vector<std::string> out;
    auto recs = t.records();
    for (std::size_t i = since; i < recs.size(); ++i) {
        out.push_back(recs[i].from + ">" + recs[i].to + ":" + std::string(to_string(recs[i].type)));
    }
    return out;
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / ("mammofed-sim-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_SUITE("simulator") {

TEST_CASE("one, three and five site networks answer from every site") {
    for (std::size_t n : {1u, 3u, 5u}) {
        SimNetwork net(in_process_config(n));
        seed(net);
        QueryOutcome o = net.node("s1").query_dsl("find patients where age over 50");
        CHECK(o.rows.size() == n);
        CHECK(o.missing.empty());
        CHECK(o.versions.size() == n);
        for (const auto& r : o.rows) CHECK(r.id == r.site + "-old");
        // Every site gets one QUERY and answers with one RESULT.
        CHECK(net.transcript().count(MessageType::query) == n - 1);
        CHECK(net.transcript().count(MessageType::result) == n - 1);
    }
}

TEST_CASE("a local query sends no QUERY frames") {
    SimNetwork net(in_process_config(3));
    seed(net);
    QueryOutcome o = net.node("s2").query_dsl("find patients local where age over 50");
    CHECK(ids(o) == std::vector<std::string>{"s2/s2-old"});
    CHECK(net.transcript().count(MessageType::query) == 0);
}

TEST_CASE("a two-site query is one QUERY and one RESULT, and a down peer is reported missing") {
    SimNetwork net(in_process_config(2));
    seed(net);
    std::size_t before = net.transcript().size();
    QueryOutcome o = net.node("s1").query_dsl("find patients where age over 50", {true});
    CHECK(frame_types(net.transcript(), before) == std::vector<std::string>{"s1>s2:QUERY", "s2>s1:RESULT"});
    CHECK(ids(o) == std::vector<std::string>{"s1/s1-old", "s2/s2-old"});

    net.apply(FaultAction::down, "s2");
    QueryOutcome partial = net.node("s1").query_dsl("find patients where age over 50", {true});
    CHECK(ids(partial) == std::vector<std::string>{"s1/s1-old"});
    REQUIRE(partial.missing.size() == 1);
    CHECK(partial.missing[0].site_id == "s2");
    CHECK(partial.missing[0].reason == MissingReason::refused);
    CHECK(partial.xml.find("s2") == std::string::npos);
    CHECK(net.node("s1").registry().find("s2")->status == PeerStatus::down);

    net.apply(FaultAction::up, "s2");
    CHECK(net.node("s1").query_dsl("find patients where age over 50", {true}).missing.empty());
}

TEST_CASE("a dropped frame times out at the deadline") {
    SimConfig cfg = in_process_config(2);
    cfg.deadline = std::chrono::milliseconds(100);
    SimNetwork net(cfg);
    seed(net);
    net.apply(FaultAction::drop_next, "s2");
    auto start = Clock::now();
    QueryOutcome o = net.node("s1").query_dsl("find patients where age over 50", {true});
    CHECK(Clock::now() - start >= std::chrono::milliseconds(100));
    REQUIRE(o.missing.size() == 1);
    CHECK(o.missing[0].reason == MissingReason::timeout);
    CHECK(net.node("s1").query_dsl("find patients where age over 50", {true}).missing.empty());
}

TEST_CASE("scenarios run in order and report the failing assertion") {
    SimNetwork net(in_process_config(2));
    json script = json::parse(R"({"steps":[
        {"op":"ingest","site":"s1","records":[{"entity":"patient","patient_id":"A","age_years":70,"children_count":0,"hrt":false}]},
        {"op":"ingest","site":"s2","jsonl":"{\"entity\":\"patient\",\"patient_id\":\"B\",\"age_years\":71,\"children_count\":0,\"hrt\":false}\n"},
        {"op":"query","site":"s1","dsl":"find patients where age over 50","label":"first"},
        {"op":"assert","query":"first","rows":2,"missing":[],"cache":"miss","query_frames":1,"ids":["B","A"]},
        {"op":"query","site":"s1","dsl":"find patients where age over 50"},
        {"op":"assert","cache":"hit","query_frames":0},
        {"op":"fault","site":"s2","action":"down"},
        {"op":"query","site":"s1","dsl":"find patients where age over 50"},
        {"op":"assert","rows":1,"missing":["s2"],"cache":"miss"},
        {"op":"assert","rows":2}
    ]})");
    ScenarioResult r = run_scenario(net, script);
    CHECK_FALSE(r.ok);
    CHECK(r.failed_step == 9u);
    CHECK(r.failure.find("step 9") == 0);
    CHECK(r.steps.size() == 10);
    CHECK(to_json(r.steps[2]).at("ids") == json::array({"s1/A", "s2/B"}));

    SimNetwork other(in_process_config(1));
    ScenarioResult bad = run_scenario(other, json::parse(R"([{"op":"dance"}])"));
    CHECK(bad.failed_step == 0u);
    CHECK_THROWS_AS(run_scenario(other, json::parse(R"({"nope":1})")), ParseError);
}

TEST_CASE("configured faults fire before their step") {
    SimConfig cfg = in_process_config(2);
    cfg.faults.push_back({1, "s2", FaultAction::down});
    SimNetwork net(cfg);
    seed(net);
    ScenarioResult r = run_scenario(net, json::parse(R"([
        {"op":"query","site":"s1","dsl":"find patients where age over 50","bypass_cache":true},
        {"op":"query","site":"s1","dsl":"find patients where age over 50","bypass_cache":true},
        {"op":"assert","missing":["s2"]}])"));
    CHECK(r.ok);
    CHECK(r.steps[0].outcome->missing.empty());
}

TEST_CASE("identical runs produce identical transcripts") {
    auto run = [] {
        SimNetwork net(in_process_config(3));
        seed(net);
        net.node("s1").query_dsl("find patients where age over 50");
        net.node("s3").query_dsl("find patients where age under 50");
        net.node("s1").query_dsl("find patients where age over 50");
        return net.transcript().to_jsonl();
    };
    std::string a = run();
    CHECK(a == run());
    CHECK(a.find("mammofed") == std::string::npos);  // tokens stay out
}

TEST_CASE("the transcript holds every frame with increasing sequence numbers") {
    SimNetwork net(in_process_config(3));
    seed(net);
    net.node("s1").query_dsl("find patients where age over 50");
    auto recs = net.transcript().records();
    // 2 probes, 2 versions, 2 queries, 2 results
    REQUIRE(recs.size() == 8);
    for (std::size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].seq == i + 1);
    json first = summary_json(recs[0]);
    CHECK(first.at("type") == "VERSION_PROBE");
    CHECK(first.at("from") == "s1");
    json result = summary_json(recs.back());
    CHECK(result.at("type") == "RESULT");
    CHECK(result.at("records") == 1);
}

TEST_CASE("tcp networks answer exactly like in-process ones") {
    SimConfig mem = in_process_config(3);
    SimConfig tcp = mem;
    for (auto& s : tcp.sites) s.port = 0;
    SimNetwork a(mem), b(tcp);
    mftest::Rng rng(40);
    for (const auto& site : a.site_ids()) {
        std::string text = mftest::to_jsonl(mftest::random_site_records(rng, site, 120));
        a.node(site).store().ingest_text(text);
        b.node(site).store().ingest_text(text);
    }
    REQUIRE(b.port("s1"));
    CHECK_FALSE(a.port("s1"));
    for (const char* q : {"find images where age over 50", "find studies where density asymmetry over 0.1",
                          "find annotations where hrt = true or age under 40"}) {
        QueryOutcome x = a.node("s2").query_dsl(q), y = b.node("s2").query_dsl(q);
        CHECK(x.xml == y.xml);
        CHECK(y.missing.empty());
    }
    b.apply(FaultAction::down, "s3");
    QueryOutcome partial = b.node("s1").query_dsl("find images where age over 50", {true});
    REQUIRE(partial.missing.size() == 1);
    CHECK(partial.missing[0].reason == MissingReason::refused);
    b.apply(FaultAction::up, "s3");
    CHECK(b.node("s1").query_dsl("find images where age over 50", {true}).missing.empty());
}

TEST_CASE("configs are validated") {
    auto dir = temp_dir();
    std::ofstream(dir / "seed.jsonl") << patient("P1", 55);
    std::ofstream(dir / "net.json") << R"({"token":"t","deadline_ms":500,"seed":3,
        "sites":[{"site_id":"A","seed_data":"seed.jsonl"},{"site_id":"B","port":0,"token":"u"}],
        "faults":[{"step":2,"site":"B","action":"drop_next"}]})";
    SimConfig cfg = load_sim_config(dir / "net.json");
    CHECK(cfg.sites.size() == 2);
    CHECK(cfg.sites[0].token == "t");
    CHECK(cfg.sites[1].token == "u");
    CHECK(cfg.sites[0].seed_data == dir / "seed.jsonl");
    CHECK(cfg.faults.at(0).action == FaultAction::drop_next);
    SimNetwork net(cfg);
    CHECK(net.node("A").store().data_version() == 1);
    CHECK(net.node("B").query_dsl("find patients where age over 50").rows.size() == 1);
    CHECK_THROWS_AS(net.node("Z"), QueryError);

    CHECK_THROWS_AS(sim_config_from_json(json::parse(R"({"sites":[]})")), ParseError);
    CHECK_THROWS_AS(sim_config_from_json(json::parse(R"({"sites":[{"site_id":"A"},{"site_id":"A"}]})")), StartupError);
    CHECK_THROWS_AS(sim_config_from_json(json::parse(R"({"sites":[{"site_id":"A","port":9000},{"site_id":"B","port":9000}]})")),
                    StartupError);
    CHECK_THROWS_AS(sim_config_from_json(json::parse(R"({"latency_ms":-1,"sites":[{"site_id":"A"}]})")), StartupError);
    CHECK_THROWS_AS(sim_config_from_json(json::parse(R"({"sites":[{"site_id":"A","port":"x"}]})")), ParseError);
    CHECK_THROWS_AS(load_sim_config(dir / "absent.json"), IoError);

    SimConfig missing_seed = in_process_config(1);
    missing_seed.sites[0].seed_data = dir / "absent.jsonl";
    CHECK_THROWS_AS(SimNetwork{missing_seed}, IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a taken port stops the network from starting") {
    SimConfig first = in_process_config(1);
    first.sites[0].port = 0;
    SimNetwork a(first);
    SimConfig second = in_process_config(1);
    second.sites[0].port = a.port("s1");
    CHECK_THROWS_AS(SimNetwork{second}, StartupError);
}

}
