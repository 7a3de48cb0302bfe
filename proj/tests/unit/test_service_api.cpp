#include "mammofed/error.hpp"
#include "mammofed/http_server.hpp"
#include "mammofed/service_api.hpp"
#include "mammofed/simulator.hpp"

#include <doctest.h>

using namespace mammofed;
using nlohmann::json;

namespace {

const char* kSiteData = R"({"entity":"patient","patient_id":"P1","age_years":52,"children_count":1,"hrt":true}
{"entity":"patient","patient_id":"P2","age_years":53,"children_count":2,"hrt":false}
{"entity":"study","study_id":"S1","patient_id":"P1","study_date":"2002-01-01"}
{"entity":"image","image_id":"I1","study_id":"S1","laterality":"L","view":"MLO","breast_area_mm2":100,"mean_density":0.5,"feature_vector":[0,0,0,0,0,0,0,0]}
{"entity":"annotation","annotation_id":"N1","image_id":"I1","author":"cad","kind":"mass","regions":[[0,0,1,1]]}
)";

struct Grid {
    SimNetwork net{in_process_config(2, "s3cr3t")};
    ServiceApi api{net.node("s1"), "s3cr3t"};

    Grid() {
        net.node("s1").store().ingest_text(kSiteData);
        net.node("s2").store().ingest_text(
            R"({"entity":"patient","patient_id":"Q1","age_years":51,"children_count":1,"hrt":true})"
            "\n");
    }

    ApiResponse call(std::string method, std::string path, std::string body = "", std::map<std::string, std::string> params = {},
                     std::string token = "s3cr3t") {
        ApiRequest r;
        r.method = std::move(method);
        r.path = std::move(path);
        r.body = std::move(body);
        r.params = std::move(params);
        if (!token.empty()) r.headers["authorization"] = "Bearer " + token;
        return api.handle(r);
    }
};

nlohmann::ordered_json body(const ApiResponse& r) { return nlohmann::ordered_json::parse(r.body); }

} // namespace

TEST_SUITE("service_api") {

TEST_CASE("health needs no token") {
    Grid g;
    ApiResponse r = g.call("GET", "/health", "", {}, "");
    CHECK(r.status == 200);
    CHECK(body(r).at("site") == "s1");
}

TEST_CASE("other routes reject missing or wrong tokens without side effects") {
    Grid g;
    std::uint64_t version = g.net.node("s1").store().data_version();
    CHECK(g.call("POST", "/ingest", kSiteData, {}, "").status == 401);
    CHECK(g.call("POST", "/ingest", kSiteData, {}, "nope").status == 401);
    CHECK(g.call("POST", "/allocate", R"({"patient_id":"P1"})", {}, "nope").status == 401);
    CHECK(g.call("POST", "/query", R"({"dsl":"find patients where age over 1"})", {}, "nope").status == 401);
    CHECK(g.net.node("s1").store().data_version() == version);
    CHECK(g.net.node("s1").allocation_counts() == std::array<int, 3>{0, 0, 0});
    CHECK(g.net.transcript().size() == 0);
    CHECK(g.call("GET", "/sites", "", {}, "nope").body.find("s3cr3t") == std::string::npos);
    CHECK(g.call("GET", "/sites").body.find("s3cr3t") == std::string::npos);
}

TEST_CASE("queries answer with merged xml by default and json on request") {
    Grid g;
    ApiResponse xml = g.call("POST", "/query", R"({"dsl":"find patients where age over 50"})");
    CHECK(xml.status == 200);
    CHECK(xml.content_type.rfind("application/xml", 0) == 0);
    CHECK(xml.body.rfind("<resultset query=\"Q-", 0) == 0);
    CHECK(*xml.header("X-Cache") == "miss");
    CHECK(*xml.header("X-Missing-Sites") == "");

    ApiResponse again = g.call("POST", "/query", R"({"dsl":"find patients where age over 50"})");
    CHECK(*again.header("X-Cache") == "hit");
    CHECK(again.body == xml.body);

    ApiResponse js = g.call("POST", "/query", R"({"dsl":"find patients where age over 50","format":"json"})");
    CHECK(js.content_type == "application/json");
    auto j = body(js);
    ResultSet parsed = result_set_from_xml(xml.body);
    CHECK(j.at("query") == parsed.query_id.to_string());
    REQUIRE(j.at("records").size() == parsed.rows.size());
    for (std::size_t i = 0; i < parsed.rows.size(); ++i) {
        const auto& rec = j.at("records")[i];
        CHECK(rec.at("id") == parsed.rows[i].id);
        CHECK(rec.at("site") == parsed.rows[i].site);
        std::size_t k = 0;
        for (const auto& [name, value] : rec.at("fields").items()) {
            CHECK(name == parsed.rows[i].fields.at(k).first);
            CHECK(value == parsed.rows[i].fields.at(k).second);
            ++k;
        }
    }
    CHECK(parsed.rows.size() == 3);

    ApiResponse formal = g.call("POST", "/query",
                                json{{"formal_query", to_json(translate("find patients where age over 50", TermDictionary::defaults()))}}.dump());
    CHECK(formal.body == xml.body);
}

TEST_CASE("missing peers show up in the header and json, never in the xml") {
    Grid g;
    g.net.apply(FaultAction::down, "s2");
    ApiResponse r = g.call("POST", "/query", R"({"dsl":"find patients where age over 50"})");
    CHECK(r.status == 200);
    CHECK(*r.header("X-Missing-Sites") == "s2:refused");
    CHECK(r.body.find("s2") == std::string::npos);
    json j = body(g.call("POST", "/query", R"({"dsl":"find patients where age over 50","format":"json"})"));
    CHECK(j.at("missing")[0].at("site") == "s2");
    CHECK(j.at("missing")[0].at("reason") == "refused");
}

TEST_CASE("a query nobody can answer is a bad gateway") {
    Grid g;
    g.net.apply(FaultAction::down, "s2");
    json fq = to_json(translate("find images where age over 1", TermDictionary::defaults()));
    fq["predicate"] = {{"kind", "derived"}, {"provider", "find_one_like_it"}, {"params", {{"vector", {1, 2}}}},
                       {"op", ">="}, {"values", {0.5}}};
    ApiResponse r = g.call("POST", "/query", json{{"formal_query", fq}}.dump());
    CHECK(r.status == 502);
    CHECK(body(r).contains("error"));
}

TEST_CASE("allocation assigns once and refuses repeats") {
    Grid g;
    ApiResponse first = g.call("POST", "/allocate", R"({"patient_id":"P1"})");
    CHECK(first.status == 200);
    json j = body(first);
    CHECK(j.at("readers").size() == 2);
    CHECK(j.at("pair_counts").at(j.at("pair").get<std::string>()) == 1);
    CHECK(g.call("POST", "/allocate", R"({"patient_id":"P1"})").status == 409);
    CHECK(g.call("POST", "/allocate", R"({"patient_id":""})").status == 400);
    CHECK(g.call("GET", "/allocate").status == 405);
}

TEST_CASE("ingest reports acceptance and bumps the site version") {
    Grid g;
    ApiResponse r = g.call("POST", "/ingest",
                           R"({"entity":"patient","patient_id":"P9","age_years":40,"children_count":0,"hrt":false})"
                           "\n{broken\n");
    CHECK(r.status == 200);
    json j = body(r);
    CHECK(j.at("accepted") == 1);
    CHECK(j.at("rejected").size() == 1);
    CHECK(body(g.call("GET", "/sites")).at("data_version") == 2);
}

TEST_CASE("drilldowns read the local store") {
    Grid g;
    CHECK(body(g.call("GET", "/patients/P1")).at("age_years") == 52);
    CHECK(g.call("GET", "/patients/Q1").status == 404);
    auto studies = body(g.call("GET", "/studies", "", {{"patient", "P1"}})).at("records");
    REQUIRE(studies.size() == 1);
    CHECK(studies[0].at("study_id") == "S1");
    CHECK(body(g.call("GET", "/images", "", {{"study", "S1"}})).at("records")[0].at("image_id") == "I1");
    CHECK(body(g.call("GET", "/annotations", "", {{"image", "I1"}})).at("records")[0].at("author") == "cad");
    CHECK(g.call("GET", "/studies").status == 400);
    CHECK(g.call("GET", "/nowhere").status == 404);
    json stats = body(g.call("GET", "/cache/stats"));
    CHECK(stats.contains("hits"));
    json sites = body(g.call("GET", "/sites"));
    CHECK(sites.dump().find("s2") != std::string::npos);
}

TEST_CASE("reads do not change state") {
    Grid g;
    g.call("POST", "/query", R"({"dsl":"find patients where age over 50"})");
    std::string before = g.call("GET", "/cache/stats").body + g.call("GET", "/sites").body;
    for (const char* path : {"/health", "/patients/P1"}) {
        ApiResponse a = g.call("GET", path), b = g.call("GET", path);
        CHECK(a.body == b.body);
    }
    CHECK(g.call("GET", "/cache/stats").body + g.call("GET", "/sites").body == before);
}

TEST_CASE("bad requests are 400s") {
    Grid g;
    CHECK(g.call("POST", "/query", "not json").status == 400);
    CHECK(g.call("POST", "/query", "{}").status == 400);
    CHECK(g.call("POST", "/query", R"({"dsl":"find images where shoe size over 3"})").status == 400);
    CHECK(g.call("POST", "/query", R"({"dsl":"find images where"})").status == 400);
    CHECK(g.call("POST", "/query", R"({"dsl":"find images where age over 1","local":"yes"})").status == 400);
    CHECK(g.call("GET", "/query").status == 405);
}

TEST_CASE("similar-case search excludes the reference patient") {
    Grid g;
    json j = body(g.call("POST", "/similar", R"({"patient_id":"P1","format":"json"})"));
    std::vector<std::string> ids;
    for (const auto& r : j.at("records")) ids.push_back(r.at("id"));
    CHECK(ids == std::vector<std::string>{"P2", "Q1"});
    CHECK(g.call("POST", "/similar", R"({"patient_id":"nobody"})").status == 404);
    CHECK(g.call("POST", "/similar", R"({"patient_id":"P1","criteria":{"pregnancy_band":2}})").status == 400);
}

TEST_CASE("the http listener serves the api") {
    Grid g;
    HttpServer server(g.api, "127.0.0.1", 0);
    server.start();
    std::string addr = "127.0.0.1:" + std::to_string(server.port());
    HttpResult health = http_request(addr, "GET", "/health", "", "");
    CHECK(health.status == 200);
    HttpResult q = http_request(addr, "POST", "/query", R"({"dsl":"find patients where age over 50"})", "s3cr3t");
    CHECK(q.status == 200);
    CHECK(q.body == g.call("POST", "/query", R"({"dsl":"find patients where age over 50"})").body);
    CHECK(q.headers.at("x-cache") == "miss");
    CHECK(http_request(addr, "POST", "/query", "{}", "wrong").status == 401);
    server.stop();
    CHECK_THROWS_AS(http_request(addr, "GET", "/health", "", ""), TransportError);
}

}
