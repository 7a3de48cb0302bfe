#include "mammofed/service_api.hpp"

#include "mammofed/error.hpp"

namespace mammofed {

using nlohmann::json;
using nlohmann::ordered_json;

const std::string* ApiResponse::header(std::string_view name) const {
    for (const auto& [k, v] : headers) {
        if (k == name) return &v;
    }
    return nullptr;
}

ordered_json result_json(const QueryOutcome& outcome, const SiteId& site) {
    ordered_json missing = ordered_json::array();
    for (const auto& m : outcome.missing) {
        missing.push_back({{"site", m.site_id}, {"reason", to_string(m.reason)}, {"detail", m.detail}});
    }
    ordered_json records = ordered_json::array();
    for (const auto& row : outcome.rows) {
        ordered_json fields = ordered_json::object();
        for (const auto& [path, value] : row.fields) fields[path] = value;
        records.push_back({{"entity", to_string(row.entity)}, {"id", row.id}, {"site", row.site}, {"fields", fields}});
    }
    return {{"query", merged_query_id(outcome.canonical).to_string()},
            {"site", site},
            {"canonical", outcome.canonical.canonical_text},
            {"cache", outcome.cache_hit ? "hit" : "miss"},
            {"missing", missing},
            {"records", records}};
}

std::string missing_header(const std::vector<MissingSite>& missing) {
    std::string out;
    for (const auto& m : missing) {
        if (!out.empty()) out += ',';
        out += m.site_id + ":" + std::string(to_string(m.reason));
    }
    return out;
}

namespace {

class HttpError : public Error {
public:
    HttpError(int status, const std::string& what) : Error(what), status_(status) {}
    [[nodiscard]] int status() const { return status_; }

private:
    int status_;
};

std::string dump(const auto& j) { return j.dump(-1, ' ', false, json::error_handler_t::replace) + "\n"; }

ApiResponse json_response(int status, const json& body) { return {status, "application/json", dump(body), {}}; }

ApiResponse error_response(int status, const std::string& message) {
    return json_response(status, {{"error", message}});
}

json parse_body(const ApiRequest& req) {
    if (req.body.empty()) return json::object();
    try {
        json j = json::parse(req.body);
        if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte > 0 ? e.byte - 1 : 0, "request body is not valid JSON");
    }
}

bool flag(const json& body, const char* name) {
    auto it = body.find(name);
    if (it == body.end() || it->is_null()) return false;
    if (!it->is_boolean()) throw HttpError(400, std::string("\"") + name + "\" must be a boolean");
    return it->get<bool>();
}

bool wants_json(const ApiRequest& req, const json& body) {
    if (auto it = body.find("format"); it != body.end() && it->is_string()) return it->get<std::string>() == "json";
    if (auto it = req.params.find("format"); it != req.params.end()) return it->second == "json";
    if (auto it = req.headers.find("accept"); it != req.headers.end()) {
        return it->second.find("application/json") != std::string::npos &&
               it->second.find("xml") == std::string::npos;
    }
    return false;
}

const std::string& required_param(const ApiRequest& req, const char* name) {
    auto it = req.params.find(name);
    if (it == req.params.end() || it->second.empty()) {
        throw HttpError(400, std::string("missing query parameter \"") + name + "\"");
    }
    return it->second;
}

template <typename Index>
json children_of(const StoreSnapshot& snap, const Index& index, const std::string& parent, Entity entity) {
    json records = json::array();
    if (auto it = index.find(parent); it != index.end()) {
        for (const auto& id : it->second) {
            if (auto rec = get_entity(snap, entity, id)) records.push_back(to_json(*rec));
        }
    }
    return {{"records", records}};
}

int int_member(const json& j, const char* name, int fallback) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return fallback;
    if (!it->is_number_integer()) throw HttpError(400, std::string("\"") + name + "\" must be an integer");
    return it->get<int>();
}

SimilarityCriteria criteria_from_json(const json& c) {
    if (!c.is_object()) throw HttpError(400, "\"criteria\" must be an object");
    SimilarityCriteria crit;
    crit.age_band = int_member(c, "age_band", 3);
    crit.match_children_band = flag(c, "children_band");
    if (c.contains("pregnancy_band") && !c["pregnancy_band"].is_null()) {
        crit.match_pregnancy_ages_band = int_member(c, "pregnancy_band", 0);
    }
    if (auto t = c.find("target"); t != c.end() && t->is_string()) {
        auto e = entity_from_string(t->get<std::string>());
        if (!e) throw HttpError(400, "unknown target " + t->get<std::string>());
        crit.target = *e;
    }
    if (auto like = c.find("like"); like != c.end() && !like->is_null()) {
        if (!like->is_object()) throw HttpError(400, "\"like\" must be an object");
        ImageMatchCriteria m;
        auto image = like->find("image");
        if (image == like->end() || !image->is_string()) throw HttpError(400, "\"like.image\" must be a string");
        m.reference_image = image->get<std::string>();
        if (auto t = like->find("threshold"); t != like->end()) {
            if (!t->is_number()) throw HttpError(400, "\"like.threshold\" must be a number");
            m.threshold = t->get<double>();
        }
        if (auto v = like->find("views"); v != like->end()) {
            if (!v->is_array()) throw HttpError(400, "\"like.views\" must be an array");
            m.views.clear();
            for (const auto& view : *v) {
                std::string s = view.is_string() ? view.get<std::string>() : "";
                if (s == "MLO") m.views.push_back(View::MLO);
                else if (s == "CC") m.views.push_back(View::CC);
                else throw HttpError(400, "views must be MLO or CC");
            }
        }
        crit.image_match = m;
    }
    return crit;
}

} // namespace

ServiceApi::ServiceApi(SiteNode& node, std::string token) : node_(node), token_(std::move(token)) {}

ApiResponse ServiceApi::handle(const ApiRequest& request) {
    ApiResponse response;
    try {
        response = route(request);
    } catch (const HttpError& e) {
        response = error_response(e.status(), e.what());
    } catch (const FederationFailure& e) {
        response = error_response(502, e.what());
    } catch (const AllocationError& e) {
        response = error_response(409, e.what());
    } catch (const ParseError& e) {
        response = error_response(400, e.what());
    } catch (const TranslationError& e) {
        response = error_response(400, e.what());
    } catch (const QueryError& e) {
        response = error_response(400, e.what());
    } catch (const CriteriaError& e) {
        response = error_response(400, e.what());
    } catch (const CompileError& e) {
        response = error_response(400, e.what());
    } catch (const ExecutionError& e) {
        response = error_response(400, e.what());
    } catch (const std::exception& e) {
        response = error_response(500, e.what());
    }
    response.headers.emplace_back("Access-Control-Allow-Origin", "*");
    return response;
}

ApiResponse ServiceApi::route(const ApiRequest& req) {
    const std::string& m = req.method;
    const std::string& path = req.path;

    if (m == "OPTIONS") {
        ApiResponse r{204, "text/plain", "", {}};
        r.headers.emplace_back("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        r.headers.emplace_back("Access-Control-Allow-Headers", "Authorization, Content-Type, Accept");
        return r;
    }
    if (m == "GET" && path == "/health") {
        return json_response(200, {{"site", node_.site_id()}, {"status", "ok"}});
    }

    auto auth = req.headers.find("authorization");
    if (auth == req.headers.end() || auth->second != "Bearer " + token_) {
        return error_response(401, "missing or wrong bearer token");
    }

    if (path == "/query") {
        if (m != "POST") return error_response(405, "use POST");
        return query(req);
    }
    if (path == "/similar") {
        if (m != "POST") return error_response(405, "use POST");
        return similar(req);
    }
    if (path == "/ingest") {
        if (m != "POST") return error_response(405, "use POST");
        return json_response(200, to_json(node_.store().ingest_text(req.body)));
    }
    if (path == "/allocate") {
        if (m != "POST") return error_response(405, "use POST");
        json body = parse_body(req);
        auto id = body.find("patient_id");
        if (id == body.end() || !id->is_string() || id->get<std::string>().empty()) {
            throw HttpError(400, "\"patient_id\" must be a non-empty string");
        }
        ReaderPair pair = node_.allocate(id->get<std::string>());
        auto counts = node_.allocation_counts();
        auto [a, b] = pair.readers();
        json pair_counts = json::object();
        for (int i = 0; i < 3; ++i) pair_counts[ReaderPair{i}.to_string()] = counts[static_cast<std::size_t>(i)];
        return json_response(200, {{"patient_id", *id},
                                   {"pair", pair.to_string()},
                                   {"readers", {"R" + std::to_string(a), "R" + std::to_string(b)}},
                                   {"pair_counts", pair_counts}});
    }

    if (m != "GET") return error_response(path == "/sites" || path == "/cache/stats" ? 405 : 404, "no such route");
    if (path == "/sites") {
        json j = to_json(node_.registry());
        j["data_version"] = node_.store().data_version();
        return json_response(200, j);
    }
    if (path == "/cache/stats") return json_response(200, to_json(node_.cache().stats()));

    auto snap = node_.store().snapshot();
    if (path.starts_with("/patients/")) {
        std::string id = path.substr(std::string_view("/patients/").size());
        auto rec = get_entity(*snap, Entity::patients, id);
        if (!rec) return error_response(404, "no patient " + id);
        return json_response(200, to_json(*rec));
    }
    if (path == "/studies") return json_response(200, children_of(*snap, snap->studies_by_patient, required_param(req, "patient"), Entity::studies));
    if (path == "/images") return json_response(200, children_of(*snap, snap->images_by_study, required_param(req, "study"), Entity::images));
    if (path == "/annotations") {
        return json_response(200, children_of(*snap, snap->annotations_by_image, required_param(req, "image"), Entity::annotations));
    }
    return error_response(404, "no such route");
}

ApiResponse ServiceApi::render(const ApiRequest& req, const json& body, const QueryOutcome& outcome) {
    ApiResponse r;
    if (wants_json(req, body)) {
        r.content_type = "application/json";
        r.body = dump(result_json(outcome, node_.site_id()));
    } else {
        r.content_type = "application/xml; charset=utf-8";
        r.body = outcome.xml;
    }
    r.headers.emplace_back("X-Cache", outcome.cache_hit ? "hit" : "miss");
    r.headers.emplace_back("X-Missing-Sites", missing_header(outcome.missing));
    return r;
}

ApiResponse ServiceApi::query(const ApiRequest& req) {
    json body = parse_body(req);
    FormalQuery q;
    if (auto dsl = body.find("dsl"); dsl != body.end()) {
        if (!dsl->is_string()) throw HttpError(400, "\"dsl\" must be a string");
        q = translate(dsl->get<std::string>(), node_.dictionary(), node_.site_id());
    } else if (auto fq = body.find("formal_query"); fq != body.end()) {
        q = fq->is_string() ? decode(fq->get<std::string>()) : formal_query_from_json(*fq);
    } else {
        throw HttpError(400, "body needs \"dsl\" or \"formal_query\"");
    }
    if (flag(body, "local")) q.scope.hop_budget = 0;
    QueryOutcome outcome = node_.query(std::move(q), QueryOptions{flag(body, "bypass_cache")});
    return render(req, body, outcome);
}

ApiResponse ServiceApi::similar(const ApiRequest& req) {
    json body = parse_body(req);
    auto id = body.find("patient_id");
    if (id == body.end() || !id->is_string()) throw HttpError(400, "\"patient_id\" must be a string");
    auto rec = get_entity(node_.store(), Entity::patients, id->get<std::string>());
    if (!rec) return error_response(404, "no patient " + id->get<std::string>() + " at " + node_.site_id());
    SimilarityCriteria crit = criteria_from_json(body.value("criteria", json::object()));
    FormalQuery q = build_similarity_query(std::get<PatientRecord>(*rec), crit);
    if (flag(body, "local")) q.scope.hop_budget = 0;
    QueryOutcome outcome = node_.query(std::move(q), QueryOptions{flag(body, "bypass_cache")});
    return render(req, body, outcome);
}

} // namespace mammofed
