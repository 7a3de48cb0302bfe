#pragma once

// Client-facing HTTP endpoint of a node, as a pure request -> response function
// plus a listener adapter (http_server.hpp).

#include "mammofed/node.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace mammofed {

struct ApiRequest {
    std::string method;  // "GET", "POST", ...
    std::string path;
    std::map<std::string, std::string> params;   // query string
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;

    [[nodiscard]] const std::string* header(std::string_view name) const;
};

/// JSON rendering of a result: {"query","site","canonical","cache","missing","records"} with
/// record fields in projection order.
nlohmann::ordered_json result_json(const QueryOutcome& outcome, const SiteId& site);

/// "B:timeout,C:refused".
std::string missing_header(const std::vector<MissingSite>& missing);

class ServiceApi {
public:
    /// Every route except GET /health requires "Authorization: Bearer <token>".
    ServiceApi(SiteNode& node, std::string token);

    ApiResponse handle(const ApiRequest& request);

private:
    ApiResponse route(const ApiRequest& request);
    ApiResponse query(const ApiRequest& request);
    ApiResponse similar(const ApiRequest& request);
    ApiResponse render(const ApiRequest& request, const nlohmann::json& body, const QueryOutcome& outcome);

    SiteNode& node_;
    std::string token_;
};

} // namespace mammofed
