#include "mammofed/http_server.hpp"

#include "mammofed/error.hpp"
#include "mammofed/transport.hpp"

#include <algorithm>
#include <cctype>

#include <httplib.h>

namespace mammofed {

struct HttpServer::Impl {
    httplib::Server server;
};

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

} // namespace

HttpServer::HttpServer(ServiceApi& api, std::string host, std::uint16_t port)
    : impl_(std::make_unique<Impl>()), host_(std::move(host)), port_(port) {
    auto handler = [&api](const httplib::Request& req, httplib::Response& res) {
        ApiRequest r;
        r.method = req.method;
        r.path = req.path;
        for (const auto& [k, v] : req.params) r.params.emplace(k, v);
        for (const auto& [k, v] : req.headers) r.headers.emplace(lower(k), v);
        r.body = req.body;
        ApiResponse out = api.handle(r);
        res.status = out.status;
        for (const auto& [k, v] : out.headers) res.set_header(k, v);
        res.set_content(out.body, out.content_type);
    };
    impl_->server.Get(".*", handler);
    impl_->server.Post(".*", handler);
    impl_->server.Options(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
    if (port_ == 0) {
        int bound = impl_->server.bind_to_any_port(host_);
        if (bound < 0) throw StartupError("cannot listen on " + host_);
        port_ = static_cast<std::uint16_t>(bound);
    } else if (!impl_->server.bind_to_port(host_, port_)) {
        throw StartupError("cannot listen on " + host_ + ":" + std::to_string(port_));
    }
    thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpServer::stop() {
    if (thread_.joinable()) {
        impl_->server.stop();
        thread_.join();
    }
}

HttpResult http_request(const std::string& address, const std::string& method, const std::string& path,
                        const std::string& body, const std::string& token, std::chrono::milliseconds timeout) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos) throw TransportError(MissingReason::transport, "bad address " + address);
    int port = std::stoi(address.substr(colon + 1));
    httplib::Client client(address.substr(0, colon), port);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    httplib::Result res = method == "GET" ? client.Get(path, headers)
                                          : client.Post(path, headers, body, "application/json");
    if (!res) {
        auto err = res.error();
        auto reason = err == httplib::Error::Connection ? MissingReason::refused
                      : err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read
                          ? MissingReason::timeout
                          : MissingReason::transport;
        throw TransportError(reason, address + ": " + httplib::to_string(err));
    }
    HttpResult out;
    out.status = res->status;
    out.body = res->body;
    out.content_type = res->get_header_value("Content-Type");
    for (const auto& [k, v] : res->headers) out.headers[lower(k)] = v;
    return out;
}

} // namespace mammofed
