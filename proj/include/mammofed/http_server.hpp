#pragma once

// HTTP/1.1 listener for ServiceApi and a small blocking client used by the CLI.

#include "mammofed/service_api.hpp"

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <thread>

namespace mammofed {

class HttpServer {
public:
    HttpServer(ServiceApi& api, std::string host, std::uint16_t port);
    ~HttpServer();

    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds and serves on a background thread. Throws StartupError.
    void start();
    void stop();
    [[nodiscard]] std::uint16_t port() const { return port_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string host_;
    std::uint16_t port_;
    std::thread thread_;
};

struct HttpResult {
    int status = 0;
    std::string body;
    std::string content_type;
    std::map<std::string, std::string> headers;
};

/// Throws TransportError when the server cannot be reached.
HttpResult http_request(const std::string& address, const std::string& method, const std::string& path,
                        const std::string& body, const std::string& token,
                        std::chrono::milliseconds timeout = std::chrono::seconds(30));

} // namespace mammofed
