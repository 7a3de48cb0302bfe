#pragma once

// Frame transports between sites. A transport carries one request body to a peer
// and returns the peer's response body, or fails with a reason that the Result
// Handler records as a missing-site marker.

#include "mammofed/analyser.hpp"
#include "mammofed/error.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

namespace mammofed {

using Clock = std::chrono::steady_clock;

enum class MissingReason { timeout, refused, transport };

std::string_view to_string(MissingReason r);
std::optional<MissingReason> missing_reason_from_string(std::string_view s);

class TransportError : public Error {
public:
    TransportError(MissingReason reason, const std::string& what) : Error(what), reason_(reason) {}
    [[nodiscard]] MissingReason reason() const { return reason_; }

private:
    MissingReason reason_;
};

class Transport {
public:
    virtual ~Transport() = default;

    /// Throws TransportError. Must not return after `deadline` by more than scheduling slack.
    virtual std::string exchange(const PeerInfo& peer, const std::string& body, Clock::time_point deadline) = 0;
};

/// One TCP connection per exchange to `peer.address` ("host:port").
class TcpTransport final : public Transport {
public:
    std::string exchange(const PeerInfo& peer, const std::string& body, Clock::time_point deadline) override;
};

/// Returns the response body, or nullopt to leave the request unanswered.
using FrameHandler = std::function<std::optional<std::string>(const std::string& body)>;

/// Accepts framed requests on a TCP port and answers each with the handler's
/// result. Connections are served concurrently.
class FrameServer {
public:
    /// Port 0 picks an ephemeral port.
    FrameServer(std::string host, std::uint16_t port, FrameHandler handler);
    ~FrameServer();

    FrameServer(const FrameServer&) = delete;
    FrameServer& operator=(const FrameServer&) = delete;

    /// Throws StartupError when the port cannot be bound.
    void start();
    void stop();

    [[nodiscard]] bool running() const { return listen_fd_ >= 0; }
    [[nodiscard]] std::uint16_t port() const { return port_; }

private:
    struct Connection {
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop();
    void serve(int fd, Connection& conn);
    void reap(bool all);

    std::string host_;
    std::uint16_t port_;
    FrameHandler handler_;
    int listen_fd_ = -1;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex connections_mutex_;
    std::list<Connection> connections_;
};

} // namespace mammofed
