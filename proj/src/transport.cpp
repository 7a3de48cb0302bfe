#include "mammofed/transport.hpp"

#include "mammofed/wire.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <memory>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace mammofed {

std::string_view to_string(MissingReason r) {
    switch (r) {
    case MissingReason::timeout: return "timeout";
    case MissingReason::refused: return "refused";
    case MissingReason::transport: return "transport";
    }
    return "transport";
}

std::optional<MissingReason> missing_reason_from_string(std::string_view s) {
    for (auto r : {MissingReason::timeout, MissingReason::refused, MissingReason::transport}) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

namespace {

class Fd {
public:
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() {
        if (fd_ >= 0) ::close(fd_);
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    [[nodiscard]] int get() const { return fd_; }

private:
    int fd_;
};

int remaining_ms(Clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

std::pair<std::string, std::string> split_address(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
        throw TransportError(MissingReason::transport, "bad peer address \"" + address + "\"");
    }
    return {address.substr(0, colon), address.substr(colon + 1)};
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

/// Waits for `events` on fd; false on timeout.
bool wait_for(int fd, short events, Clock::time_point deadline) {
    for (;;) {
        pollfd p{fd, events, 0};
        int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc > 0) return true;
        if (rc == 0) return false;
        if (errno != EINTR) throw TransportError(MissingReason::transport, std::strerror(errno));
    }
}

int connect_to(const std::string& address, Clock::time_point deadline) {
    auto [host, port] = split_address(address);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
        throw TransportError(MissingReason::transport, "cannot resolve " + address + ": " + gai_strerror(rc));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);

    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) throw TransportError(MissingReason::transport, std::strerror(errno));
    set_nonblocking(fd);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
        if (errno != EINPROGRESS) {
            int err = errno;
            ::close(fd);
            throw TransportError(err == ECONNREFUSED ? MissingReason::refused : MissingReason::transport,
                                 "connect " + address + ": " + std::strerror(err));
        }
        if (!wait_for(fd, POLLOUT, deadline)) {
            ::close(fd);
            throw TransportError(MissingReason::timeout, "connect " + address + ": deadline passed");
        }
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            ::close(fd);
            throw TransportError(err == ECONNREFUSED ? MissingReason::refused : MissingReason::transport,
                                 "connect " + address + ": " + std::strerror(err));
        }
    }
    return fd;
}

void send_all(int fd, std::string_view data, Clock::time_point deadline) {
    while (!data.empty()) {
        ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n > 0) {
            data.remove_prefix(static_cast<std::size_t>(n));
            continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR)) {
            if (!wait_for(fd, POLLOUT, deadline)) throw TransportError(MissingReason::timeout, "send: deadline passed");
            continue;
        }
        throw TransportError(MissingReason::transport, std::string("send: ") + std::strerror(errno));
    }
}

std::string receive_frame(int fd, Clock::time_point deadline) {
    std::string buffer;
    char chunk[16384];
    for (;;) {
        try {
            if (auto body = take_frame(buffer)) return *body;
        } catch (const ParseError& e) {
            throw TransportError(MissingReason::transport, e.what());
        }
        ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
        if (n > 0) {
            buffer.append(chunk, static_cast<std::size_t>(n));
        } else if (n == 0) {
            throw TransportError(MissingReason::transport, "connection closed before a response");
        } else if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) {
            if (!wait_for(fd, POLLIN, deadline)) throw TransportError(MissingReason::timeout, "no response before deadline");
        } else {
            throw TransportError(MissingReason::transport, std::string("recv: ") + std::strerror(errno));
        }
    }
}

} // namespace

std::string TcpTransport::exchange(const PeerInfo& peer, const std::string& body, Clock::time_point deadline) {
    Fd fd(connect_to(peer.address, deadline));
    send_all(fd.get(), frame(body), deadline);
    return receive_frame(fd.get(), deadline);
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

FrameServer::FrameServer(std::string host, std::uint16_t port, FrameHandler handler)
    : host_(std::move(host)), port_(port), handler_(std::move(handler)) {}

FrameServer::~FrameServer() { stop(); }

void FrameServer::start() {
    if (running()) return;
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw StartupError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port_);
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw StartupError("bad listen address " + host_);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd, 64) != 0) {
        int err = errno;
        ::close(fd);
        throw StartupError("cannot listen on " + host_ + ":" + std::to_string(port_) + ": " + std::strerror(err));
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    set_nonblocking(fd);
    listen_fd_ = fd;
    stopping_ = false;
    acceptor_ = std::thread([this] { accept_loop(); });
}

void FrameServer::stop() {
    if (!running()) return;
    stopping_ = true;
    if (acceptor_.joinable()) acceptor_.join();
    reap(true);
    ::close(listen_fd_);
    listen_fd_ = -1;
}

void FrameServer::accept_loop() {
    while (!stopping_) {
        pollfd p{listen_fd_, POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0) {
            reap(false);
            continue;
        }
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        set_nonblocking(fd);
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        std::lock_guard lock(connections_mutex_);
        Connection& conn = connections_.emplace_back();
        conn.thread = std::thread([this, fd, &conn] { serve(fd, conn); });
    }
}

void FrameServer::serve(int raw_fd, Connection& conn) {
    Fd fd(raw_fd);
    std::string buffer;
    char chunk[16384];
    while (!stopping_) {
        std::optional<std::string> body;
        try {
            body = take_frame(buffer);
        } catch (const ParseError&) {
            break;
        }
        if (body) {
            std::optional<std::string> reply = handler_(*body);
            if (!reply) continue;
            try {
                send_all(fd.get(), frame(*reply), Clock::now() + std::chrono::seconds(10));
            } catch (const TransportError&) {
                break;
            }
            continue;
        }
        pollfd p{fd.get(), POLLIN, 0};
        if (::poll(&p, 1, 50) <= 0) continue;
        ssize_t n = ::recv(fd.get(), chunk, sizeof chunk, 0);
        if (n > 0) {
            buffer.append(chunk, static_cast<std::size_t>(n));
        } else if (n == 0 || (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
            break;
        }
    }
    conn.done = true;
}

void FrameServer::reap(bool all) {
    std::list<Connection> finished;
    {
        std::lock_guard lock(connections_mutex_);
        for (auto it = connections_.begin(); it != connections_.end();) {
            auto next = std::next(it);
            if (all || it->done) finished.splice(finished.end(), connections_, it);
            it = next;
        }
    }
    for (auto& c : finished) {
        if (c.thread.joinable()) c.thread.join();
    }
}

} // namespace mammofed
