#include "mbgw/net.hpp"
#include "mbgw/errors.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace mbgw::net {

int64_t mono_us() {
    using namespace std::chrono;
    return duration_cast<microseconds>(steady_clock::now().time_since_epoch()).count();
}

int64_t epoch_us() {
    using namespace std::chrono;
    return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

namespace {

[[noreturn]] void throw_errno(Errc code, const std::string& what) {
    throw Error(code, what + ": " + std::strerror(errno));
}

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

void set_nonblocking(int fd, bool on) {
    int flags = ::fcntl(fd, F_GETFL, 0);
    if (flags < 0)
        return;
    if (on)
        flags |= O_NONBLOCK;
    else
        flags &= ~O_NONBLOCK;
    ::fcntl(fd, F_SETFL, flags);
}

// poll() one fd for the given events, retrying on EINTR against a deadline.
int poll_fd(int fd, short events, std::chrono::milliseconds timeout) {
    using clock = std::chrono::steady_clock;
    auto deadline = clock::now() + timeout;
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now());
        if (left.count() < 0)
            left = std::chrono::milliseconds(0);
        pollfd pfd{fd, events, 0};
        int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0 && errno == EINTR)
            continue;
        return rc;
    }
}

} // namespace

TcpStream::~TcpStream() { close(); }

TcpStream::TcpStream(TcpStream&& other) noexcept : fd_(other.fd_) { other.fd_ = -1; }

TcpStream& TcpStream::operator=(TcpStream&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        other.fd_ = -1;
    }
    return *this;
}

TcpStream TcpStream::connect(const std::string& host, std::uint16_t port,
                             std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res);
    if (rc != 0)
        throw Error(Errc::transport_error,
                    "resolve " + host + ": " + ::gai_strerror(rc));

    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last_error = std::strerror(errno);
            continue;
        }
        set_nonblocking(fd, true);
        rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
        if (rc < 0 && errno == EINPROGRESS) {
            if (poll_fd(fd, POLLOUT, timeout) > 0) {
                int err = 0;
                socklen_t len = sizeof(err);
                ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
                rc = err == 0 ? 0 : -1;
                errno = err;
            } else {
                rc = -1;
                errno = ETIMEDOUT;
            }
        }
        if (rc == 0) {
            set_nonblocking(fd, false);
            set_nodelay(fd);
            ::freeaddrinfo(res);
            return TcpStream(fd);
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    ::freeaddrinfo(res);
    throw Error(Errc::transport_error, "connect " + host + ":" + service + ": " + last_error);
}

void TcpStream::send_all(std::span<const std::uint8_t> data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR)
                continue;
            throw_errno(Errc::transport_error, "send");
        }
        sent += static_cast<std::size_t>(n);
    }
}

std::size_t TcpStream::recv_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout) {
    int rc = poll_fd(fd_, POLLIN, timeout);
    if (rc < 0)
        throw_errno(Errc::transport_error, "poll");
    if (rc == 0)
        throw Error(Errc::timeout, "recv timed out");
    ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
    if (n < 0) {
        if (errno == EINTR)
            return recv_some(buf, timeout);
        throw_errno(Errc::transport_error, "recv");
    }
    return static_cast<std::size_t>(n);
}

void TcpStream::shutdown() noexcept {
    if (fd_ >= 0)
        ::shutdown(fd_, SHUT_RDWR);
}

void TcpStream::close() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

TcpListener::~TcpListener() { close(); }

TcpListener::TcpListener(TcpListener&& other) noexcept : fd_(other.fd_), port_(other.port_) {
    other.fd_ = -1;
}

TcpListener& TcpListener::operator=(TcpListener&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        port_ = other.port_;
        other.fd_ = -1;
    }
    return *this;
}

TcpListener TcpListener::bind(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    std::string service = std::to_string(port);
    int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
    if (rc != 0)
        throw Error(Errc::transport_error, "resolve " + host + ": " + ::gai_strerror(rc));

    std::string last_error = "no addresses";
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) {
            last_error = std::strerror(errno);
            continue;
        }
        int one = 1;
        ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
            sockaddr_storage local{};
            socklen_t len = sizeof(local);
            std::uint16_t bound = port;
            if (::getsockname(fd, reinterpret_cast<sockaddr*>(&local), &len) == 0) {
                if (local.ss_family == AF_INET)
                    bound = ntohs(reinterpret_cast<sockaddr_in*>(&local)->sin_port);
                else if (local.ss_family == AF_INET6)
                    bound = ntohs(reinterpret_cast<sockaddr_in6*>(&local)->sin6_port);
            }
            ::freeaddrinfo(res);
            TcpListener l;
            l.fd_ = fd;
            l.port_ = bound;
            return l;
        }
        last_error = std::strerror(errno);
        ::close(fd);
    }
    ::freeaddrinfo(res);
    throw Error(Errc::transport_error, "bind " + host + ":" + service + ": " + last_error);
}

std::optional<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
    int rc = poll_fd(fd_, POLLIN, timeout);
    if (rc < 0)
        throw_errno(Errc::transport_error, "poll");
    if (rc == 0)
        return std::nullopt;
    int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED)
            return std::nullopt;
        throw_errno(Errc::transport_error, "accept");
    }
    set_nodelay(fd);
    return TcpStream(fd);
}

void TcpListener::close() noexcept {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

} // namespace mbgw::net
