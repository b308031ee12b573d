#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace mbgw::net {

int64_t mono_us();  // steady clock, for latency math
int64_t epoch_us(); // wall clock, for message timestamps

// Blocking TCP stream with poll-based timeouts. Move-only, closes on destruction.
class TcpStream {
public:
    TcpStream() = default;
    explicit TcpStream(int fd) : fd_(fd) {}
    ~TcpStream();
    TcpStream(TcpStream&& other) noexcept;
    TcpStream& operator=(TcpStream&& other) noexcept;
    TcpStream(const TcpStream&) = delete;
    TcpStream& operator=(const TcpStream&) = delete;

    static TcpStream connect(const std::string& host, std::uint16_t port,
                             std::chrono::milliseconds timeout);

    void send_all(std::span<const std::uint8_t> data);
    // Returns 0 on orderly peer shutdown; throws Error(timeout) when nothing
    // arrives within the deadline.
    std::size_t recv_some(std::span<std::uint8_t> buf, std::chrono::milliseconds timeout);

    // Safe to call from another thread to unblock a reader.
    void shutdown() noexcept;
    void close() noexcept;
    bool valid() const { return fd_ >= 0; }

private:
    int fd_ = -1;
};

class TcpListener {
public:
    TcpListener() = default;
    ~TcpListener();
    TcpListener(TcpListener&& other) noexcept;
    TcpListener& operator=(TcpListener&& other) noexcept;
    TcpListener(const TcpListener&) = delete;
    TcpListener& operator=(const TcpListener&) = delete;

    // port 0 binds an ephemeral port; see port() for the result.
    static TcpListener bind(const std::string& host, std::uint16_t port);

    std::optional<TcpStream> accept(std::chrono::milliseconds timeout);
    std::uint16_t port() const { return port_; }
    void close() noexcept;
    bool valid() const { return fd_ >= 0; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

} // namespace mbgw::net
