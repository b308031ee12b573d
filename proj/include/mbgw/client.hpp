#pragma once

#include "mbgw/bus.hpp"
#include "mbgw/config.hpp"
#include "mbgw/net.hpp"
#include "mbgw/planner.hpp"
#include "mbgw/wire.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

namespace mbgw::client {

// One Modbus/TCP session: single in-flight transaction, ids strictly
// increasing (mod 65536), responses matched by transaction id. A mismatched
// id or a malformed frame throws transport_error; the owner reconnects.
class ModbusTcpClient {
public:
    ModbusTcpClient(std::string host, std::uint16_t port, std::uint8_t unit,
                    std::chrono::milliseconds response_timeout = std::chrono::milliseconds(1000),
                    std::chrono::milliseconds connect_timeout = std::chrono::milliseconds(1000));

    void connect();
    void close() noexcept;
    bool connected() const { return stream_.valid(); }

    wire::ResponsePdu transact(const wire::RequestPdu& request);

    std::uint16_t last_tid() const { return tid_; }

private:
    std::string host_;
    std::uint16_t port_;
    std::uint8_t unit_;
    std::chrono::milliseconds response_timeout_;
    std::chrono::milliseconds connect_timeout_;
    net::TcpStream stream_;
    wire::FrameReassembler reassembler_;
    std::uint16_t tid_ = 0;
};

struct DeviceStats {
    std::uint64_t polls = 0;              // completed poll cycles
    std::uint64_t overruns = 0;           // ticks skipped because a poll ran long
    std::uint64_t skipped_polls = 0;      // ticks skipped while disconnected
    std::uint64_t reconnects = 0;         // successful reconnects after a loss
    std::uint64_t transport_errors = 0;
    std::uint64_t exception_responses = 0;
    std::uint64_t writes = 0;             // acknowledged writes
    std::uint64_t write_errors = 0;
    std::int64_t last_poll_us = 0;        // duration of the last completed cycle
};

struct ClientEvent {
    enum class Kind { connected, connect_failed, disconnected, range_error, write_error };
    Kind kind;
    std::string detail;
    std::int64_t ts_us = 0;
};

struct DeviceClientOptions {
    plan::PlannerPolicy planner;
    std::chrono::milliseconds response_timeout{1000};
    std::chrono::milliseconds connect_timeout{1000};
    std::chrono::milliseconds backoff_initial{500};
    std::chrono::milliseconds backoff_cap{8000};
    std::function<void(const ClientEvent&)> on_event; // optional
};

// Polls one device on a fixed schedule and publishes decoded values.
//
// A dedicated engine thread owns the connection. Reads follow the coalesced
// range plan; queued writes are serviced as soon as the engine wakes and
// before each range read. If a cycle overruns its period the missed ticks are
// skipped, never queued. A transport fault tears the session down and
// reconnect attempts back off (0.5 s doubling to 8 s by default); an exception
// response only produces error events for the ranges involved.
class DeviceClient {
public:
    DeviceClient(config::DeviceConfig cfg, bus::TopicBus& bus, DeviceClientOptions opts = {});
    ~DeviceClient();

    DeviceClient(const DeviceClient&) = delete;
    DeviceClient& operator=(const DeviceClient&) = delete;

    // With require_connection the initial connect happens here and failure
    // throws; otherwise the engine keeps retrying in the background.
    void start(bool require_connection = true);
    void stop();

    // Validates and queues a write for the engine thread. Throws
    // unknown_topic, write_to_input or type_mismatch; transport problems are
    // reported asynchronously on the IO's error topic.
    void write(const std::string& io_name, const IoValue& value);
    // Same, addressed by the IO's write topic.
    void submit(const std::string& write_topic, const IoValue& value);

    const config::DeviceConfig& config() const { return cfg_; }
    const std::vector<plan::ReadRange>& ranges() const { return ranges_; }
    std::vector<std::string> write_topics() const;
    bool connected() const;
    DeviceStats stats() const;

private:
    struct PendingWrite {
        std::size_t mapping_index = 0;
        wire::RequestPdu pdu;
    };

    void engine();
    void ensure_connected();
    void drop_connection(const std::string& why);
    void run_pending_writes();
    void execute_write(const PendingWrite& w);
    void poll_cycle();
    bool fetch_range(const plan::ReadRange& range);
    void publish_range_error(const plan::ReadRange& range, const std::string& what);
    void emit(ClientEvent::Kind kind, const std::string& detail);

    config::DeviceConfig cfg_;
    bus::TopicBus& bus_;
    DeviceClientOptions opts_;
    std::vector<plan::ReadRange> ranges_;
    std::unordered_map<std::string, std::size_t> by_io_name_;
    std::unordered_map<std::string, std::size_t> by_write_topic_;

    std::optional<ModbusTcpClient> session_;
    std::chrono::steady_clock::time_point next_attempt_{};
    std::chrono::milliseconds backoff_{500};
    bool connected_once_ = false;

    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<PendingWrite> write_queue_;
    bool stopping_ = false;
    bool running_ = false;
    std::atomic<bool> link_up_{false};
    std::thread thread_;

    mutable std::mutex stats_mu_;
    DeviceStats stats_;
};

} // namespace mbgw::client
