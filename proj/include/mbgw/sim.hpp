#pragma once

#include "mbgw/config.hpp"
#include "mbgw/net.hpp"
#include "mbgw/wire.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace mbgw::sim {

// Fault injection knobs, adjustable at runtime.
struct FaultPolicy {
    // Exception code returned for any request touching the table.
    std::array<std::optional<std::uint8_t>, 4> exception_code{}; // indexed by config::Table
    std::chrono::milliseconds latency{0};      // added before every response
    std::optional<std::uint64_t> drop_after;   // close each connection after N requests

    std::optional<std::uint8_t>& exception_for(config::Table t) {
        return exception_code[static_cast<std::size_t>(t)];
    }
};

struct RequestRecord {
    std::uint64_t conn = 0;
    std::uint64_t seq = 0;      // per-connection request index, from 1
    std::uint16_t tid = 0;
    std::uint8_t unit = 0;
    std::uint8_t fc = 0;
    std::uint16_t start = 0;
    std::uint16_t count = 0;    // 1 for single writes
    std::uint8_t exception = 0; // 0 when served normally
    std::int64_t rx_mono_us = 0;
    std::int64_t tx_mono_us = 0;
    std::int64_t rx_epoch_us = 0;
    std::int64_t tx_epoch_us = 0;
};

std::string to_json_line(const RequestRecord& r);

struct SlaveOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0; // 0 picks an ephemeral port
    FaultPolicy faults;
    std::ostream* log_stream = nullptr; // NDJSON request log, optional
    bool keep_records = true;           // in-memory request log
};

// Modbus/TCP slave with four full 65536-entry tables, all zero at start.
// Each connection is served by its own thread; table access is serialized so
// a read after an acknowledged write always sees the written value.
class SlaveServer {
public:
    using Options = SlaveOptions;

    explicit SlaveServer(Options opts = {});
    ~SlaveServer();

    SlaveServer(const SlaveServer&) = delete;
    SlaveServer& operator=(const SlaveServer&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return port_; }

    // Direct table access for tests and tools. Bit tables take 0/1.
    void poke(config::Table table, std::uint32_t offset, std::uint16_t value);
    std::uint16_t peek(config::Table table, std::uint32_t offset) const;
    // JSON file: {"coils": {"0": true}, "input_registers": {"7": 1234}, ...}
    void load_memory(const std::string& path);

    void set_faults(const FaultPolicy& faults);

    std::vector<RequestRecord> log_snapshot() const;
    std::uint64_t requests_served() const { return served_; }
    std::uint64_t connections_accepted() const { return accepted_; }

private:
    struct Conn {
        net::TcpStream stream;
        std::thread thread;
        std::atomic<bool> done{false};
    };

    void accept_loop();
    void reap_finished();
    void serve(net::TcpStream& stream, std::uint64_t conn_id);
    // Returns the response and fills record fields describing the request.
    wire::ResponsePdu execute(const wire::RequestPdu& request, RequestRecord& record);
    void append_record(const RequestRecord& record);

    Options opts_;
    std::uint16_t port_ = 0;
    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    std::atomic<std::uint64_t> served_{0};
    std::atomic<std::uint64_t> accepted_{0};

    mutable std::mutex conns_mu_;
    std::vector<std::shared_ptr<Conn>> conns_;

    mutable std::mutex mem_mu_;
    std::vector<std::uint8_t> coils_;
    std::vector<std::uint8_t> discrete_inputs_;
    std::vector<std::uint16_t> input_registers_;
    std::vector<std::uint16_t> holding_registers_;

    mutable std::mutex faults_mu_;
    FaultPolicy faults_;

    mutable std::mutex log_mu_;
    std::vector<RequestRecord> records_;
};

} // namespace mbgw::sim
