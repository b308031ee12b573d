#pragma once

#include "mbgw/bus.hpp"
#include "mbgw/config.hpp"
#include "mbgw/net.hpp"
#include "mbgw/value.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace mbgw::ndjson {

// IoValue -> JSON. 64-bit integers are emitted as decimal strings so readers
// that store JSON numbers as doubles keep full precision; non-finite floats
// become the strings "NaN", "Infinity" and "-Infinity".
nlohmann::json value_to_json(const IoValue& value);

// JSON -> IoValue of the mapping's kind, coercing where JSON is ambiguous
// (any JSON number may feed a numeric IO; bools additionally accept 0/1).
// Throws Error(type_mismatch) when the shape does not fit.
IoValue value_from_json(const nlohmann::json& j, const config::IoMapping& mapping);

// One stream line: {"topic":...,"value":...,"ts_us":...}
std::string message_to_line(const bus::TopicMessage& msg);

struct ServerOptions {
    std::string host = "127.0.0.1";
    std::uint16_t port = 7700;
    std::size_t queue_depth = 1024; // per-connection mailbox
};

// Line-oriented TCP front end for the topic bus. Each line is one JSON
// object: {"op":"sub","topic":T} starts a stream of matching messages,
// {"op":"pub","topic":T,"value":V} runs the registered write handler.
// Malformed lines and rejected writes get a single {"error":...} line and
// the connection stays open.
class Server {
public:
    using WriteHandler = std::function<void(const std::string& topic, const nlohmann::json& value)>;
    using PubObserver = std::function<void(const std::string& topic, std::int64_t rx_mono_us)>;

    Server(bus::TopicBus& bus, ServerOptions opts = {});
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    void start();
    void stop();
    std::uint16_t port() const { return port_; }

    // The handler may throw Error; the message becomes the error line.
    void register_write_topic(const std::string& topic, WriteHandler handler);
    std::vector<std::string> write_topics() const;

    // Called with the monotonic stamp taken when a pub line was split off the
    // stream, before any processing. Set before start().
    void set_pub_observer(PubObserver observer) { pub_observer_ = std::move(observer); }

private:
    struct Conn {
        net::TcpStream stream;
        std::shared_ptr<bus::Subscription> sub;
        std::mutex send_mu;
        std::thread reader;
        std::thread writer;
        std::atomic<bool> closing{false};
    };

    void accept_loop();
    void reader_loop(const std::shared_ptr<Conn>& conn);
    void writer_loop(const std::shared_ptr<Conn>& conn);
    void handle_line(const std::shared_ptr<Conn>& conn, const std::string& line,
                     std::int64_t rx_mono_us);
    void send_line(const std::shared_ptr<Conn>& conn, const std::string& line);
    void send_error(const std::shared_ptr<Conn>& conn, const std::string& message);

    bus::TopicBus& bus_;
    ServerOptions opts_;
    std::uint16_t port_ = 0;
    net::TcpListener listener_;
    std::thread accept_thread_;
    std::atomic<bool> stopping_{false};
    PubObserver pub_observer_;

    mutable std::mutex writers_mu_;
    std::map<std::string, WriteHandler> writers_;

    std::mutex conns_mu_;
    std::vector<std::shared_ptr<Conn>> conns_;
};

} // namespace mbgw::ndjson
