#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mbgw/client.hpp"
#include "mbgw/sim.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

using namespace mbgw;
using namespace std::chrono_literals;
using config::Table;
using std::chrono::steady_clock;

namespace {

template <typename F>
std::optional<Errc> errc_of(F&& f) {
    try {
        std::forward<F>(f)();
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

config::DeviceConfig make_config(std::uint16_t port, double rate, const std::string& mapping_json) {
    const std::string text = R"({"name":"device","address":"127.0.0.1","port":)" +
                             std::to_string(port) + R"(,"unit":1,"rate":)" + std::to_string(rate) +
                             R"(,"mapping":)" + mapping_json + "}";
    return config::parse_config(text, config::Format::json);
}

const char* listing_mapping = R"({
    "coils": {"out_Z": 1},
    "discrete_inputs": {"in_A": 10001},
    "input_registers": {"measure_v": {"address": 30001, "type": "LREAL"}}
})";

template <typename Pred>
bool wait_for(Pred&& pred, std::chrono::milliseconds timeout) {
    const auto deadline = steady_clock::now() + timeout;
    while (steady_clock::now() < deadline) {
        if (pred())
            return true;
        std::this_thread::sleep_for(10ms);
    }
    return pred();
}

} // namespace

TEST_CASE("the example device publishes zeros from fresh memory") {
    sim::SlaveServer server;
    server.start();
    bus::TopicBus bus;
    auto sub = bus.subscribe("/device/*");

    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus);
    CHECK(device.ranges().size() == 3); // coil, discrete input, input register
    device.start(true);
    CHECK(device.connected());

    std::set<std::string> pending{"/device/out_Z", "/device/in_A", "/device/measure_v"};
    bus::TopicMessage msg;
    const auto deadline = steady_clock::now() + 3s;
    while (!pending.empty() && steady_clock::now() < deadline) {
        if (!sub->pop(msg, 100ms))
            continue;
        if (!pending.erase(msg.topic))
            continue;
        if (msg.topic == "/device/out_Z" || msg.topic == "/device/in_A")
            CHECK(std::get<bool>(msg.value) == false);
        else
            CHECK(std::get<double>(msg.value) == 0.0);
        CHECK(msg.ts_us > 0);
    }
    CHECK(pending.empty());

    device.stop();
    server.stop();
    CHECK(device.stats().polls >= 1);
}

TEST_CASE("poked slave memory arrives decoded on the topic") {
    sim::SlaveServer server;
    server.start();
    server.poke(Table::input_register, 0, 0x3FF0); // LREAL 1.0, high word first

    bus::TopicBus bus;
    auto sub = bus.subscribe("/device/measure_v");
    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus);
    device.start(true);

    bus::TopicMessage msg;
    REQUIRE(sub->pop(msg, 2000ms));
    CHECK(std::get<double>(msg.value) == 1.0);
    device.stop();
    server.stop();
}

TEST_CASE("32 contiguous registers travel as one request per poll") {
    sim::SlaveServer server;
    server.start();

    std::string mapping = R"({"input_registers":{)";
    for (int i = 0; i < 32; ++i) {
        if (i)
            mapping += ',';
        mapping += "\"reg" + std::to_string(i) + "\":{\"address\":" + std::to_string(30001 + i) +
                   ",\"type\":\"INT\"}";
        server.poke(Table::input_register, static_cast<std::uint32_t>(i),
                    static_cast<std::uint16_t>(i * 3));
    }
    mapping += "}}";

    bus::TopicBus bus;
    auto sub = bus.subscribe("/device/*", 4096);
    client::DeviceClient device(make_config(server.port(), 20, mapping), bus);
    REQUIRE(device.ranges().size() == 1);
    CHECK(device.ranges()[0].count == 32);

    device.start(true);
    REQUIRE(wait_for([&] { return device.stats().polls >= 5; }, 3000ms));
    device.stop();

    const auto polls = device.stats().polls;
    // the slave logs a request just after answering it, so the last record
    // can trail the response by a moment
    REQUIRE(wait_for([&] { return server.log_snapshot().size() >= polls; }, 1000ms));
    const auto records = server.log_snapshot();
    std::uint64_t reads = 0;
    std::uint16_t last_tid = 0;
    for (const auto& r : records) {
        if (r.fc == 4) {
            ++reads;
            CHECK(r.start == 0);
            CHECK(r.count == 32);
        }
        CHECK(r.tid > last_tid); // strictly increasing across the session
        last_tid = r.tid;
    }
    CHECK(reads == polls);

    // one poll publishes each of the 32 topics once, with the poked values
    std::map<std::string, std::uint64_t> seen;
    bus::TopicMessage msg;
    while (sub->try_pop(msg)) {
        ++seen[msg.topic];
        if (msg.topic == "/device/reg7")
            CHECK(std::get<std::int16_t>(msg.value) == 21);
    }
    CHECK(seen.size() == 32);
    for (const auto& [topic, n] : seen)
        CHECK(n == polls);
    server.stop();
}

TEST_CASE("an exception on one table leaves the other ranges publishing") {
    sim::SlaveOptions opts;
    opts.faults.exception_for(Table::input_register) = 2;
    sim::SlaveServer server(opts);
    server.start();

    bus::TopicBus bus;
    auto sub_in = bus.subscribe("/device/in_A");
    auto sub_v = bus.subscribe("/device/measure_v");
    auto sub_err = bus.subscribe("/device/measure_v/error");

    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus);
    device.start(true);
    REQUIRE(wait_for([&] { return device.stats().polls >= 4; }, 3000ms));
    device.stop();
    server.stop();

    const auto stats = device.stats();
    CHECK(stats.exception_responses >= 4);
    CHECK(stats.transport_errors == 0); // an exception is an answer, not a line fault

    bus::TopicMessage msg;
    std::uint64_t healthy = 0;
    while (sub_in->try_pop(msg))
        ++healthy;
    CHECK(healthy >= 4);

    CHECK_FALSE(sub_v->try_pop(msg)); // no value was ever decoded

    std::uint64_t errors = 0;
    while (sub_err->try_pop(msg)) {
        ++errors;
        CHECK(std::get<std::string>(msg.value) == "exception code 2");
    }
    CHECK(errors >= 4);
}

TEST_CASE("slow cycles skip missed ticks instead of queueing them") {
    sim::SlaveOptions opts;
    opts.faults.latency = 120ms;
    sim::SlaveServer server(opts);
    server.start();

    bus::TopicBus bus;
    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus);
    device.start(true);
    std::this_thread::sleep_for(1500ms);
    device.stop();
    server.stop();

    const auto stats = device.stats();
    // Each cycle is 3 reads at >= 120 ms each against a 50 ms period.
    CHECK(stats.polls >= 2);
    CHECK(stats.polls <= 6);
    CHECK(stats.overruns >= stats.polls * 5); // roughly 7 ticks lost per cycle
    CHECK(stats.skipped_polls == 0);
}

TEST_CASE("writes reach the wire immediately and read back") {
    sim::SlaveServer server;
    server.start();
    bus::TopicBus bus;
    auto sub = bus.subscribe("/device/out_Z");

    const char* mapping = R"({
        "coils": {"out_Z": 1},
        "holding_registers": {
            "setpoint": {"address": 40011, "type": "REAL"},
            "counter": {"address": 40021, "type": "INT"}
        }
    })";
    client::DeviceClient device(make_config(server.port(), 20, mapping), bus);

    CHECK_THROWS_AS(device.write("out_Z", true), Error); // not started yet

    device.start(true);

    device.write("out_Z", true);
    REQUIRE(wait_for([&] { return device.stats().writes >= 1; }, 2000ms));
    CHECK(server.peek(Table::coil, 0) == 1);

    device.write("setpoint", 2.5f);
    device.submit("/device/counter/write", std::int16_t{-2});
    REQUIRE(wait_for([&] { return device.stats().writes >= 3; }, 2000ms));
    CHECK(server.peek(Table::holding_register, 10) == 0x4020); // 2.5f, high word first
    CHECK(server.peek(Table::holding_register, 11) == 0x0000);
    CHECK(server.peek(Table::holding_register, 20) == 0xFFFE);

    bool read_back_true = false;
    bus::TopicMessage msg;
    const auto deadline = steady_clock::now() + 2s;
    while (!read_back_true && steady_clock::now() < deadline)
        if (sub->pop(msg, 100ms) && std::holds_alternative<bool>(msg.value))
            read_back_true = std::get<bool>(msg.value);
    CHECK(read_back_true);

    const auto records = server.log_snapshot();
    bool saw_fc5 = false, saw_fc6 = false, saw_fc16 = false;
    for (const auto& r : records) {
        saw_fc5 |= r.fc == 5 && r.start == 0;
        saw_fc16 |= r.fc == 16 && r.start == 10 && r.count == 2;
        saw_fc6 |= r.fc == 6 && r.start == 20;
    }
    CHECK(saw_fc5);
    CHECK(saw_fc16);
    CHECK(saw_fc6);

    SUBCASE("invalid writes are rejected synchronously") {
        CHECK(errc_of([&] { device.write("nope", true); }) == Errc::unknown_topic);
        CHECK(errc_of([&] { device.write("out_Z", 1.0); }) == Errc::type_mismatch);
        // the read topic is not the write topic
        CHECK(errc_of([&] { device.submit("/device/out_Z", true); }) == Errc::unknown_topic);
    }

    CHECK(device.write_topics() ==
          std::vector<std::string>{"/device/out_Z/write", "/device/setpoint/write",
                                   "/device/counter/write"});
    device.stop();
    server.stop();
}

TEST_CASE("writing a read-only table is refused") {
    sim::SlaveServer server;
    server.start();
    bus::TopicBus bus;
    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus);
    device.start(true);
    CHECK(errc_of([&] { device.write("in_A", true); }) == Errc::write_to_input);
    CHECK(errc_of([&] { device.write("measure_v", 1.0); }) == Errc::write_to_input);
    device.stop();
    server.stop();
}

TEST_CASE("a failed write surfaces on the error topic") {
    bus::TopicBus bus;
    auto sub = bus.subscribe("/device/out_Z/error");

    SUBCASE("no connection") {
        const char* mapping = R"({"coils": {"out_Z": 1}})";
        client::DeviceClient device(make_config(59999, 5, mapping), bus);
        device.start(false); // nothing listens there
        device.write("out_Z", true);
        bus::TopicMessage msg;
        REQUIRE(sub->pop(msg, 2000ms));
        CHECK(std::get<std::string>(msg.value) == "write failed: not connected");
        CHECK(device.stats().write_errors >= 1);
        device.stop();
    }
    SUBCASE("slave rejects the write") {
        sim::SlaveOptions opts;
        opts.faults.exception_for(Table::coil) = 4;
        sim::SlaveServer server(opts);
        server.start();
        const char* mapping = R"({"coils": {"out_Z": 1}})";
        client::DeviceClient device(make_config(server.port(), 5, mapping), bus);
        device.start(true);
        device.write("out_Z", true);
        bus::TopicMessage msg;
        bool saw_write_failure = false;
        const auto deadline = steady_clock::now() + 3s;
        while (!saw_write_failure && steady_clock::now() < deadline)
            if (sub->pop(msg, 100ms))
                saw_write_failure = std::get<std::string>(msg.value) == "write failed: exception code 4";
        CHECK(saw_write_failure);
        device.stop();
        server.stop();
    }
}

TEST_CASE("a dead peer triggers reconnect within the backoff schedule") {
    sim::SlaveOptions opts;
    opts.faults.drop_after = 3;
    sim::SlaveServer server(opts);
    server.start();

    bus::TopicBus bus;
    std::mutex events_mu;
    std::vector<client::ClientEvent::Kind> kinds;

    client::DeviceClientOptions copts;
    copts.backoff_initial = 100ms;
    copts.backoff_cap = 400ms;
    copts.response_timeout = 500ms;
    copts.on_event = [&](const client::ClientEvent& ev) {
        std::lock_guard lk(events_mu);
        kinds.push_back(ev.kind);
    };

    client::DeviceClient device(make_config(server.port(), 20, listing_mapping), bus,
                                std::move(copts));
    device.start(true);
    REQUIRE(wait_for([&] { return device.stats().reconnects >= 2; }, 5000ms));
    device.stop();
    server.stop();

    const auto stats = device.stats();
    CHECK(stats.transport_errors >= 2);
    CHECK(stats.polls >= 2); // polling resumed after each reconnect

    std::lock_guard lk(events_mu);
    CHECK(std::count(kinds.begin(), kinds.end(), client::ClientEvent::Kind::disconnected) >= 2);
    CHECK(std::count(kinds.begin(), kinds.end(), client::ClientEvent::Kind::connected) >= 3);
}

TEST_CASE("start can require the first connection or retry in the background") {
    std::uint16_t port = 0;
    {
        sim::SlaveServer probe; // grab a free port, then release it
        probe.start();
        port = probe.port();
        probe.stop();
    }

    bus::TopicBus bus;
    client::DeviceClientOptions copts;
    copts.connect_timeout = 200ms;
    copts.backoff_initial = 100ms;
    copts.backoff_cap = 200ms;

    SUBCASE("require_connection throws when nobody listens") {
        client::DeviceClient device(make_config(port, 20, listing_mapping), bus, copts);
        CHECK_THROWS_AS(device.start(true), Error);
        // and the client remains usable afterwards
        sim::SlaveOptions opts;
        opts.port = port;
        sim::SlaveServer server(opts);
        server.start();
        device.start(true);
        CHECK(device.connected());
        device.stop();
        server.stop();
    }
    SUBCASE("background start keeps retrying until the device appears") {
        client::DeviceClient device(make_config(port, 20, listing_mapping), bus, copts);
        device.start(false);
        std::this_thread::sleep_for(300ms); // a few failed attempts
        CHECK_FALSE(device.connected());

        sim::SlaveOptions opts;
        opts.port = port;
        sim::SlaveServer server(opts);
        server.start();
        REQUIRE(wait_for([&] { return device.connected(); }, 3000ms));
        REQUIRE(wait_for([&] { return device.stats().polls >= 1; }, 2000ms));
        CHECK(device.stats().skipped_polls >= 1); // the dark period was skipped, not queued
        device.stop();
        server.stop();
    }
}
