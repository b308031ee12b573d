#include "mbgw/bench.hpp"
#include "mbgw/client.hpp"
#include "mbgw/errors.hpp"
#include "mbgw/ndjson.hpp"
#include "mbgw/sim.hpp"
#include "mbgw/wiring.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace mbgw::bench {

using namespace std::chrono;
using namespace std::chrono_literals;
using nlohmann::json;

std::optional<Scenario> scenario_from_name(std::string_view name) {
    if (name == "read_discrete") return Scenario::read_discrete;
    if (name == "read_input_register") return Scenario::read_input_register;
    if (name == "write_coil") return Scenario::write_coil;
    if (name == "write_holding") return Scenario::write_holding;
    return std::nullopt;
}

const char* to_string(Scenario s) {
    switch (s) {
    case Scenario::read_discrete: return "read_discrete";
    case Scenario::read_input_register: return "read_input_register";
    case Scenario::write_coil: return "write_coil";
    case Scenario::write_holding: return "write_holding";
    }
    return "?";
}

namespace {

Metric summarize(const std::vector<double>& samples) {
    Metric m;
    m.n = samples.size();
    if (samples.empty())
        return m;
    double sum = 0;
    for (double s : samples)
        sum += s;
    m.mean_us = sum / static_cast<double>(samples.size());
    if (samples.size() > 1) {
        double acc = 0;
        for (double s : samples)
            acc += (s - m.mean_us) * (s - m.mean_us);
        m.sigma_us = std::sqrt(acc / static_cast<double>(samples.size() - 1));
    }
    return m;
}

void check_schedule(std::size_t measured, std::size_t expected) {
    const double slack = std::max(1.0, 0.01 * static_cast<double>(expected));
    const double diff = std::abs(static_cast<double>(measured) - static_cast<double>(expected));
    if (diff > slack)
        throw Error(Errc::scenario_underrun, "measured " + std::to_string(measured) +
                                                 " operations, expected " +
                                                 std::to_string(expected));
}

config::IoMapping make_mapping(const std::string& device, const std::string& io,
                               config::Table table, std::uint16_t offset,
                               std::optional<iec::IecType> type) {
    config::IoMapping m;
    m.io_name = io;
    m.table = table;
    m.offset = offset;
    m.type = type;
    m.width = type ? type->register_width() : 1;
    m.read_topic = "/" + device + "/" + io;
    if (config::is_output_table(table))
        m.write_topic = m.read_topic + "/write";
    m.error_topic = m.read_topic + "/error";
    return m;
}

config::DeviceConfig bench_config(const BenchOptions& opts, std::uint16_t port) {
    config::DeviceConfig cfg;
    cfg.name = "bench";
    cfg.address = "127.0.0.1";
    cfg.port = port;
    cfg.unit = 1;
    cfg.rate = opts.rate;
    switch (opts.scenario) {
    case Scenario::read_discrete:
        for (int i = 0; i < opts.io_count; ++i)
            cfg.mappings.push_back(make_mapping(cfg.name, "in" + std::to_string(i),
                                                config::Table::discrete_input,
                                                static_cast<std::uint16_t>(i), std::nullopt));
        break;
    case Scenario::read_input_register:
        for (int i = 0; i < opts.io_count; ++i)
            cfg.mappings.push_back(make_mapping(cfg.name, "reg" + std::to_string(i),
                                                config::Table::input_register,
                                                static_cast<std::uint16_t>(i),
                                                iec::IecType{iec::Kind::Int, 0}));
        break;
    case Scenario::write_coil:
        cfg.mappings.push_back(
            make_mapping(cfg.name, "out", config::Table::coil, 0, std::nullopt));
        break;
    case Scenario::write_holding:
        cfg.mappings.push_back(make_mapping(cfg.name, "hold", config::Table::holding_register, 0,
                                            iec::IecType{iec::Kind::Int, 0}));
        break;
    }
    return cfg;
}

Report run_read(const BenchOptions& opts) {
    const std::size_t expected =
        static_cast<std::size_t>(std::llround(opts.rate * opts.duration_s));

    sim::SlaveServer slave;
    slave.start();

    config::DeviceConfig cfg = bench_config(opts, slave.port());
    bus::TopicBus bus;

    const std::size_t depth = (expected + 16) * static_cast<std::size_t>(opts.io_count) + 64;
    std::shared_ptr<bus::Subscription> sub;
    for (const auto& m : cfg.mappings) {
        if (!sub)
            sub = bus.subscribe(m.read_topic, depth);
        else
            bus.add_pattern(*sub, m.read_topic);
    }

    struct Arrival {
        std::string topic;
        std::int64_t mono_us;
    };
    std::vector<Arrival> arrivals;
    arrivals.reserve(depth);
    std::atomic<bool> done{false};
    std::thread consumer([&] {
        bus::TopicMessage msg;
        while (!done) {
            if (sub->pop(msg, 50ms))
                arrivals.push_back({std::move(msg.topic), net::mono_us()});
        }
        while (sub->try_pop(msg))
            arrivals.push_back({std::move(msg.topic), net::mono_us()});
    });

    client::DeviceClient device(cfg, bus);
    device.start(true);
    std::this_thread::sleep_for(duration<double>(opts.duration_s));
    device.stop();
    done = true;
    consumer.join();
    const auto stats = device.stats();
    const auto records = slave.log_snapshot();
    slave.stop();

    const std::uint8_t want_fc = opts.scenario == Scenario::read_discrete ? 2 : 4;
    std::vector<std::int64_t> response_tx;
    for (const auto& r : records)
        if (r.fc == want_fc && r.exception == 0 &&
            r.count == static_cast<std::uint16_t>(opts.io_count))
            response_tx.push_back(r.tx_mono_us);

    std::map<std::string, std::vector<std::int64_t>> per_topic;
    for (const auto& a : arrivals)
        per_topic[a.topic].push_back(a.mono_us);

    std::size_t cycles = response_tx.size();
    for (const auto& [_, stamps] : per_topic)
        cycles = std::min(cycles, stamps.size());
    if (per_topic.size() != static_cast<std::size_t>(opts.io_count))
        cycles = 0;
    check_schedule(cycles, expected);
    cycles = std::min(cycles, expected);

    std::vector<double> dt0;
    std::vector<double> dtp;
    dt0.reserve(cycles);
    for (std::size_t k = 0; k < cycles; ++k) {
        std::vector<std::int64_t> stamps;
        stamps.reserve(per_topic.size());
        for (const auto& [_, s] : per_topic)
            stamps.push_back(s[k]);
        std::sort(stamps.begin(), stamps.end());
        dt0.push_back(static_cast<double>(stamps.front() - response_tx[k]));
        for (std::size_t i = 1; i < stamps.size(); ++i)
            dtp.push_back(static_cast<double>(stamps[i] - stamps[i - 1]));
    }

    Report rep;
    rep.scenario = opts.scenario;
    rep.io_count = opts.io_count;
    rep.rate = opts.rate;
    rep.duration_s = opts.duration_s;
    rep.operations = cycles;
    rep.metrics["dt0"] = summarize(dt0);
    if (opts.io_count > 1)
        rep.metrics["dtp"] = summarize(dtp);
    rep.dropped = sub->dropped();
    rep.overruns = stats.overruns;
    return rep;
}

Report run_write(const BenchOptions& opts) {
    const std::size_t expected =
        static_cast<std::size_t>(std::llround(opts.rate * opts.duration_s));

    sim::SlaveServer slave;
    slave.start();

    config::DeviceConfig cfg = bench_config(opts, slave.port());
    bus::TopicBus bus;
    client::DeviceClient device(cfg, bus);

    std::mutex stamps_mu;
    std::vector<std::int64_t> pub_rx;
    pub_rx.reserve(expected + 8);

    ndjson::Server server(bus, {"127.0.0.1", 0});
    server.set_pub_observer([&](const std::string&, std::int64_t rx) {
        std::lock_guard lk(stamps_mu);
        pub_rx.push_back(rx);
    });
    gw::register_device_writes(server, device, bus);
    device.start(true);
    server.start();

    const std::string topic = cfg.mappings[0].write_topic;
    json line_json{{"op", "pub"}, {"topic", topic}, {"value", json()}};
    line_json["value"] = opts.scenario == Scenario::write_coil ? json(false) : json(0);
    const std::string line = line_json.dump() + "\n";
    const auto payload =
        std::span(reinterpret_cast<const std::uint8_t*>(line.data()), line.size());

    auto stream = net::TcpStream::connect("127.0.0.1", server.port(), 1000ms);
    const auto period = duration_cast<steady_clock::duration>(duration<double>(1.0 / opts.rate));
    const auto t0 = steady_clock::now();
    for (std::size_t i = 0; i < expected; ++i) {
        stream.send_all(payload);
        std::this_thread::sleep_until(t0 + (i + 1) * period);
    }
    std::this_thread::sleep_for(300ms); // let the tail of the queue drain

    const auto stats = device.stats();
    server.stop();
    device.stop();
    const auto records = slave.log_snapshot();
    slave.stop();

    const std::uint8_t want_fc = opts.scenario == Scenario::write_coil ? 5 : 6;
    std::vector<std::int64_t> request_rx;
    for (const auto& r : records)
        if (r.fc == want_fc && r.exception == 0)
            request_rx.push_back(r.rx_mono_us);

    std::vector<std::int64_t> stamps;
    {
        std::lock_guard lk(stamps_mu);
        stamps = pub_rx;
    }
    std::size_t n = std::min(stamps.size(), request_rx.size());
    check_schedule(n, expected);
    n = std::min(n, expected);

    std::vector<double> dt0;
    dt0.reserve(n);
    for (std::size_t k = 0; k < n; ++k)
        dt0.push_back(static_cast<double>(request_rx[k] - stamps[k]));

    Report rep;
    rep.scenario = opts.scenario;
    rep.io_count = 1;
    rep.rate = opts.rate;
    rep.duration_s = opts.duration_s;
    rep.operations = n;
    rep.metrics["dt0"] = summarize(dt0);
    rep.overruns = stats.overruns;
    return rep;
}

} // namespace

Report run(const BenchOptions& opts) {
    if (opts.io_count < 1 || opts.rate <= 0 || opts.duration_s <= 0)
        throw Error(Errc::scenario_underrun, "io_count, rate and duration must be positive");
    switch (opts.scenario) {
    case Scenario::read_discrete:
    case Scenario::read_input_register: return run_read(opts);
    case Scenario::write_coil:
    case Scenario::write_holding: return run_write(opts);
    }
    throw Error(Errc::scenario_underrun, "bad scenario");
}

std::string report_to_json(const Report& report) {
    json metrics = json::object();
    for (const auto& [name, m] : report.metrics)
        metrics[name] = {{"mean_us", m.mean_us}, {"sigma_us", m.sigma_us}, {"n", m.n}};
    json j{{"scenario", to_string(report.scenario)},
           {"io_count", report.io_count},
           {"rate", report.rate},
           {"duration_s", report.duration_s},
           {"operations", report.operations},
           {"metrics", metrics},
           {"dropped", report.dropped},
           {"overruns", report.overruns}};
    return j.dump(2);
}

} // namespace mbgw::bench
