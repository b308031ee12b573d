#include "mbgw/client.hpp"
#include "mbgw/config.hpp"
#include "mbgw/ndjson.hpp"
#include "mbgw/wiring.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <thread>

using namespace mbgw;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// "host:port" with a default host when only a port is given.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& text,
                                                     const std::string& default_host) {
    auto colon = text.rfind(':');
    std::string host = default_host;
    std::string port_str = text;
    if (colon != std::string::npos) {
        host = text.substr(0, colon);
        port_str = text.substr(colon + 1);
    }
    int port = 0;
    try {
        std::size_t pos = 0;
        port = std::stoi(port_str, &pos);
        if (pos != port_str.size())
            throw std::invalid_argument(port_str);
    } catch (const std::exception&) {
        throw CLI::ValidationError("endpoint", "bad port in \"" + text + "\"");
    }
    if (port < 1 || port > 65535)
        throw CLI::ValidationError("endpoint", "port out of range in \"" + text + "\"");
    return {host.empty() ? default_host : host, static_cast<std::uint16_t>(port)};
}

void log_event(const char* event, const std::string& detail) {
    json j{{"ts_us", net::epoch_us()}, {"event", event}, {"detail", detail}};
    std::cout << j.dump() << std::endl;
}

int cmd_run(const std::string& config_path, const std::string& listen, int max_gap, int timeout_ms,
            const std::vector<std::string>& remaps) {
    config::DeviceConfig cfg;
    try {
        cfg = config::load_config_file(config_path);
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    for (const std::string& r : remaps) {
        auto eq = r.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == r.size()) {
            std::cerr << "bad remap \"" << r << "\", expected OLD=NEW\n";
            return 1;
        }
        const std::string from = r.substr(0, eq);
        const std::string to = r.substr(eq + 1);
        if (!bus::topic_valid(to)) {
            std::cerr << "bad remap target \"" << to << "\"\n";
            return 1;
        }
        bool hit = false;
        for (auto& m : cfg.mappings) {
            for (std::string* t : {&m.read_topic, &m.write_topic, &m.error_topic}) {
                if (*t == from) {
                    *t = to;
                    hit = true;
                }
            }
        }
        if (!hit) {
            std::cerr << "remap \"" << from << "\" matches no topic\n";
            return 1;
        }
    }

    client::DeviceClientOptions copts;
    if (max_gap >= 0) {
        copts.planner.max_gap_registers = static_cast<std::uint16_t>(max_gap);
        copts.planner.max_gap_bits = static_cast<std::uint16_t>(std::min(max_gap * 4, 65535));
    }
    copts.planner.max_read_count = cfg.max_read_count;
    if (timeout_ms > 0)
        copts.response_timeout = std::chrono::milliseconds(timeout_ms);
    copts.on_event = [](const client::ClientEvent& ev) {
        const char* name = "event";
        switch (ev.kind) {
        case client::ClientEvent::Kind::connected: name = "connected"; break;
        case client::ClientEvent::Kind::connect_failed: name = "connect_failed"; break;
        case client::ClientEvent::Kind::disconnected: name = "disconnected"; break;
        case client::ClientEvent::Kind::range_error: name = "range_error"; break;
        case client::ClientEvent::Kind::write_error: name = "write_error"; break;
        }
        log_event(name, ev.detail);
    };

    bus::TopicBus bus;
    std::unique_ptr<client::DeviceClient> device;
    try {
        device = std::make_unique<client::DeviceClient>(cfg, bus, std::move(copts));
    } catch (const Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    }

    ndjson::ServerOptions sopts;
    try {
        auto [host, port] = parse_endpoint(listen, "127.0.0.1");
        sopts.host = host;
        sopts.port = port;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    ndjson::Server server(bus, sopts);
    gw::register_device_writes(server, *device, bus);
    try {
        server.start();
    } catch (const Error& e) {
        std::cerr << "listen failed: " << e.what() << "\n";
        return 2;
    }
    device->start(false); // keep retrying if the device is down

    log_event("listening", sopts.host + ":" + std::to_string(server.port()));
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop)
        std::this_thread::sleep_for(100ms);

    device->stop();
    server.stop();
    log_event("stopped", "");
    return 0;
}

int cmd_echo(const std::string& connect, const std::string& topic, std::uint64_t count) {
    net::TcpStream stream;
    try {
        auto [host, port] = parse_endpoint(connect, "127.0.0.1");
        stream = net::TcpStream::connect(host, port, 2000ms);
        json sub{{"op", "sub"}, {"topic", topic}};
        std::string line = sub.dump() + "\n";
        stream.send_all(std::span(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::array<std::uint8_t, 4096> buf;
    std::string acc;
    std::uint64_t seen = 0;
    while (!g_stop) {
        std::size_t n = 0;
        try {
            n = stream.recv_some(buf, 200ms);
        } catch (const Error& e) {
            if (e.code() == Errc::timeout)
                continue;
            std::cerr << e.what() << "\n";
            return 2;
        }
        if (n == 0)
            return 0; // server went away
        acc.append(reinterpret_cast<const char*>(buf.data()), n);
        std::size_t start = 0;
        for (;;) {
            auto nl = acc.find('\n', start);
            if (nl == std::string::npos)
                break;
            std::cout << acc.substr(start, nl - start) << "\n";
            std::cout.flush();
            start = nl + 1;
            if (count > 0 && ++seen >= count)
                return 0;
        }
        acc.erase(0, start);
    }
    return 0;
}

int cmd_pub(const std::string& connect, const std::string& topic, const std::string& value_text) {
    json value = json::parse(value_text, nullptr, false);
    if (value.is_discarded()) {
        std::cerr << "--value is not valid JSON: " << value_text << "\n";
        return 1;
    }
    try {
        auto [host, port] = parse_endpoint(connect, "127.0.0.1");
        auto stream = net::TcpStream::connect(host, port, 2000ms);
        json pub{{"op", "pub"}, {"topic", topic}, {"value", value}};
        std::string line = pub.dump() + "\n";
        stream.send_all(std::span(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));

        // Only failures produce a reply; give one a moment to arrive.
        std::array<std::uint8_t, 1024> buf;
        std::string acc;
        try {
            for (;;) {
                std::size_t n = stream.recv_some(buf, 300ms);
                if (n == 0)
                    break;
                acc.append(reinterpret_cast<const char*>(buf.data()), n);
                if (acc.find('\n') != std::string::npos)
                    break;
            }
        } catch (const Error& e) {
            if (e.code() != Errc::timeout)
                throw;
        }
        if (auto nl = acc.find('\n'); nl != std::string::npos) {
            std::cerr << acc.substr(0, nl) << "\n";
            return 1;
        }
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const CLI::ValidationError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modbus/TCP IO gateway"};
    app.require_subcommand(1);

    std::string config_path;
    std::string listen = "127.0.0.1:7700";
    int max_gap = -1;
    int timeout_ms = 0;
    std::vector<std::string> remaps;
    auto* run = app.add_subcommand("run", "poll a device and serve its topics");
    run->add_option("--config", config_path, "device config (YAML or JSON)")->required();
    run->add_option("--listen", listen, "NDJSON listen endpoint")->capture_default_str();
    run->add_option("--max-gap", max_gap, "max unmapped registers a read may span");
    run->add_option("--timeout", timeout_ms, "response timeout in ms");
    run->add_option("--remap", remaps, "rename a topic, OLD=NEW")->take_all();

    std::string connect = "127.0.0.1:7700";
    std::string topic;
    std::uint64_t count = 0;
    auto* echo = app.add_subcommand("echo", "print messages from a topic");
    echo->add_option("--connect", connect, "gateway NDJSON endpoint")->capture_default_str();
    echo->add_option("--topic", topic, "topic or prefix pattern")->required();
    echo->add_option("--count", count, "stop after this many messages");

    std::string pub_connect = "127.0.0.1:7700";
    std::string pub_topic;
    std::string pub_value;
    auto* pub = app.add_subcommand("pub", "publish one value to a write topic");
    pub->add_option("--connect", pub_connect, "gateway NDJSON endpoint")->capture_default_str();
    pub->add_option("--topic", pub_topic, "write topic")->required();
    pub->add_option("--value", pub_value, "JSON value")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (run->parsed())
        return cmd_run(config_path, listen, max_gap, timeout_ms, remaps);
    if (echo->parsed())
        return cmd_echo(connect, topic, count);
    return cmd_pub(pub_connect, pub_topic, pub_value);
}
