#include "mbgw/sim.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

using namespace mbgw;
using namespace std::chrono_literals;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::optional<config::Table> table_from_name(const std::string& name) {
    if (name == "coils" || name == "coil")
        return config::Table::coil;
    if (name == "discrete_inputs" || name == "discrete_input")
        return config::Table::discrete_input;
    if (name == "input_registers" || name == "input_register")
        return config::Table::input_register;
    if (name == "holding_registers" || name == "holding_register")
        return config::Table::holding_register;
    return std::nullopt;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modbus/TCP slave simulator"};

    std::string listen = "0.0.0.0:1502";
    int latency_ms = 0;
    std::vector<std::string> excepts;
    int drop_after = 0;
    std::string memory_file;
    std::string log_file;
    app.add_option("--listen", listen, "listen endpoint")->capture_default_str();
    app.add_option("--latency-ms", latency_ms, "fixed latency added to every response");
    app.add_option("--except", excepts, "return an exception for a table, TABLE:CODE")->take_all();
    app.add_option("--drop-after", drop_after, "close each connection after N requests");
    app.add_option("--memory", memory_file, "JSON file preloading the tables");
    app.add_option("--log", log_file, "write the request log here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    sim::SlaveServer::Options opts;
    auto colon = listen.rfind(':');
    if (colon == std::string::npos) {
        std::cerr << "--listen must be HOST:PORT\n";
        return 1;
    }
    opts.host = listen.substr(0, colon);
    try {
        std::size_t pos = 0;
        int port = std::stoi(listen.substr(colon + 1), &pos);
        if (pos != listen.size() - colon - 1 || port < 0 || port > 65535)
            throw std::invalid_argument(listen);
        opts.port = static_cast<std::uint16_t>(port);
    } catch (const std::exception&) {
        std::cerr << "bad port in \"" << listen << "\"\n";
        return 1;
    }

    if (latency_ms < 0) {
        std::cerr << "--latency-ms must be >= 0\n";
        return 1;
    }
    opts.faults.latency = std::chrono::milliseconds(latency_ms);
    if (drop_after > 0)
        opts.faults.drop_after = static_cast<std::uint64_t>(drop_after);
    for (const std::string& e : excepts) {
        auto sep = e.find(':');
        auto table = sep == std::string::npos ? std::nullopt : table_from_name(e.substr(0, sep));
        int code = 0;
        if (table) {
            try {
                code = std::stoi(e.substr(sep + 1));
            } catch (const std::exception&) {
                code = 0;
            }
        }
        if (!table || code < 1 || code > 255) {
            std::cerr << "bad --except \"" << e << "\", expected TABLE:CODE\n";
            return 1;
        }
        opts.faults.exception_for(*table) = static_cast<std::uint8_t>(code);
    }

    std::ofstream log_out;
    if (!log_file.empty()) {
        log_out.open(log_file);
        if (!log_out) {
            std::cerr << "cannot open " << log_file << "\n";
            return 1;
        }
    }
    opts.log_stream = log_file.empty() ? static_cast<std::ostream*>(&std::cout) : &log_out;
    opts.keep_records = false;

    sim::SlaveServer server(std::move(opts));
    if (!memory_file.empty()) {
        try {
            server.load_memory(memory_file);
        } catch (const Error& e) {
            std::cerr << e.what() << "\n";
            return 1;
        }
    }
    try {
        server.start();
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    std::cerr << "listening on " << server.port() << "\n";

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop)
        std::this_thread::sleep_for(100ms);
    server.stop();
    return 0;
}
