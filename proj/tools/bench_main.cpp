#include "mbgw/bench.hpp"
#include "mbgw/errors.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

using namespace mbgw;

int main(int argc, char** argv) {
    CLI::App app{"loopback latency benchmark: slave simulator + gateway + subscriber"};

    std::string scenario_name = "read_input_register";
    int count = 1;
    double rate = 10.0;
    double duration = 100.0;
    std::string out_path;
    app.add_option("--scenario", scenario_name,
                   "read_discrete | read_input_register | write_coil | write_holding")
        ->capture_default_str();
    app.add_option("--count", count, "IOs per poll (read scenarios)")->capture_default_str();
    app.add_option("--rate", rate, "operations per second")->capture_default_str();
    app.add_option("--duration", duration, "seconds to run")->capture_default_str();
    app.add_option("--out", out_path, "report file, stdout when omitted");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    auto scenario = bench::scenario_from_name(scenario_name);
    if (!scenario) {
        std::cerr << "unknown scenario \"" << scenario_name << "\"\n";
        return 1;
    }
    if (count < 1 || rate <= 0 || duration <= 0) {
        std::cerr << "--count, --rate and --duration must be positive\n";
        return 1;
    }

    bench::BenchOptions opts;
    opts.scenario = *scenario;
    opts.io_count = count;
    opts.rate = rate;
    opts.duration_s = duration;

    bench::Report report;
    try {
        report = bench::run(opts);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    const std::string text = bench::report_to_json(report);
    if (out_path.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream out(out_path);
        if (!out) {
            std::cerr << "cannot write " << out_path << "\n";
            return 1;
        }
        out << text << "\n";
    }
    return 0;
}
