#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace mbgw::bench {

enum class Scenario { read_discrete, read_input_register, write_coil, write_holding };

std::optional<Scenario> scenario_from_name(std::string_view name);
const char* to_string(Scenario s);

struct BenchOptions {
    Scenario scenario = Scenario::read_input_register;
    int io_count = 1;        // IOs per poll, read scenarios only
    double rate = 10.0;      // polls or writes per second
    double duration_s = 100.0;
};

struct Metric {
    double mean_us = 0.0;
    double sigma_us = 0.0;
    std::size_t n = 0;
};

// Read scenarios measure, per poll, the gap between the slave sending its
// response and the first topic message reaching the subscriber ("dt0") plus
// the spacing of the remaining messages of that poll ("dtp", io_count > 1).
// Write scenarios measure receipt of the pub line to the write request
// arriving at the slave ("dt0"). All stamps come from one steady clock in a
// single process; slave, gateway and subscriber talk over loopback.
struct Report {
    Scenario scenario = Scenario::read_input_register;
    int io_count = 1;
    double rate = 0.0;
    double duration_s = 0.0;
    std::size_t operations = 0; // measured ops after trimming to the schedule
    std::map<std::string, Metric> metrics;
    std::uint64_t dropped = 0;  // subscriber queue drops
    std::uint64_t overruns = 0; // poll ticks skipped by the gateway
};

std::string report_to_json(const Report& report);

// Throws Error(scenario_underrun) if the measured operation count misses the
// expected rate * duration schedule by more than 1%.
Report run(const BenchOptions& opts);

} // namespace mbgw::bench
