#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mbgw/errors.hpp"
#include "mbgw/iec.hpp"

namespace mbgw::config {

enum class Table { coil, discrete_input, input_register, holding_register };

const char* to_string(Table t);
bool is_bit_table(Table t);
bool is_output_table(Table t);

// One configured IO. Bit-table mappings have no IEC type (implicitly Bool)
// and width 1 bit; register mappings span type.register_width() registers.
struct IoMapping {
    std::string io_name;
    Table table = Table::coil;
    std::uint16_t offset = 0;
    std::optional<iec::IecType> type;
    std::uint16_t width = 1;
    std::string read_topic;
    std::string write_topic; // output tables only, empty otherwise
    std::string error_topic;

    bool operator==(const IoMapping&) const = default;
};

struct DeviceConfig {
    std::string name;
    std::string address;
    std::uint16_t port = 502;
    std::uint8_t unit = 0;
    double rate = 0.0; // polls per second
    iec::WordOrder word_order = iec::WordOrder::high_word_first;
    std::optional<std::uint16_t> max_read_count; // per-device split below protocol limits
    std::vector<IoMapping> mappings;

    bool operator==(const DeviceConfig&) const = default;
};

enum class Format { yaml, json };

DeviceConfig parse_config(const std::string& text, Format format);

// Format inferred from the extension unless given explicitly.
DeviceConfig load_config_file(const std::string& path, std::optional<Format> format = std::nullopt);

// Canonical JSON form; parsing it again yields the same model.
std::string serialize(const DeviceConfig& cfg);

// Modicon 1-based numbering: bare numbers (<= 9999) address the entry's own
// table, prefixed forms 1xxxx/3xxxx/4xxxx and 1xxxxx/3xxxxx/4xxxxx must match
// the table they appear under.
std::uint16_t resolve_address(Table table, std::int64_t number);

} // namespace mbgw::config
