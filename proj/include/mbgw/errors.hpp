#pragma once

#include <stdexcept>
#include <string>

namespace mbgw {

enum class Errc {
    // wire protocol
    count_out_of_range,
    address_overflow,
    empty_payload,
    malformed_frame,
    unknown_function,
    // codec
    width_mismatch,
    type_mismatch,
    text_too_long,
    // config
    syntax_error,
    unknown_type,
    duplicate_io_name,
    invalid_rate,
    invalid_address,
    wrong_table_prefix,
    offset_out_of_range,
    // planner
    overlapping_mappings,
    // bus / external protocol
    invalid_topic,
    malformed_line,
    unknown_topic,
    // device client
    write_to_input,
    transport_error,
    timeout,
    // bench
    scenario_underrun,
};

const char* to_string(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}
    explicit Error(Errc code) : std::runtime_error(to_string(code)), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace mbgw
