#include "mbgw/errors.hpp"

namespace mbgw {

const char* to_string(Errc c) {
    switch (c) {
    case Errc::count_out_of_range: return "count out of range";
    case Errc::address_overflow: return "address overflow";
    case Errc::empty_payload: return "empty payload";
    case Errc::malformed_frame: return "malformed frame";
    case Errc::unknown_function: return "unknown function";
    case Errc::width_mismatch: return "width mismatch";
    case Errc::type_mismatch: return "type mismatch";
    case Errc::text_too_long: return "text too long";
    case Errc::syntax_error: return "syntax error";
    case Errc::unknown_type: return "unknown type";
    case Errc::duplicate_io_name: return "duplicate io name";
    case Errc::invalid_rate: return "invalid rate";
    case Errc::invalid_address: return "invalid address";
    case Errc::wrong_table_prefix: return "wrong table prefix";
    case Errc::offset_out_of_range: return "offset out of range";
    case Errc::overlapping_mappings: return "overlapping mappings";
    case Errc::invalid_topic: return "invalid topic";
    case Errc::malformed_line: return "malformed line";
    case Errc::unknown_topic: return "unknown topic";
    case Errc::write_to_input: return "write to input";
    case Errc::transport_error: return "transport error";
    case Errc::timeout: return "timeout";
    case Errc::scenario_underrun: return "scenario underrun";
    }
    return "unknown error";
}

} // namespace mbgw
