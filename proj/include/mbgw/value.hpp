#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

namespace mbgw {

using BoolArray = std::vector<bool>;

// Typed value crossing the codec <-> bus boundary. char, signed char and
// unsigned char are distinct types, so Char/Int8/UInt8 keep separate tags.
using IoValue = std::variant<bool, BoolArray, std::int8_t, std::int16_t, std::int32_t, std::int64_t,
                             std::uint8_t, std::uint16_t, std::uint32_t, std::uint64_t, float, double,
                             char, std::string>;

const char* tag_name(const IoValue& v);

// operator== on the variant treats NaN != NaN; this compares float payloads bitwise.
bool bit_identical(const IoValue& a, const IoValue& b);

} // namespace mbgw
