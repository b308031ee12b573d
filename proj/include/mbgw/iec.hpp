#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mbgw/errors.hpp"
#include "mbgw/value.hpp"

namespace mbgw::iec {

enum class Kind {
    Byte, Word, Dword, Lword,      // bit fields -> BoolArray
    Sint, Int, Dint, Lint,         // signed integers
    Usint, Uint, Udint, Ulint,     // unsigned integers
    Real, Lreal,                   // IEEE 754
    Char, String,                  // characters
};

// Ordering of 16-bit registers within a multi-register value. Bytes within a
// register are always big-endian (Modbus convention). STRING always packs
// registers in character order, so word order does not apply to it.
enum class WordOrder { high_word_first, low_word_first };

struct IecType {
    Kind kind = Kind::Int;
    std::uint16_t capacity = 0; // STRING character capacity, unused otherwise

    static IecType string(std::uint16_t chars) { return {Kind::String, chars}; }

    std::uint16_t register_width() const;
    bool is_multi_register() const { return register_width() > 1; }
    const char* name() const;

    bool operator==(const IecType&) const = default;
};

// Maps a type name from the config ("LREAL", "STRING", ...) to its kind.
std::optional<Kind> kind_from_name(std::string_view name);

IoValue decode_registers(const IecType& t, std::span<const std::uint16_t> words, WordOrder order);
std::vector<std::uint16_t> encode_registers(const IecType& t, const IoValue& v, WordOrder order);

// Coil/discrete-input packing, LSB-first within each byte.
std::vector<bool> decode_bits(std::span<const std::uint8_t> packed, std::size_t count);
std::vector<std::uint8_t> encode_bits(const std::vector<bool>& bits);

} // namespace mbgw::iec
