#include "mbgw/iec.hpp"

#include <algorithm>
#include <bit>

namespace mbgw::iec {

namespace {

std::uint64_t assemble(std::span<const std::uint16_t> words, WordOrder order) {
    std::uint64_t v = 0;
    if (order == WordOrder::high_word_first) {
        for (std::uint16_t w : words) v = (v << 16) | w;
    } else {
        for (auto it = words.rbegin(); it != words.rend(); ++it) v = (v << 16) | *it;
    }
    return v;
}

std::vector<std::uint16_t> split(std::uint64_t v, std::uint16_t width, WordOrder order) {
    std::vector<std::uint16_t> words(width);
    for (std::uint16_t i = 0; i < width; ++i)
        words[width - 1 - i] = static_cast<std::uint16_t>((v >> (16 * i)) & 0xFFFF);
    if (order == WordOrder::low_word_first) std::reverse(words.begin(), words.end());
    return words;
}

BoolArray to_bits(std::uint64_t v, std::size_t n) {
    BoolArray bits(n);
    for (std::size_t i = 0; i < n; ++i) bits[i] = (v >> i) & 1;
    return bits;
}

std::uint64_t from_bits(const BoolArray& bits) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) v |= std::uint64_t{1} << i;
    return v;
}

[[noreturn]] void tag_error(const IecType& t, const IoValue& v) {
    throw Error(Errc::type_mismatch,
                std::string(tag_name(v)) + " value does not match IEC type " + t.name());
}

template <typename T>
const T& expect(const IecType& t, const IoValue& v) {
    if (const T* p = std::get_if<T>(&v)) return *p;
    tag_error(t, v);
}

} // namespace

std::uint16_t IecType::register_width() const {
    switch (kind) {
    case Kind::Byte:
    case Kind::Word:
    case Kind::Sint:
    case Kind::Int:
    case Kind::Usint:
    case Kind::Uint:
    case Kind::Char:
        return 1;
    case Kind::Dword:
    case Kind::Dint:
    case Kind::Udint:
    case Kind::Real:
        return 2;
    case Kind::Lword:
    case Kind::Lint:
    case Kind::Ulint:
    case Kind::Lreal:
        return 4;
    case Kind::String:
        return static_cast<std::uint16_t>((capacity + 1) / 2);
    }
    return 0;
}

const char* IecType::name() const {
    switch (kind) {
    case Kind::Byte: return "BYTE";
    case Kind::Word: return "WORD";
    case Kind::Dword: return "DWORD";
    case Kind::Lword: return "LWORD";
    case Kind::Sint: return "SINT";
    case Kind::Int: return "INT";
    case Kind::Dint: return "DINT";
    case Kind::Lint: return "LINT";
    case Kind::Usint: return "USINT";
    case Kind::Uint: return "UINT";
    case Kind::Udint: return "UDINT";
    case Kind::Ulint: return "ULINT";
    case Kind::Real: return "REAL";
    case Kind::Lreal: return "LREAL";
    case Kind::Char: return "CHAR";
    case Kind::String: return "STRING";
    }
    return "?";
}

std::optional<Kind> kind_from_name(std::string_view name) {
    if (name == "BYTE") return Kind::Byte;
    if (name == "WORD") return Kind::Word;
    if (name == "DWORD") return Kind::Dword;
    if (name == "LWORD") return Kind::Lword;
    if (name == "SINT") return Kind::Sint;
    if (name == "INT") return Kind::Int;
    if (name == "DINT") return Kind::Dint;
    if (name == "LINT") return Kind::Lint;
    if (name == "USINT") return Kind::Usint;
    if (name == "UINT") return Kind::Uint;
    if (name == "UDINT") return Kind::Udint;
    if (name == "ULINT") return Kind::Ulint;
    if (name == "REAL") return Kind::Real;
    if (name == "LREAL") return Kind::Lreal;
    if (name == "CHAR") return Kind::Char;
    if (name == "STRING") return Kind::String;
    return std::nullopt;
}

IoValue decode_registers(const IecType& t, std::span<const std::uint16_t> words, WordOrder order) {
    if (words.size() != t.register_width())
        throw Error(Errc::width_mismatch, std::string(t.name()) + " needs " +
                                              std::to_string(t.register_width()) + " registers, got " +
                                              std::to_string(words.size()));
    switch (t.kind) {
    case Kind::Byte: return to_bits(words[0] & 0xFF, 8);
    case Kind::Word: return to_bits(words[0], 16);
    case Kind::Dword: return to_bits(assemble(words, order), 32);
    case Kind::Lword: return to_bits(assemble(words, order), 64);
    case Kind::Sint: return static_cast<std::int8_t>(words[0] & 0xFF);
    case Kind::Int: return static_cast<std::int16_t>(words[0]);
    case Kind::Dint: return static_cast<std::int32_t>(assemble(words, order));
    case Kind::Lint: return static_cast<std::int64_t>(assemble(words, order));
    case Kind::Usint: return static_cast<std::uint8_t>(words[0] & 0xFF);
    case Kind::Uint: return words[0];
    case Kind::Udint: return static_cast<std::uint32_t>(assemble(words, order));
    case Kind::Ulint: return assemble(words, order);
    case Kind::Real: return std::bit_cast<float>(static_cast<std::uint32_t>(assemble(words, order)));
    case Kind::Lreal: return std::bit_cast<double>(assemble(words, order));
    case Kind::Char: return static_cast<char>(words[0] & 0xFF);
    case Kind::String: {
        std::string text;
        text.reserve(t.capacity);
        for (std::uint16_t i = 0; i < t.capacity; ++i) {
            const std::uint16_t w = words[i / 2];
            const char c = static_cast<char>(i % 2 == 0 ? (w >> 8) : (w & 0xFF));
            if (c == '\0') break;
            text.push_back(c);
        }
        return text;
    }
    }
    throw Error(Errc::unknown_type, "unhandled IEC kind");
}

std::vector<std::uint16_t> encode_registers(const IecType& t, const IoValue& v, WordOrder order) {
    const std::uint16_t width = t.register_width();
    switch (t.kind) {
    case Kind::Byte:
    case Kind::Word:
    case Kind::Dword:
    case Kind::Lword: {
        const auto& bits = expect<BoolArray>(t, v);
        const std::size_t expected = t.kind == Kind::Byte    ? 8
                                     : t.kind == Kind::Word  ? 16
                                     : t.kind == Kind::Dword ? 32
                                                             : 64;
        if (bits.size() != expected)
            throw Error(Errc::type_mismatch, t.name() + std::string(" expects a BoolArray of ") +
                                                 std::to_string(expected) + " bits");
        return split(from_bits(bits), width, order);
    }
    case Kind::Sint:
        return split(static_cast<std::uint8_t>(expect<std::int8_t>(t, v)), width, order);
    case Kind::Int:
        return split(static_cast<std::uint16_t>(expect<std::int16_t>(t, v)), width, order);
    case Kind::Dint:
        return split(static_cast<std::uint32_t>(expect<std::int32_t>(t, v)), width, order);
    case Kind::Lint:
        return split(static_cast<std::uint64_t>(expect<std::int64_t>(t, v)), width, order);
    case Kind::Usint:
        return split(expect<std::uint8_t>(t, v), width, order);
    case Kind::Uint:
        return split(expect<std::uint16_t>(t, v), width, order);
    case Kind::Udint:
        return split(expect<std::uint32_t>(t, v), width, order);
    case Kind::Ulint:
        return split(expect<std::uint64_t>(t, v), width, order);
    case Kind::Real:
        return split(std::bit_cast<std::uint32_t>(expect<float>(t, v)), width, order);
    case Kind::Lreal:
        return split(std::bit_cast<std::uint64_t>(expect<double>(t, v)), width, order);
    case Kind::Char:
        return split(static_cast<std::uint8_t>(expect<char>(t, v)), width, order);
    case Kind::String: {
        const auto& text = expect<std::string>(t, v);
        if (text.size() > t.capacity)
            throw Error(Errc::text_too_long, std::to_string(text.size()) + " chars exceed STRING(" +
                                                 std::to_string(t.capacity) + ")");
        // Two chars per register, high byte first, NUL padded.
        std::vector<std::uint16_t> words(width, 0);
        for (std::size_t i = 0; i < text.size(); ++i) {
            const auto b = static_cast<std::uint8_t>(text[i]);
            if (i % 2 == 0)
                words[i / 2] |= static_cast<std::uint16_t>(b << 8);
            else
                words[i / 2] |= b;
        }
        return words;
    }
    }
    throw Error(Errc::unknown_type, "unhandled IEC kind");
}

std::vector<bool> decode_bits(std::span<const std::uint8_t> packed, std::size_t count) {
    if (packed.size() != (count + 7) / 8)
        throw Error(Errc::width_mismatch, std::to_string(count) + " bits need " +
                                              std::to_string((count + 7) / 8) + " bytes, got " +
                                              std::to_string(packed.size()));
    std::vector<bool> bits(count);
    for (std::size_t i = 0; i < count; ++i) bits[i] = (packed[i / 8] >> (i % 8)) & 1;
    return bits;
}

std::vector<std::uint8_t> encode_bits(const std::vector<bool>& bits) {
    std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    return packed;
}

} // namespace mbgw::iec
