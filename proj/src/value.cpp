#include "mbgw/value.hpp"

#include <bit>

namespace mbgw {

const char* tag_name(const IoValue& v) {
    struct Namer {
        const char* operator()(bool) const { return "Bool"; }
        const char* operator()(const BoolArray&) const { return "BoolArray"; }
        const char* operator()(std::int8_t) const { return "Int8"; }
        const char* operator()(std::int16_t) const { return "Int16"; }
        const char* operator()(std::int32_t) const { return "Int32"; }
        const char* operator()(std::int64_t) const { return "Int64"; }
        const char* operator()(std::uint8_t) const { return "UInt8"; }
        const char* operator()(std::uint16_t) const { return "UInt16"; }
        const char* operator()(std::uint32_t) const { return "UInt32"; }
        const char* operator()(std::uint64_t) const { return "UInt64"; }
        const char* operator()(float) const { return "Float32"; }
        const char* operator()(double) const { return "Float64"; }
        const char* operator()(char) const { return "Char"; }
        const char* operator()(const std::string&) const { return "Text"; }
    };
    return std::visit(Namer{}, v);
}

bool bit_identical(const IoValue& a, const IoValue& b) {
    if (a.index() != b.index()) return false;
    if (const auto* fa = std::get_if<float>(&a))
        return std::bit_cast<std::uint32_t>(*fa) == std::bit_cast<std::uint32_t>(std::get<float>(b));
    if (const auto* da = std::get_if<double>(&a))
        return std::bit_cast<std::uint64_t>(*da) == std::bit_cast<std::uint64_t>(std::get<double>(b));
    return a == b;
}

} // namespace mbgw
