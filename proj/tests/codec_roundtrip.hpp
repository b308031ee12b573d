#pragma once

#include "mbgw/iec.hpp"
#include "mbgw/value.hpp"

#include <chrono>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace roundtrip {

struct Stats {
    std::size_t cases = 0;
    std::size_t failures = 0;
    double seconds = 0.0;
    std::string first_failure;
};

// Randomized encode/decode round trips for every IEC type under both word
// orders. Floats are drawn as raw bit patterns, so NaNs (quiet and
// signaling payloads), infinities and denormals all appear; strings cycle
// through several capacities and regularly hit maximum length.
inline Stats run_codec_round_trips(std::size_t cases_per_type, std::uint32_t seed = 20260815) {
    using namespace mbgw;
    using iec::IecType;
    using iec::Kind;

    std::mt19937_64 rng(seed);
    const auto t0 = std::chrono::steady_clock::now();

    static const Kind kinds[] = {Kind::Byte,  Kind::Word,  Kind::Dword, Kind::Lword,
                                 Kind::Sint,  Kind::Int,   Kind::Dint,  Kind::Lint,
                                 Kind::Usint, Kind::Uint,  Kind::Udint, Kind::Ulint,
                                 Kind::Real,  Kind::Lreal, Kind::Char,  Kind::String};
    static const std::uint16_t string_caps[] = {1, 2, 5, 8, 32, 250};

    Stats stats;
    for (Kind kind : kinds) {
        for (std::size_t i = 0; i < cases_per_type; ++i) {
            IecType t{kind, 0};
            IoValue value;
            const std::uint64_t r = rng();
            switch (kind) {
            case Kind::Byte: case Kind::Word: case Kind::Dword: case Kind::Lword: {
                const std::size_t n = kind == Kind::Byte    ? 8
                                      : kind == Kind::Word  ? 16
                                      : kind == Kind::Dword ? 32
                                                            : 64;
                BoolArray bits(n);
                for (std::size_t b = 0; b < n; ++b)
                    bits[b] = (r >> b) & 1;
                value = std::move(bits);
                break;
            }
            case Kind::Sint: value = static_cast<std::int8_t>(r); break;
            case Kind::Int: value = static_cast<std::int16_t>(r); break;
            case Kind::Dint: value = static_cast<std::int32_t>(r); break;
            case Kind::Lint: value = static_cast<std::int64_t>(r); break;
            case Kind::Usint: value = static_cast<std::uint8_t>(r); break;
            case Kind::Uint: value = static_cast<std::uint16_t>(r); break;
            case Kind::Udint: value = static_cast<std::uint32_t>(r); break;
            case Kind::Ulint: value = static_cast<std::uint64_t>(r); break;
            case Kind::Real:
                if (i % 100 == 0)
                    value = std::bit_cast<float>(0x7FC00000u | static_cast<std::uint32_t>(r & 0xFFFF));
                else
                    value = std::bit_cast<float>(static_cast<std::uint32_t>(r));
                break;
            case Kind::Lreal:
                if (i % 100 == 0)
                    value = std::bit_cast<double>(0x7FF8000000000000ull | (r & 0xFFFFFFFFull));
                else
                    value = std::bit_cast<double>(r);
                break;
            case Kind::Char: value = static_cast<char>(r & 0xFF); break;
            case Kind::String: {
                t.capacity = string_caps[i % std::size(string_caps)];
                const std::size_t len =
                    i % 10 == 0 ? t.capacity : static_cast<std::size_t>(r % (t.capacity + 1));
                std::string s;
                s.reserve(len);
                for (std::size_t c = 0; c < len; ++c)
                    s.push_back(static_cast<char>(1 + rng() % 255)); // no NULs
                value = std::move(s);
                break;
            }
            }

            for (iec::WordOrder order :
                 {iec::WordOrder::high_word_first, iec::WordOrder::low_word_first}) {
                ++stats.cases;
                try {
                    const auto words = iec::encode_registers(t, value, order);
                    if (words.size() != t.register_width())
                        throw Error(Errc::width_mismatch, "encoded width off");
                    const IoValue back = iec::decode_registers(t, words, order);
                    if (!bit_identical(back, value)) {
                        ++stats.failures;
                        if (stats.first_failure.empty())
                            stats.first_failure = std::string(t.name()) + " value corrupted";
                    }
                } catch (const Error& e) {
                    ++stats.failures;
                    if (stats.first_failure.empty())
                        stats.first_failure = std::string(t.name()) + ": " + e.what();
                }
            }
        }
    }
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return stats;
}

} // namespace roundtrip
